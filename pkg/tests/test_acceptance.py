"""Acceptance suite.

Each test records one PASS/FAIL line (shown in the terminal summary) and then
asserts the same condition.  The corpus-scale checks share one generated
600-recording corpus.
"""

import time

import numpy as np
import pytest

from oracles import closed_form_tiny, naive_dft_power
from seqclf import nn
from seqclf.audio import frame_signal, hz_to_mel, num_frames, power_spectrum, read_wav
from seqclf.embeddings import EmbeddingSequence, decode_embeddings, encode_embeddings, read_embeddings, write_embeddings
from seqclf.errors import SeqClfError
from seqclf.harness import experiments
from seqclf.harness.config import TrainConfig
from seqclf.harness.data import Corpus, featurize
from seqclf.models import (
    ARCHITECTURES,
    ModelConfig,
    bce_loss,
    build_model,
    decode_checkpoint,
    load_checkpoint,
    save_checkpoint,
)
from seqclf.synth import CorpusSpec, TaskKind, analyze, gen_corpus, speaker_disjoint_split, verify_attribute
from seqclf.synth.labels import APPLICABLE

SPLIT_SEEDS = range(6)


def grad_config(arch, seed):
    return ModelConfig(architecture=arch, input_dim=4, num_classes=3, latents_per_class=2, latent_dim=32,
                       model_dim=32, heads=2, reduce_dim=4, shared_latents=6, mlp_ratio=1,
                       task_conditioning="embedding", seed=seed)


@pytest.fixture(scope="module")
def corpus600(tmp_path_factory):
    t0 = time.perf_counter()
    root = tmp_path_factory.mktemp("bench")
    gen_corpus(CorpusSpec(num_speakers=150, recordings_per_speaker=4, master_seed=0), root)
    c = Corpus(root)
    featurize(c)
    return c, time.perf_counter() - t0


# model properties


def test_gradient_correctness(acceptance):
    t0 = time.perf_counter()
    worst, failed = 0.0, []
    with nn.precision(np.float64):
        for arch in ARCHITECTURES:
            for seed in range(3):
                m = build_model(grad_config(arch, seed))
                rng = np.random.default_rng(100 + seed)
                x = rng.normal(size=(2, 7, 4))
                mask = np.ones((2, 7), bool)
                mask[1, 4:] = False
                y = (rng.random((2, 3)) < 0.5).astype(float)
                rep = nn.finite_diff_gradcheck(lambda: bce_loss(m(x, mask, [0, 2]), y), m.named_parameters())
                worst = max(worst, rep.max_error)
                failed += [f"{arch}/{seed}/{k}" for k in rep.failures]
    elapsed = time.perf_counter() - t0
    ok = not failed and worst < 1e-4 and elapsed < 120
    acceptance("gradient correctness (3 architectures x 3 seeds)", ok,
               f"max rel err {worst:.2e}, {elapsed:.0f}s{', failed ' + str(failed[:3]) if failed else ''}")
    assert ok


def test_class_isolation(acceptance):
    worst = 0.0
    with nn.precision(np.float64):
        m = build_model(ModelConfig(input_dim=6, num_classes=5, latents_per_class=3, latent_dim=16, model_dim=16,
                                    heads=2, reduce_dim=4))
        rng = np.random.default_rng(0)
        for _ in range(3):
            x = rng.normal(size=(int(rng.integers(3, 12)), 6))
            for c in range(5):
                m.zero_grad()
                m(x)[c].backward()
                worst = max(worst, float(np.abs(np.delete(m.latents.grad, c, axis=0)).max()))
    ok = worst < 1e-8
    acceptance("class isolation", ok, f"max |d logit[c'] / d latents[c]| = {worst:.1e}")
    assert ok


def test_parameter_sharing_audit(acceptance):
    m = build_model(ModelConfig(num_classes=14, task_conditioning="embedding", num_tasks=3))
    params = m.named_parameters()
    class_axis = [k for k, p in params.items() if p.ndim >= 1 and p.shape[0] == 14]
    with_14 = [k for k, p in params.items() if 14 in p.shape]
    ok = class_axis == ["latents"] and with_14 == ["latents"] and params["latents"].ndim == 3
    acceptance("parameter-sharing audit", ok, f"class-indexed groups: {with_14}")
    assert ok


def test_masking_invariance(acceptance):
    worst = 0.0
    with nn.precision(np.float64):
        for arch in ARCHITECTURES:
            m = build_model(grad_config(arch, 0))
            rng = np.random.default_rng(1)
            for T in (1, 5, 13):
                x = rng.normal(size=(T, 4))
                padded = np.concatenate([x, rng.normal(size=(T, 4)) * 50])
                mask = np.arange(2 * T) < T
                worst = max(worst, float(np.abs(m(x, task_ids=1).data - m(padded, mask, 1).data).max()))
    ok = worst < 1e-6
    acceptance("masking invariance at 2x length", ok, f"max logit change {worst:.1e}")
    assert ok


def test_tiny_instance_oracle(acceptance):
    worst = 0.0
    with nn.precision(np.float64):
        m = build_model(ModelConfig(input_dim=5, num_classes=1, latents_per_class=1, latent_dim=8, model_dim=8,
                                    heads=1, reduce_dim=3, num_self_blocks=0, seed=3))
        rng = np.random.default_rng(9)
        m.b1.data[:] = rng.normal(size=3) * 0.1
        for _ in range(100):
            x = rng.normal(size=(int(rng.integers(1, 16)), 5))
            worst = max(worst, abs(float(m(x).data[0]) - closed_form_tiny(m, x)))
    ok = worst < 1e-6
    acceptance("tiny-instance closed-form oracle (100 inputs)", ok, f"max abs diff {worst:.1e}")
    assert ok


def test_dsp_oracles(acceptance):
    rng = np.random.default_rng(2)
    worst = 0.0
    for _ in range(5):
        frame = rng.normal(size=400)
        ref = naive_dft_power(frame, 512)
        worst = max(worst, float(np.abs(power_spectrum(frame, 512) - ref).max() / ref.max()))
    lengths = rng.integers(400, 80000, size=50)
    counts_ok = all(len(frame_signal(np.zeros(n), 400, 160)) == num_frames(n, 400, 160) == (n - 400) // 160 + 1
                    for n in lengths)
    mel = hz_to_mel(700.0)
    ok = worst < 1e-8 and counts_ok and abs(mel - 781.17) <= 0.01
    acceptance("DSP oracles", ok, f"DFT rel err {worst:.1e}, framing counts {'ok' if counts_ok else 'wrong'}, "
                                  f"mel(700)={mel:.3f}")
    assert ok


# corpus


def test_corpus_label_soundness(acceptance, tmp_path):
    rows = gen_corpus(CorpusSpec(num_speakers=50, recordings_per_speaker=4, master_seed=11), tmp_path)
    checked, wrong = 0, []
    for r in rows:
        task = TaskKind.parse(r["task"])
        w = read_wav(tmp_path / r["path"])
        # verify_attribute(w, k, task) is analyze(w, task)[k]; one analysis per recording
        found = analyze(w, task)
        for k in sorted(APPLICABLE[task]):
            checked += 1
            if found[k] != bool(r[k]):
                wrong.append((r["id"], k))
    first = rows[0]
    spot = all(verify_attribute(read_wav(tmp_path / first["path"]), k, first["task"]) == bool(first[k])
               for k in APPLICABLE[TaskKind.parse(first["task"])])
    leaks = []
    for s in SPLIT_SEEDS:
        tr, te = speaker_disjoint_split(rows, 0.8, s)
        spk = {r["id"]: r["speaker_id"] for r in rows}
        leaks.append(len({spk[i] for i in tr} & {spk[i] for i in te}))
    ok = len(rows) == 200 and not wrong and spot and not any(leaks)
    acceptance("corpus label soundness (200 recordings) and split disjointness (6 seeds)", ok,
               f"{checked - len(wrong)}/{checked} pairs agree; speaker overlap per seed {leaks}")
    assert ok, wrong[:10]


# synthetic benchmark


def test_end_to_end_benchmark(acceptance, corpus600):
    corpus, prep_s = corpus600
    t0 = time.perf_counter()
    rep, result, tr, te = experiments.run(TrainConfig(), corpus)
    elapsed = prep_s + time.perf_counter() - t0
    disjoint = not corpus.speakers(tr) & corpus.speakers(te)
    ok = rep.mean_accuracy >= 0.85 and disjoint and elapsed <= 30 * 60 and len(corpus.rows) == 600
    acceptance("end-to-end synthetic benchmark (class_latent, log-mel, mean accuracy >= 0.85)", ok,
               f"mean accuracy {rep.mean_accuracy:.4f}, pair accuracy {rep.pair_accuracy:.4f}, "
               f"{len(te)} test recordings, best epoch {result.best_epoch}, {elapsed:.0f}s")
    assert ok


def test_architecture_comparison(acceptance, corpus600):
    corpus, _ = corpus600
    r = experiments.compare_architectures(corpus, TrainConfig(), seeds=(0, 1, 2))
    rows = {x["architecture"]: x["mean_accuracy"] for x in r["rows"]}
    ok = sorted(rows) == sorted(ARCHITECTURES) and all(0 <= v <= 1 for v in rows.values())
    claim = r["directional_claim"]
    acceptance("architecture comparison emits all three rows", ok,
               ", ".join(f"{k} {v:.4f}" for k, v in rows.items())
               + f"; soft claim class_latent >= baselines on mean: {claim['class_latent_ge_baselines_on_mean']}, "
               f"majority of seeds: {claim['class_latent_wins_majority_of_seeds']}")
    assert ok


def test_seed_sweep_stability(acceptance, corpus600):
    corpus, _ = corpus600
    r = experiments.split_seed_sweep(corpus, TrainConfig(), seeds=SPLIT_SEEDS)
    accs = [x["mean_accuracy"] for x in r["rows"]]
    ok = len(accs) == 6 and all(x["speaker_overlap"] == 0 for x in r["rows"])
    acceptance("seed sweep (6 partition seeds complete, disjoint)", ok,
               f"accuracies {[round(a, 4) for a in accs]}, spread {r['spread']:.4f}")
    assert ok


def test_negative_control(acceptance, corpus600):
    corpus, _ = corpus600
    r = experiments.negative_control(corpus, TrainConfig())
    ok = abs(r["difference"]) <= 0.05
    acceptance("negative control (shuffled labels within 5 points of label prior)", ok,
               f"shuffled {r['shuffled_mean_accuracy']:.4f}, prior {r['prior_mean_accuracy']:.4f}")
    assert ok


# formats


def _typed_on_damage(blob, decode):
    """Every truncation and a spread of single-byte flips must raise a library error."""
    bad = []
    positions = sorted(set(np.linspace(0, len(blob) - 1, 97).astype(int)))
    variants = [blob[:n] for n in range(len(blob))]
    for p in positions:
        b = bytearray(blob)
        b[p] ^= 0x5A
        variants.append(bytes(b))
    for v in variants:
        try:
            decode(v)
        except SeqClfError:
            continue
        except Exception as exc:  # noqa: BLE001 - an untyped failure is what we are looking for
            bad.append(f"{type(exc).__name__}: {exc}")
            continue
        bad.append("accepted damaged bytes")
    return bad


def test_format_round_trips(acceptance, tmp_path):
    problems = []
    seq = EmbeddingSequence(np.random.default_rng(0).normal(size=(9, 1536)).astype(np.float32), 11, 40)
    write_embeddings(seq, tmp_path / "a.emb")
    back = read_embeddings(tmp_path / "a.emb")
    write_embeddings(back, tmp_path / "b.emb")
    if (tmp_path / "a.emb").read_bytes() != (tmp_path / "b.emb").read_bytes():
        problems.append("embedding rewrite differs")
    if back.frames.tobytes() != seq.frames.tobytes():
        problems.append("embedding frames differ")

    for arch in ARCHITECTURES:
        m = build_model(grad_config(arch, 1))
        save_checkpoint(tmp_path / "a.ckpt", m, {"norm": np.arange(4, dtype=np.float32)}, {"k": 1})
        m2, extras, meta = load_checkpoint(tmp_path / "a.ckpt")
        save_checkpoint(tmp_path / "b.ckpt", m2, extras, meta)
        if (tmp_path / "a.ckpt").read_bytes() != (tmp_path / "b.ckpt").read_bytes():
            problems.append(f"{arch} checkpoint rewrite differs")
        x = np.random.default_rng(2).normal(size=(6, 4)).astype(np.float32)
        if not np.array_equal(m(x, task_ids=1).data, m2(x, task_ids=1).data):
            problems.append(f"{arch} reloaded logits differ")

    small_seq = EmbeddingSequence(np.ones((3, 5), np.float32), 2)
    problems += ["emb " + p for p in _typed_on_damage(encode_embeddings(small_seq), decode_embeddings)]
    save_checkpoint(tmp_path / "c.ckpt", build_model(grad_config("class_latent", 0)), {}, {"k": 1})
    ckpt = (tmp_path / "c.ckpt").read_bytes()
    problems += ["ckpt " + p for p in _typed_on_damage(ckpt, decode_checkpoint)]
    ok = not problems
    acceptance("format round trips and typed errors on damage", ok,
               f"{len(problems)} problems" + (f": {problems[:3]}" if problems else ""))
    assert ok


# positional encodings


def test_positions_separate_decay_direction(acceptance):
    """Ramp-down vs ramp-up over the same frame multiset: learnable only with positional encodings."""
    rng = np.random.default_rng(0)

    def pair_batch(n):
        xs, ys = [], []
        for _ in range(n):
            T = int(rng.integers(8, 16))
            base = rng.normal(size=(1, 4)) * 0.3
            ramp = np.linspace(1.5, -1.5, T)[:, None] * np.array([[1.0, 0.5, 0.0, 0.0]]) + base
            xs += [ramp, ramp[::-1].copy()]
            ys += [[1.0], [0.0]]
        return xs, np.array(ys)

    def fit(use_positions):
        m = build_model(ModelConfig(input_dim=4, num_classes=1, latents_per_class=2, latent_dim=16, model_dim=16,
                                    heads=2, reduce_dim=4, use_positions=use_positions, seed=0))
        opt = nn.Adam(m.named_parameters(), lr=3e-3)
        for _ in range(150):
            xs, y = pair_batch(8)
            T = max(len(x) for x in xs)
            xb = np.zeros((len(xs), T, 4))
            mb = np.zeros((len(xs), T), bool)
            for i, x in enumerate(xs):
                xb[i, : len(x)], mb[i, : len(x)] = x, True
            opt.zero_grad()
            bce_loss(m(xb, mb), y).backward()
            opt.step()
        xs, y = pair_batch(50)
        pred = np.array([float(m(x).data[0]) >= 0 for x in xs])
        return float((pred == y[:, 0].astype(bool)).mean())

    with_pos, without = fit(True), fit(False)
    ok = with_pos >= 0.95 and without <= 0.6
    acceptance("positional encodings separate ramp-down from ramp-up (supplementary)", ok,
               f"accuracy with positions {with_pos:.2f}, without {without:.2f}")
    assert ok
