import json

import numpy as np
import pytest
from scipy import signal

from seqclf.audio import read_wav
from seqclf.errors import ConfigurationError, DataError, FormatError
from seqclf.synth import (
    APPLICABLE,
    LABELS,
    MANIFEST_FIELDS,
    CorpusSpec,
    SpeakerProfile,
    TaskKind,
    analyze,
    gen_corpus,
    inject_attribute,
    label_matrix,
    manifest_digest,
    new_take,
    plan_corpus,
    read_manifest,
    render,
    render_base,
    speaker_disjoint_split,
    verify_attribute,
)
from seqclf.synth.corpus import check_disjoint, write_manifest
from seqclf.synth.render import BASE_RATE_HZ

SR = 16000


# test-side measurements, deliberately independent of seqclf.synth.analysis


def frame_power_db(x, win=0.02, hop=0.01):
    w, h = int(win * SR), int(hop * SR)
    n = 1 + (len(x) - w) // h
    frames = np.stack([x[i * h:i * h + w] for i in range(n)])
    return 10 * np.log10(np.mean(frames**2, axis=1) + 1e-12)


def peak_count(x):
    env = frame_power_db(x)
    peaks, _ = signal.find_peaks(env, prominence=10, distance=8)
    return len(peaks)


def rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def profile(i):
    return SpeakerProfile.from_id(f"test-speaker-{i}")


class TestLabels:
    def test_fourteen_labels_in_order(self):
        assert len(LABELS) == 14
        assert LABELS == tuple(sorted(LABELS))

    def test_vp_never_carries_syllable_labels(self):
        for name in ("rapid_rate", "slow_rate", "syllable_segmentation", "irregular_articulatory_breakdowns",
                     "distortions"):
            assert name not in APPLICABLE[TaskKind.VP]

    def test_breathy_and_strained_shared(self):
        for name in ("breathy", "strained"):
            assert all(name in APPLICABLE[t] for t in TaskKind)

    def test_task_parse(self):
        assert TaskKind.parse("amr") is TaskKind.AMR
        assert TaskKind.parse(TaskKind.SMR) is TaskKind.SMR
        with pytest.raises(ConfigurationError):
            TaskKind.parse("DDK")


class TestRenderBase:
    def test_profile_is_function_of_id(self):
        assert SpeakerProfile.from_id("abc") == SpeakerProfile.from_id("abc")
        assert SpeakerProfile.from_id("abc") != SpeakerProfile.from_id("abd")
        for i in range(50):
            assert 80 <= profile(i).base_f0_hz <= 250

    @pytest.mark.parametrize("task", list(TaskKind))
    def test_deterministic(self, task):
        a = render_base(task, profile(1), 5.0, 42).samples
        b = render_base(task, profile(1), 5.0, 42).samples
        assert a.tobytes() == b.tobytes()
        assert render_base(task, profile(1), 5.0, 43).samples.tobytes() != a.tobytes()

    @pytest.mark.parametrize("task,dur", [("VP", 3.9), ("VP", 12.1), ("AMR", 10.5), ("SMR", 3.0)])
    def test_duration_bounds(self, task, dur):
        with pytest.raises(ConfigurationError):
            new_take(task, profile(0), dur, 0)

    @pytest.mark.parametrize("i", range(6))
    def test_vp_sustained_voicing(self, i):
        x = render_base("VP", profile(i), 4.0 + i, i).samples
        # skip the onset/offset ramps
        r = np.sqrt(10 ** (frame_power_db(x, win=0.025)[10:-10] / 10))
        assert r.std() / r.mean() < 0.2

    @pytest.mark.parametrize("i,task", [(i, t) for i in range(4) for t in ("AMR", "SMR")])
    def test_syllable_count_matches_rate(self, i, task):
        p = profile(i)
        dur = 4.5 + 1.3 * i
        x = render_base(task, p, dur, i).samples
        expected = BASE_RATE_HZ[TaskKind(task)] * p.rate_factor * dur
        assert abs(peak_count(x) - expected) <= 1

    def test_smr_burst_spectra_alternate(self):
        from seqclf.synth.render import syllable_layout
        take = new_take("SMR", profile(3), 6.0, 3)
        kinds = [k for _, _, k in syllable_layout(take)]
        assert kinds[:6] == [0, 1, 2, 0, 1, 2]


class TestInjection:
    def test_loudness_decay_ratio(self):
        for i in range(3):
            take = inject_attribute(new_take("VP", profile(i), 6.0, i), "loudness_decay", i)
            x = render(take).samples
            assert rms(x[-SR:]) / rms(x[:SR]) <= 0.5

    def test_loudness_decay_on_amr(self):
        take = inject_attribute(new_take("AMR", profile(2), 6.0, 2), "loudness_decay", 2)
        x = render(take).samples
        assert rms(x[-SR:]) / rms(x[:SR]) <= 0.5

    @pytest.mark.parametrize("i", range(3))
    def test_tremor_envelope_peak(self, i):
        take = inject_attribute(new_take("VP", profile(i), 8.0, i), "tremor", 10 + i)
        env = frame_power_db(render(take).samples)[20:-20]
        env = signal.detrend(env)
        power = np.abs(np.fft.rfft(env * np.hanning(env.size))) ** 2
        f = np.fft.rfftfreq(env.size, 0.01)
        band = (f >= 4) & (f <= 7)
        ref = (f >= 0.5) & (f <= 20)
        assert power[band].max() >= 3 * np.median(power[ref])

    @pytest.mark.parametrize("i", range(3))
    def test_slow_rate_amr(self, i):
        base = new_take("AMR", profile(i), 8.0, i)
        slow = inject_attribute(base, "slow_rate", i)
        assert peak_count(render(slow).samples) <= 0.7 * peak_count(render(base).samples)

    def test_rapid_rate_amr(self):
        base = new_take("AMR", profile(5), 6.0, 5)
        fast = inject_attribute(base, "rapid_rate", 5)
        assert peak_count(render(fast).samples) >= 1.3 * peak_count(render(base).samples)

    def test_inapplicable_pair_raises(self):
        take = new_take("VP", profile(0), 5.0, 0)
        with pytest.raises(ConfigurationError):
            inject_attribute(take, "syllable_segmentation", 0)
        with pytest.raises(ConfigurationError):
            inject_attribute(new_take("AMR", profile(0), 5.0, 0), "tremor", 0)

    def test_rate_labels_exclusive(self):
        take = inject_attribute(new_take("AMR", profile(0), 5.0, 0), "rapid_rate", 0)
        with pytest.raises(ConfigurationError):
            inject_attribute(take, "slow_rate", 0)

    def test_unknown_attribute(self):
        with pytest.raises(ConfigurationError):
            inject_attribute(new_take("VP", profile(0), 5.0, 0), "nasal", 0)

    def test_injection_is_pure(self):
        take = new_take("VP", profile(0), 5.0, 0)
        inject_attribute(take, "tremor", 0)
        assert take.effects == {}


class TestVerifyAttribute:
    @pytest.mark.parametrize("task", list(TaskKind))
    def test_clean_clip_all_false(self, task):
        w = render_base(task, profile(7), 6.0, 7)
        assert not any(verify_attribute(w, a, task) for a in LABELS)

    def test_tremor_true_decay_false(self):
        take = inject_attribute(new_take("VP", profile(8), 7.0, 8), "tremor", 8)
        w = render(take)
        assert verify_attribute(w, "tremor", "VP")
        assert not verify_attribute(w, "loudness_decay", "VP")

    def test_inapplicable_reports_false(self):
        take = inject_attribute(new_take("AMR", profile(8), 7.0, 8), "slow_rate", 8)
        w = render(take)
        assert verify_attribute(w, "slow_rate", "AMR")
        assert not verify_attribute(w, "slow_rate", "VP")

    @pytest.mark.parametrize("task", list(TaskKind))
    def test_every_single_attribute_detected_alone(self, task):
        for k, attr in enumerate(sorted(APPLICABLE[TaskKind(task)])):
            take = inject_attribute(new_take(task, profile(20 + k), 6.5, k), attr, 100 + k)
            got = analyze(render(take), task)
            assert {a for a, v in got.items() if v} == {attr}, attr

    def test_unknown_label(self):
        with pytest.raises(ConfigurationError):
            verify_attribute(render_base("VP", profile(0), 5.0, 0), "nasal", "VP")


class TestCorpus:
    def test_spec_validation(self):
        with pytest.raises(ConfigurationError):
            plan_corpus(CorpusSpec(num_speakers=2, prevalence=0.05))
        with pytest.raises(ConfigurationError):
            plan_corpus(CorpusSpec(num_speakers=2, prevalence={"tremor": 0.6}))
        with pytest.raises(ConfigurationError):
            plan_corpus(CorpusSpec(num_speakers=0))
        with pytest.raises(ConfigurationError):
            plan_corpus(CorpusSpec(num_speakers=2, task_mix={"VP": 0.0}))

    def test_prevalence_at_600(self):
        spec = CorpusSpec(num_speakers=150, recordings_per_speaker=4, prevalence=0.2, master_seed=3)
        rows = [row for _, row in plan_corpus(spec)]
        assert len(rows) == 600
        y, mask = label_matrix(rows)
        for j, name in enumerate(LABELS):
            rate = y[mask[:, j], j].mean()
            assert abs(rate - 0.2) <= 0.05, name

    def test_per_label_prevalence(self):
        spec = CorpusSpec(num_speakers=150, prevalence={"breathy": 0.5}, master_seed=1)
        y, mask = label_matrix([row for _, row in plan_corpus(spec)])
        j = LABELS.index("breathy")
        assert abs(y[:, j].mean() - 0.5) <= 0.05

    def test_applicability_and_exclusivity(self):
        rows = [row for _, row in plan_corpus(CorpusSpec(num_speakers=100, prevalence=0.5, master_seed=2))]
        for r in rows:
            allowed = APPLICABLE[TaskKind(r["task"])]
            assert all(r[n] == 0 for n in LABELS if n not in allowed)
            assert not (r["rapid_rate"] and r["slow_rate"])

    def test_task_mix_roughly_equal(self):
        rows = [row for _, row in plan_corpus(CorpusSpec(master_seed=0))]
        counts = {t.value: sum(r["task"] == t.value for r in rows) for t in TaskKind}
        assert all(abs(c / 600 - 1 / 3) < 0.06 for c in counts.values())

    def test_no_duplicate_ids_and_field_order(self):
        rows = [row for _, row in plan_corpus(CorpusSpec(num_speakers=40))]
        assert len({r["id"] for r in rows}) == len(rows)
        assert all(tuple(r) == MANIFEST_FIELDS for r in rows)

    def test_digest_is_function_of_spec(self):
        a = [row for _, row in plan_corpus(CorpusSpec(num_speakers=20, master_seed=5))]
        b = [row for _, row in plan_corpus(CorpusSpec(num_speakers=20, master_seed=5))]
        c = [row for _, row in plan_corpus(CorpusSpec(num_speakers=20, master_seed=6))]
        assert manifest_digest(a) == manifest_digest(b) != manifest_digest(c)

    def test_durations_in_bounds(self):
        for take, row in plan_corpus(CorpusSpec(num_speakers=30)):
            lo, hi = {"VP": (4, 12), "AMR": (4, 10), "SMR": (4, 10)}[row["task"]]
            assert lo <= row["duration_s"] <= hi
            assert take.labels == {n for n in LABELS if row[n]}

    def test_gen_corpus_files(self, tmp_path):
        spec = CorpusSpec(num_speakers=3, recordings_per_speaker=2, master_seed=9)
        rows = gen_corpus(spec, tmp_path)
        assert read_manifest(tmp_path / "manifest.jsonl") == rows
        info = json.loads((tmp_path / "corpus.json").read_text())
        assert info["manifest_digest"] == manifest_digest(rows)
        for r in rows:
            w = read_wav(tmp_path / r["path"])
            assert w.sample_rate_hz == SR
            assert abs(w.duration_s - r["duration_s"]) < 1e-3
        again = tmp_path / "again"
        gen_corpus(spec, again)
        for r in rows:
            assert (again / r["path"]).read_bytes() == (tmp_path / r["path"]).read_bytes()

    def test_gen_corpus_labels_sound(self, tmp_path):
        rows = gen_corpus(CorpusSpec(num_speakers=4, recordings_per_speaker=3, prevalence=0.5, master_seed=4), tmp_path)
        for r in rows:
            got = analyze(read_wav(tmp_path / r["path"]), r["task"])
            assert got == {n: bool(r[n]) for n in LABELS}, r["id"]


class TestManifestFormat:
    def rows(self):
        return [row for _, row in plan_corpus(CorpusSpec(num_speakers=2, recordings_per_speaker=2))]

    def test_round_trip_bytes(self, tmp_path):
        rows = self.rows()
        write_manifest(tmp_path / "m.jsonl", rows)
        first = (tmp_path / "m.jsonl").read_bytes()
        write_manifest(tmp_path / "n.jsonl", read_manifest(tmp_path / "m.jsonl"))
        assert (tmp_path / "n.jsonl").read_bytes() == first

    def test_malformed_line(self, tmp_path):
        p = tmp_path / "m.jsonl"
        p.write_text('{"id": 1\n')
        with pytest.raises(FormatError):
            read_manifest(p)

    def test_wrong_field_order(self, tmp_path):
        row = dict(reversed(list(self.rows()[0].items())))
        p = tmp_path / "m.jsonl"
        p.write_text(json.dumps(row) + "\n")
        with pytest.raises(FormatError):
            read_manifest(p)

    def test_inapplicable_label_rejected(self, tmp_path):
        rows = self.rows()
        vp = dict(rows[0], task="VP", slow_rate=1)
        p = tmp_path / "m.jsonl"
        p.write_text(json.dumps(vp) + "\n")
        with pytest.raises(FormatError):
            read_manifest(p)

    def test_duplicate_id_rejected(self, tmp_path):
        row = self.rows()[0]
        p = tmp_path / "m.jsonl"
        p.write_text((json.dumps(row) + "\n") * 2)
        with pytest.raises(FormatError):
            read_manifest(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FormatError):
            read_manifest(tmp_path / "absent.jsonl")


class TestSplit:
    def rows(self, speakers, per=4):
        return [row for _, row in plan_corpus(CorpusSpec(num_speakers=speakers, recordings_per_speaker=per))]

    def test_ten_speakers(self):
        rows = self.rows(10)
        for seed in range(5):
            tr, te = speaker_disjoint_split(rows, 0.8, seed)
            spk = {r["id"]: r["speaker_id"] for r in rows}
            assert len({spk[i] for i in tr}) == 8
            assert len({spk[i] for i in te}) == 2
            assert not check_disjoint(rows, tr, te)

    def test_same_seed_same_split(self):
        rows = self.rows(20)
        assert speaker_disjoint_split(rows, 0.8, 3) == speaker_disjoint_split(rows, 0.8, 3)
        assert speaker_disjoint_split(rows, 0.8, 3) != speaker_disjoint_split(rows, 0.8, 4)

    @pytest.mark.parametrize("seed", range(6))
    def test_exhaustive_disjointness(self, seed):
        rows = self.rows(150)
        tr, te = speaker_disjoint_split(rows, 0.8, seed)
        assert sorted(tr + te) == sorted(r["id"] for r in rows)
        side = {i: "train" for i in tr} | {i: "test" for i in te}
        by_speaker = {}
        for r in rows:
            by_speaker.setdefault(r["speaker_id"], set()).add(side[r["id"]])
        assert all(len(s) == 1 for s in by_speaker.values())
        assert abs(len(tr) / len(rows) - 0.8) <= 0.05

    def test_uneven_speakers_fraction(self):
        rows = self.rows(30, per=1) + self.rows(5, per=7)
        rows = [dict(r, id=f"{k}-{r['id']}") for k, r in enumerate(rows)]
        tr, te = speaker_disjoint_split(rows, 0.8, 0)
        assert abs(len(tr) / len(rows) - 0.8) <= 0.05
        assert not check_disjoint(rows, tr, te)

    def test_too_few_speakers(self):
        with pytest.raises(DataError):
            speaker_disjoint_split(self.rows(1), 0.8, 0)

    def test_bad_fraction(self):
        with pytest.raises(ConfigurationError):
            speaker_disjoint_split(self.rows(4), 1.0, 0)

    def test_detects_leak(self):
        rows = self.rows(4)
        tr, te = speaker_disjoint_split(rows, 0.5, 0)
        assert check_disjoint(rows, tr + te[:1], te)
