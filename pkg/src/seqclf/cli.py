"""``seqclf`` command line.

Every flag has a config-file key (the flag name with underscores) and an
environment override ``SEQCLF_<KEY>``.  Precedence: defaults < --config file
< environment < flags.  The effective configuration is printed first.

Exit codes: 0 success, 1 usage or configuration error, 2 data or format
error, 3 numerical failure, 4 protocol violation (split leakage).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .errors import ConfigurationError, DataError, FormatError, NumericalError, ProtocolError, SeqClfError

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL, EXIT_PROTOCOL = 0, 1, 2, 3, 4

# verb -> {key: (type, default, help)}; None default marks a required option
VERB_OPTIONS = {
    "gen-data": {
        "out": (str, None, "output corpus directory"),
        "num_speakers": (int, 150, "number of synthetic speakers"),
        "recordings_per_speaker": (int, 4, "recordings per speaker"),
        "prevalence": (float, 0.2, "per-attribute prevalence in [0.1, 0.5]"),
        "task_mix": (str, "VP:1,AMR:1,SMR:1", "task weights as TASK:weight pairs"),
        "master_seed": (int, 0, "seed for the whole corpus"),
        "workers": (int, 1, "render processes"),
    },
    "featurize": {"corpus": (str, None, "corpus directory")},
    "pseudo-encode": {
        "corpus": (str, None, "corpus directory"),
        "layers": (str, "0,11,31", "comma-separated pseudo-encoder layers"),
    },
    "train": {
        "corpus": (str, None, "corpus directory"),
        "out": (str, None, "run directory (checkpoint, history, split)"),
    },
    "eval": {
        "corpus": (str, None, "corpus directory"),
        "checkpoint": (str, None, "checkpoint written by train"),
        "test_ids": (str, "", "file with one test id per line (default: the checkpoint's split)"),
        "out": (str, "metrics.jsonl", "metrics file to write"),
    },
    "compare": {
        "corpus": (str, None, "corpus directory"),
        "out": (str, None, "output directory"),
        "seeds": (str, "0,1,2", "training seeds per architecture"),
    },
    "layer-sweep": {
        "corpus": (str, None, "corpus directory"),
        "out": (str, None, "output directory"),
        "layers": (str, "0,11,31", "pseudo-encoder layers to sweep"),
        "layer_frame_stride": (int, 1, "frame pooling for layer inputs"),
    },
    "pool-ablate": {
        "corpus": (str, None, "corpus directory"),
        "out": (str, None, "output directory"),
    },
    "seed-sweep": {
        "corpus": (str, None, "corpus directory"),
        "out": (str, None, "output directory"),
        "seeds": (str, "0,1,2,3,4,5", "split seeds"),
    },
    "report": {
        "metrics": (str, None, "comma-separated metrics files"),
        "out": (str, None, "output directory"),
        "names": (str, "", "comma-separated legend names"),
    },
}
TRAIN_VERBS = ("train", "compare", "layer-sweep", "pool-ablate", "seed-sweep")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _options(verb):
    from .harness.config import TRAIN_DEFAULTS, TRAIN_TYPES

    opts = dict(VERB_OPTIONS[verb])
    if verb in TRAIN_VERBS:
        for k, t in TRAIN_TYPES.items():
            opts.setdefault(k, (t, TRAIN_DEFAULTS[k], "training option"))
    return opts


def build_parser():
    p = _Parser(prog="seqclf", description="Speech-attribute sequence classification toolkit.")
    sub = p.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb in VERB_OPTIONS:
        sp = sub.add_parser(verb)
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("--quiet", action="store_true", help="suppress per-epoch progress")
        for key, (_, default, help_) in _options(verb).items():
            suffix = " (required)" if default is None else f" (default: {default})"
            sp.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=help_ + suffix)
    return p


def resolve_options(verb, args, environ=None):
    from .harness.config import env_overrides, read_config_file, resolve

    opts = _options(verb)
    defaults = {k: d for k, (_, d, _) in opts.items()}
    types = {k: t for k, (t, _, _) in opts.items()}
    file_values = read_config_file(args.config) if args.config else {}
    flags = {k: getattr(args, k) for k in opts}
    values = resolve(defaults, types, file_values, env_overrides(list(opts), environ), flags)
    missing = [k for k, v in values.items() if v is None]
    if missing:
        raise UsageError(f"{verb}: missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))
    return values


def _csv(text, kind=str):
    try:
        return [kind(s.strip()) for s in str(text).split(",") if s.strip()]
    except ValueError:
        raise ConfigurationError(f"cannot parse list {text!r}") from None


def _train_config(values):
    from .harness.config import train_config_from

    return train_config_from(values)


def _progress(quiet):
    if quiet:
        return None

    def log(entry):
        extra = f" val={entry['val_mean_accuracy']:.4f}" if "val_mean_accuracy" in entry else ""
        print(f"  epoch {entry['epoch']:3d} loss={entry['train_loss']:.4f}{extra}", flush=True)

    return log


def cmd_gen_data(v, quiet):
    from .synth.corpus import CorpusSpec, gen_corpus, manifest_digest

    mix = {}
    for item in _csv(v["task_mix"]):
        task, _, weight = item.partition(":")
        try:
            mix[task.strip()] = float(weight) if weight else 1.0
        except ValueError:
            raise ConfigurationError(f"bad task_mix entry {item!r}") from None
    spec = CorpusSpec(v["num_speakers"], v["recordings_per_speaker"], mix, v["prevalence"], v["master_seed"])
    rows = gen_corpus(spec, v["out"], workers=v["workers"])
    print(f"wrote {len(rows)} recordings to {v['out']} (manifest digest {manifest_digest(rows)})")


def cmd_featurize(v, quiet):
    from .harness.data import Corpus, featurize

    n = featurize(Corpus(v["corpus"]))
    print(f"wrote log-mel features for {n} recordings")


def cmd_pseudo_encode(v, quiet):
    from .harness.data import Corpus, pseudo_encode_corpus

    layers = _csv(v["layers"], int)
    pseudo_encode_corpus(Corpus(v["corpus"]), layers)
    print(f"wrote pseudo-encoder layers {layers}")


def cmd_train(v, quiet):
    from .harness.config import dump_config
    from .harness.data import Corpus
    from .harness.train import save_run, split_ids, train, write_history

    cfg = _train_config(v)
    corpus = Corpus(v["corpus"])
    train_ids, test_ids = split_ids(corpus, cfg)
    out = Path(v["out"])
    out.mkdir(parents=True, exist_ok=True)
    (out / "effective_config.txt").write_text(dump_config(v))
    (out / "train_ids.txt").write_text("\n".join(train_ids) + "\n")
    (out / "test_ids.txt").write_text("\n".join(test_ids) + "\n")
    result = train(cfg, corpus, train_ids, log=_progress(quiet))
    save_run(out / "model.ckpt", result, corpus)
    write_history(out / "history.jsonl", result.history)
    print(f"best epoch {result.best_epoch}; checkpoint {out / 'model.ckpt'}")


def cmd_eval(v, quiet):
    from .harness.data import Corpus, read_ids
    from .harness.metrics import write_metrics
    from .harness.train import evaluate_checkpoint, load_run, split_ids

    corpus = Corpus(v["corpus"])
    if v["test_ids"]:
        test_ids = read_ids(v["test_ids"])
    else:
        _, _, cfg, _ = load_run(v["checkpoint"])
        test_ids = split_ids(corpus, cfg)[1]
    rep = evaluate_checkpoint(v["checkpoint"], corpus, test_ids)
    write_metrics(rep, v["out"])
    print(f"mean accuracy {rep.mean_accuracy:.4f} (pair mean {rep.pair_accuracy:.4f}) on {rep.num_recordings} "
          f"recordings; metrics in {v['out']}")


def _experiment(fn, v, quiet, **kw):
    from .harness.data import Corpus
    from .harness.experiments import write_result

    result = fn(Corpus(v["corpus"]), _train_config(v), log=_progress(quiet), **kw)
    path = write_result(result, v["out"])
    for row in result["rows"]:
        print("  " + json.dumps({k: x for k, x in row.items() if not isinstance(x, dict)}))
    print(f"results in {path}")
    return result


def cmd_compare(v, quiet):
    from .harness.experiments import compare_architectures

    r = _experiment(compare_architectures, v, quiet, seeds=_csv(v["seeds"], int))
    print("directional claim: " + json.dumps(r["directional_claim"]))


def cmd_layer_sweep(v, quiet):
    from .harness.experiments import layer_sweep

    _experiment(layer_sweep, v, quiet, layers=_csv(v["layers"], int), frame_stride=v["layer_frame_stride"])


def cmd_pool_ablate(v, quiet):
    from .harness.experiments import task_pooling_ablation

    _experiment(task_pooling_ablation, v, quiet)


def cmd_seed_sweep(v, quiet):
    from .harness.experiments import split_seed_sweep

    r = _experiment(split_seed_sweep, v, quiet, seeds=_csv(v["seeds"], int))
    print(f"spread {r['spread']:.4f}")


def cmd_report(v, quiet):
    from .harness.report import report

    csv_path, svg_path = report(_csv(v["metrics"]), v["out"], _csv(v["names"]) or None)
    print(f"wrote {csv_path} and {svg_path}")


COMMANDS = {
    "gen-data": cmd_gen_data, "featurize": cmd_featurize, "pseudo-encode": cmd_pseudo_encode,
    "train": cmd_train, "eval": cmd_eval, "compare": cmd_compare, "layer-sweep": cmd_layer_sweep,
    "pool-ablate": cmd_pool_ablate, "seed-sweep": cmd_seed_sweep, "report": cmd_report,
}


def main(argv=None, environ=None):
    from .harness.config import dump_config

    try:
        args = build_parser().parse_args(argv)
        values = resolve_options(args.verb, args, environ)
        print(f"# effective config for {args.verb}")
        print(dump_config(values), end="", flush=True)
        COMMANDS[args.verb](values, args.quiet)
        return EXIT_OK
    except (UsageError, ConfigurationError) as exc:
        return _fail(EXIT_USAGE, exc)
    except ProtocolError as exc:
        return _fail(EXIT_PROTOCOL, exc)
    except NumericalError as exc:
        return _fail(EXIT_NUMERICAL, exc)
    except (DataError, FormatError) as exc:
        return _fail(EXIT_DATA, exc)
    except SeqClfError as exc:
        return _fail(EXIT_DATA, exc)


def _fail(code, exc):
    print(f"error: {exc}", file=sys.stderr)
    return code


def main_entry():
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    main_entry()
