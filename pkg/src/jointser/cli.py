"""Command-line entry point: ``jointser <command> ...``.

Every command accepts ``--config FILE`` (a flat JSON object of config
fields) and repeated ``--set key=value`` overrides, which win over the
file. Failures exit non-zero with a JSON error object on stderr.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import data, harness, training, wer

log = logging.getLogger("jointser")


def _parse_value(text):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _settings(args):
    values = {}
    if args.config:
        values.update(json.loads(Path(args.config).read_text(encoding="utf-8")))
    for item in args.set or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ValueError(f"--set expects key=value, got {item!r}")
        values[key.strip()] = _parse_value(val)
    return values


def _train_config(args):
    cfg = training.TrainConfig.from_dict(_settings(args))
    for flag, name in (("seed", "seed"), ("epochs", "max_epochs"), ("fusion", "fusion")):
        v = getattr(args, flag, None)
        if v is not None:
            cfg = replace(cfg, **{name: v})
    cfg.validate()
    return cfg


def _load(args, streams=None):
    return data.load_dataset(args.data, streams)


def cmd_synth(args):
    cfg = data.synth_config_from_dict(_settings(args))
    if args.seed is not None:
        cfg.seed = args.seed
    records, features = data.synth_generate(cfg)
    manifest = data.write_dataset(records, features, args.out)
    return {"manifest": str(manifest), "utterances": len(records)}


def cmd_validate(args):
    records = data.load_manifest(Path(args.data) / "manifest")
    required = [s for s in (args.streams or "").split(",") if s]
    report = data.validate_streams(records, required)
    return {"utterances": len(records), "streams": report}


def cmd_train(args):
    cfg = _train_config(args)
    records, features = _load(args, cfg.resolved_streams())
    held = [r for r in records if r.session_id == args.holdout] if args.holdout else []
    tr = [r for r in records if r.session_id != args.holdout] if args.holdout else records
    res = training.train(tr, features, cfg, held or None, features)
    training.save_checkpoint(res.checkpoint, args.out)
    if args.metrics:
        training.write_metrics(res.history, args.metrics)
    last = res.history[-1]
    return {"checkpoint": args.out, "epochs": last.epoch, "total": last.total,
            "heldout_wa": last.heldout_wa, "ctc_skipped": res.ctc_skipped}


def cmd_eval(args):
    ckpt = training.load_checkpoint(args.checkpoint)
    records, features = _load(args, ckpt.model.streams)
    if args.session:
        records = [r for r in records if r.session_id == args.session]
    ev = training.evaluate(ckpt, records, features)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for uid, p, y in zip(ev["ids"], ev["preds"], ev["labels"]):
                fh.write(json.dumps({"utterance_id": uid, "pred": data.EMOTIONS[p],
                                     "label": data.EMOTIONS[y]}) + "\n")
    return {"wa": ev["wa"], "ua": ev["ua"], "utterances": len(records)}


def _emit(result, run_dir, stem, formats):
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for fmt in formats:
        ext = "json" if fmt == "json" else "txt"
        paths.append(str(harness.emit_report(result, fmt, run_dir / f"{stem}.{ext}")))
    return paths


def _experiment(args, fn, stem):
    cfg = _train_config(args)
    records, features = _load(args)
    harness.write_provenance(args.run_dir, cfg, records, features,
                             {"command": stem, "folds": args.folds, "repeats": args.repeats})
    if fn is harness.run_cv:
        result = fn(records, features, cfg, args.folds, args.repeats)
    else:
        result = fn(records, features, cfg, n_folds=args.folds, repeats=args.repeats)
    return {"reports": _emit(result, args.run_dir, stem, args.format.split(","))}


def cmd_cv(args):
    return _experiment(args, harness.run_cv, "cv")


def cmd_compare(args):
    return _experiment(args, harness.compare_fusions, "compare_fusions")


def cmd_sweep(args):
    return _experiment(args, harness.layer_sweep, "layer_sweep")


def cmd_wer(args):
    records = data.load_manifest(Path(args.data) / "manifest", check_features=False)
    report = wer.full_report(records)
    if args.run_dir:
        return {"reports": _emit(report, args.run_dir, "wer_report", args.format.split(","))}
    sys.stdout.write(harness.render_report(report, args.format.split(",")[0]))
    return None


def build_parser():
    p = argparse.ArgumentParser(prog="jointser", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat JSON config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config field (repeatable)")
        sp.add_argument("--seed", type=int)
        return sp

    def training_opts(sp):
        common(sp)
        sp.add_argument("--data", required=True, help="dataset root containing 'manifest'")
        sp.add_argument("--epochs", type=int)
        sp.add_argument("--fusion", choices=("single", "concat", "coattention", "hierarchical"))
        return sp

    sp = common(sub.add_parser("synth", help="generate a synthetic dataset"))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("validate", help="check manifest and feature streams")
    sp.add_argument("--data", required=True)
    sp.add_argument("--streams", help="comma-separated streams every record must have")
    sp.set_defaults(func=cmd_validate)

    sp = training_opts(sub.add_parser("train", help="train one model"))
    sp.add_argument("--out", required=True, help="checkpoint path")
    sp.add_argument("--metrics", help="per-epoch metrics trace (JSON lines)")
    sp.add_argument("--holdout", help="session id held out for per-epoch evaluation")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint")
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--session", help="restrict evaluation to one session")
    sp.add_argument("--out", help="write per-utterance predictions (JSON lines)")
    sp.set_defaults(func=cmd_eval)

    for name, func, help_ in (("cv", cmd_cv, "session-based cross-validation"),
                              ("compare-fusions", cmd_compare, "fusion comparison table"),
                              ("layer-sweep", cmd_sweep, "hidden-layer comparison table")):
        sp = training_opts(sub.add_parser(name, help=help_))
        sp.add_argument("--run-dir", required=True)
        sp.add_argument("--folds", type=int, default=5)
        sp.add_argument("--repeats", type=int, default=1)
        sp.add_argument("--format", default="text,json")
        sp.set_defaults(func=func)

    sp = sub.add_parser("wer-report", help="per-emotion and per-length WER tables")
    sp.add_argument("--data", required=True)
    sp.add_argument("--run-dir", help="write reports here instead of stdout")
    sp.add_argument("--format", default="text")
    sp.set_defaults(func=cmd_wer)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        out = args.func(args)
    except Exception as exc:  # reported as a machine-readable error
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc)}) + "\n")
        return 1
    if out is not None:
        sys.stdout.write(json.dumps(out, sort_keys=True) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
