"""Command line: generate | train | stream | bench | replay | report.

Exit codes: 0 success, 1 usage, 2 data error, 3 threshold failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import waveform as wf
from .experiments import EXPERIMENTS, ExperimentConfig, run_experiment
from .metrics import streaming_report, write_json
from .nn import BundleError, TrainConfig, TrainingDiverged, load_bundle, save_bundle
from .pipeline import builtin_stream, class_labels, fit_model
from .streaming import DecisionTrace, SmootherConfig, run_stream
from .svwire import PacingConfig, replay, stats_json

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_THRESHOLD = 0, 1, 2, 3

log = logging.getLogger("svbench")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _grid(args) -> wf.GridConfig:
    return wf.GridConfig(noise_stddev=args.noise)


def _load_stream(args, default: str) -> wf.LabelledDataset:
    """``--data`` CSV, else ``--script`` (built-in name or config file)."""
    if getattr(args, "data", None):
        return wf.read_csv(args.data)
    script = getattr(args, "script", None) or default
    if script in wf.BUILTIN_SCRIPTS:
        return builtin_stream(script, _grid(args), seed=args.seed)
    return wf.build_event_stream(wf.load_script(script), replace(_grid(args), rng_seed=args.seed))


def cmd_generate(args) -> int:
    ds = _load_stream(args, "event1")
    wf.write_csv(ds, args.out)
    print(f"wrote {len(ds)} frames to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    ds = _load_stream(args, "train")
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr)
    fit = fit_model(args.model, ds, seed=args.seed, train_cfg=cfg)
    out = Path(args.out or f"models/{args.model}.svbm")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_bundle(out, fit.network, fit.scaler, class_labels(),
                {"seed": args.seed, "epochs_run": len(fit.history.val_loss)})
    report = out.with_suffix(".train.json")
    write_json(report, "training_report", {"model": args.model, "n_params": fit.network.n_params,
                                           "test": fit.test_report.to_dict(),
                                           "history": fit.history.to_dict()})
    r = fit.test_report
    print(f"{args.model}: params {fit.network.n_params}, test accuracy {r.accuracy:.4f}, "
          f"balanced {r.balanced_accuracy:.4f}, macro F1 {r.macro_f1:.4f} -> {out}")
    return EXIT_OK


def _smoother(args) -> SmootherConfig:
    return SmootherConfig(n_cyc=args.n_cyc, n_half=args.n_cyc // 2, tau=args.tau)


def cmd_stream(args) -> int:
    bundle = load_bundle(args.model)
    ds = _load_stream(args, "event1")
    trace = run_stream(bundle.network, ds, bundle.scaler, _smoother(args))
    trace.to_csv(args.out)
    if args.raw_out:
        trace.raw_to_csv(args.raw_out)
    rep = streaming_report(trace, ds)
    print(json.dumps({"accuracy": rep.accuracy, "coverage": rep.coverage,
                      "flips_raw": rep.flips_raw, "flips_smoothed": rep.flips_smoothed,
                      "t_cls_ms": {f"{e.class_id}@{e.onset_s:g}": e.t_cls_ms for e in rep.events}},
                     indent=2))
    return EXIT_OK


def cmd_bench(args) -> int:
    overrides = {"experiment": args.experiment, "models": args.models, "model_dir": args.model_dir,
                 "output_dir": args.out, "dataset": args.data, "seed": args.seed, "tau": args.tau,
                 "runs": args.runs, "warmup": args.warmup}
    if args.config:
        cfg = ExperimentConfig.from_file(args.config, **overrides)
    else:
        if not args.experiment:
            raise UsageError("--experiment is required without --config")
        cfg = ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})
    for p in run_experiment(cfg):
        print(p)
    return EXIT_OK


def cmd_replay(args) -> int:
    bundle = load_bundle(args.model)
    ds = _load_stream(args, "event1")
    pacing = PacingConfig(args.pacing, args.multiplier, ds.sample_rate)
    result, stats = replay(ds, bundle.network, bundle.scaler, args.endpoint, pacing, _smoother(args))
    doc = stats_json(result, stats)
    if args.out:
        Path(args.out).write_text(doc)
    if args.trace_out:
        result.trace.to_csv(args.trace_out)
    print(doc)
    return EXIT_OK


def cmd_report(args) -> int:
    ds = wf.read_csv(args.data)
    trace = DecisionTrace.read_csv(args.trace, ds.sample_rate, args.n_cyc // 2, args.n_cyc)
    interval = tuple(args.interval) if args.interval else None
    rep = streaming_report(trace, ds, interval)
    doc = rep.to_dict()
    failures = []
    if args.min_accuracy is not None and rep.accuracy < args.min_accuracy:
        failures.append(f"accuracy {rep.accuracy:.4f} < {args.min_accuracy}")
    if args.min_coverage is not None and rep.coverage < args.min_coverage:
        failures.append(f"coverage {rep.coverage:.4f} < {args.min_coverage}")
    if args.max_tcls_ms is not None:
        for e in rep.events:
            if e.t_cls_ms is None or e.t_cls_ms > args.max_tcls_ms:
                failures.append(f"class {e.class_id} at {e.onset_s:g}s: T_cls {e.t_cls_ms} ms")
    doc["threshold_failures"] = failures
    if args.out:
        write_json(args.out, "streaming_report", doc)
    print(json.dumps(doc, indent=2, default=str))
    return EXIT_THRESHOLD if failures else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="svbench", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def stream_source(sp, default):
        sp.add_argument("--data", help="dataset CSV")
        sp.add_argument("--script", help=f"built-in ({', '.join(wf.BUILTIN_SCRIPTS)}) or event-script file; "
                                         f"default {default}")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--noise", type=float, default=0.01, help="noise stddev, pu")

    def smoothing(sp):
        sp.add_argument("--tau", type=float, default=0.60)
        sp.add_argument("--n-cyc", type=int, default=80)

    g = sub.add_parser("generate", help="write a labeled stream to CSV")
    stream_source(g, "event1")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a model and write a bundle")
    stream_source(t, "train")
    t.add_argument("--model", choices=["mlp", "cnn1d"], default="mlp")
    t.add_argument("--epochs", type=int, default=40)
    t.add_argument("--batch-size", type=int, default=128)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--out", help="bundle path (default models/<model>.svbm)")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("stream", help="run the per-sample decision pipeline over a stream")
    stream_source(s, "event1")
    smoothing(s)
    s.add_argument("--model", required=True, help="bundle path")
    s.add_argument("--out", required=True, help="decision trace CSV")
    s.add_argument("--raw-out", help="raw argmax trace CSV")
    s.set_defaults(func=cmd_stream)

    b = sub.add_parser("bench", help="run one experiment")
    b.add_argument("--experiment", choices=EXPERIMENTS)
    b.add_argument("--models", help="comma-separated model names or bundle paths")
    b.add_argument("--model-dir")
    b.add_argument("--data")
    b.add_argument("--out")
    b.add_argument("--config", help="YAML/JSON experiment config; flags override it")
    b.add_argument("--seed", type=int)
    b.add_argument("--tau", type=float)
    b.add_argument("--runs", type=int)
    b.add_argument("--warmup", type=int)
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("replay", help="publish a stream over UDP loopback and classify it live")
    stream_source(r, "event1")
    smoothing(r)
    r.add_argument("--model", required=True)
    r.add_argument("--endpoint", default="127.0.0.1:0", help="host:port (port 0 picks a free one)")
    r.add_argument("--pacing", choices=["realtime", "multiplier", "max-rate"], default="realtime")
    r.add_argument("--multiplier", type=float, default=1.0)
    r.add_argument("--out", help="statistics JSON")
    r.add_argument("--trace-out")
    r.set_defaults(func=cmd_replay)

    q = sub.add_parser("report", help="score a decision trace against a dataset")
    q.add_argument("--trace", required=True)
    q.add_argument("--data", required=True)
    q.add_argument("--interval", type=float, nargs=2, metavar=("T0", "T1"))
    q.add_argument("--n-cyc", type=int, default=80)
    q.add_argument("--min-accuracy", type=float)
    q.add_argument("--min-coverage", type=float)
    q.add_argument("--max-tcls-ms", type=float)
    q.add_argument("--out")
    q.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"svbench: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (wf.DatasetFormatError, BundleError, FileNotFoundError, TrainingDiverged) as exc:
        print(f"svbench: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        msg = str(exc)
        if msg.startswith("unknown experiment"):
            print(f"svbench: error: {msg}", file=sys.stderr)
            return EXIT_USAGE
        print(f"svbench: data error: {msg}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
