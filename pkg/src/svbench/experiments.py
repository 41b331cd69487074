"""The five streaming experiments, each writing CSV/JSON outputs and a manifest."""

from __future__ import annotations

import csv
import dataclasses
import json
import platform
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import waveform as wf
from .metrics import (
    environment_descriptor,
    inference_latency_benchmark,
    label_shares,
    streaming_report,
    write_json,
)
from .nn import load_bundle
from .pipeline import builtin_stream
from .streaming import ABSTAIN, SmootherConfig, run_stream

EXPERIMENTS = ("raw-vs-filtered", "ct-attack", "multi-event", "event2-abstain", "latency-100")

CT_ATTACK_INTERVAL = (4.0, 4.2)
OUT_OF_ZONE_INTERVAL = (5.0, 5.2)


@dataclass
class ExperimentConfig:
    experiment: str
    models: list[str] = field(default_factory=lambda: ["mlp"])
    model_dir: str = "models"
    output_dir: str = "out"
    dataset: str | None = None  # CSV path; default is the experiment's built-in event stream
    seed: int = 0
    tau: float = 0.60
    n_cyc: int = 80
    runs: int = 100
    warmup: int = 1
    noise_stddev: float = 0.01

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if isinstance(self.models, str):
            self.models = [m for m in self.models.split(",") if m]

    @classmethod
    def from_file(cls, path: str | Path, **overrides) -> "ExperimentConfig":
        doc = yaml.safe_load(Path(path).read_text()) or {}
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        doc.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**doc)

    @property
    def smoother(self) -> SmootherConfig:
        return SmootherConfig(n_cyc=self.n_cyc, n_half=self.n_cyc // 2, tau=self.tau)

    def bundle_path(self, model: str) -> Path:
        p = Path(model)
        if p.suffix:
            return p
        return Path(self.model_dir) / f"{model}.svbm"


def _stream_for(cfg: ExperimentConfig) -> wf.LabelledDataset:
    if cfg.dataset:
        return wf.read_csv(cfg.dataset)
    name = "event2" if cfg.experiment == "event2-abstain" else "event1"
    return builtin_stream(name, wf.GridConfig(noise_stddev=cfg.noise_stddev), seed=cfg.seed)


def _model_name(model: str) -> str:
    return Path(model).stem


def _write_manifest(cfg: ExperimentConfig, out: Path, files: list[str], bundles: dict) -> Path:
    path = out / "manifest.json"
    write_json(path, "manifest", {
        "config": dataclasses.asdict(cfg),
        "seeds": {"experiment": cfg.seed},
        "bundles": bundles,
        "environment": environment_descriptor(),
        "versions": {"svbench": __version__, "python": platform.python_version(),
                     "numpy": np.__version__},
        "outputs": files,
    })
    return path


def run_experiment(cfg: ExperimentConfig) -> list[Path]:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = _stream_for(cfg)
    if cfg.experiment in ("ct-attack",) and not any(
        e.class_id == 4 and abs(e.start_time - CT_ATTACK_INTERVAL[0]) < 1e-9 for e in dataset.onsets()
    ):
        raise ValueError("dataset has no CT-attack (class 4) event at 4.0 s")
    if cfg.experiment == "event2-abstain" and not any(e.class_id == wf.OUT_OF_ZONE for e in dataset.onsets()):
        raise ValueError("dataset has no out-of-zone (-1) interval")

    written: list[Path] = []
    bundles = {}
    summary_rows = []
    for model in cfg.models:
        path = cfg.bundle_path(model)
        if not path.exists():
            raise FileNotFoundError(f"missing model bundle {path} (run `svbench train` first)")
        bundle = load_bundle(path)
        name = _model_name(model)
        bundles[name] = {"path": str(path), "n_params": bundle.network.n_params,
                         "architecture": bundle.spec.architecture}
        smoother = cfg.smoother

        if cfg.experiment == "latency-100":
            lat, trace = inference_latency_benchmark(bundle.network, dataset, bundle.scaler,
                                                     cfg.runs, cfg.warmup, smoother)
            rep = streaming_report(trace, dataset)
            row = {
                "model": name,
                "accuracy_pct": 100 * rep.accuracy,
                "coverage_pct": 100 * rep.coverage,
                "avg_class_time_ms": rep.mean_classification_time_ms,
                "mean_latency_ms": lat.mean_ms,
                "std_latency_ms": lat.std_ms,
                "p95_latency_ms": lat.p95_ms,
                "forward_mean_ms": lat.forward_mean_ms,
                "n_params": bundle.network.n_params,
            }
            summary_rows.append(row)
            p = out / f"{name}_latency.json"
            write_json(p, "latency_report", {"model": name, "latency": lat.to_dict(),
                                             "streaming": rep.to_dict()})
            written.append(p)
            continue

        trace = run_stream(bundle.network, dataset, bundle.scaler, smoother)
        p = out / f"{name}_trace.csv"
        trace.to_csv(p)
        written.append(p)

        if cfg.experiment == "raw-vs-filtered":
            raw = out / f"{name}_raw_trace.csv"
            trace.raw_to_csv(raw)
            written.append(raw)
            rep = streaming_report(trace, dataset)
            payload = {"model": name, "flips_raw": rep.flips_raw, "flips_smoothed": rep.flips_smoothed,
                       "ratio": rep.flips_smoothed / rep.flips_raw if rep.flips_raw else None,
                       "report": rep.to_dict()}
        elif cfg.experiment == "ct-attack":
            rep = streaming_report(trace, dataset, CT_ATTACK_INTERVAL)
            payload = {"model": name, "interval_s": CT_ATTACK_INTERVAL, "report": rep.to_dict()}
        elif cfg.experiment == "multi-event":
            rep = streaming_report(trace, dataset)
            payload = {"model": name, "report": rep.to_dict()}
        else:
            rep = streaming_report(trace, dataset, OUT_OF_ZONE_INTERVAL)
            shares = label_shares(trace.labels[trace.window(*OUT_OF_ZONE_INTERVAL)])
            wrong = {k: v for k, v in shares.items() if k != ABSTAIN}
            payload = {"model": name, "interval_s": OUT_OF_ZONE_INTERVAL,
                       "abstention_share": shares.get(ABSTAIN, 0.0),
                       "max_wrong_class_share": max(wrong.values(), default=0.0),
                       "report": rep.to_dict(), "full_stream": streaming_report(trace, dataset).to_dict()}
        p = out / f"{name}_{cfg.experiment}.json"
        write_json(p, cfg.experiment, payload)
        written.append(p)

    if summary_rows:
        p = out / "table_summary.csv"
        with open(p, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(summary_rows[0]))
            w.writeheader()
            w.writerows(summary_rows)
        written.append(p)
        (out / "table_summary.json").write_text(json.dumps(summary_rows, indent=2))
        written.append(out / "table_summary.json")
    written.append(_write_manifest(cfg, out, [str(p) for p in written], bundles))
    return written
