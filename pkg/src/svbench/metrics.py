"""Streaming and offline scoring, and the repeated-run latency protocol."""

from __future__ import annotations

import json
import os
import platform
import time
import warnings
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .streaming import ABSTAIN, DecisionTrace, SmootherConfig, run_stream
from .waveform import EventOnset, LabelledDataset

SCHEMA_VERSION = 1

# published figure for an MLP on a cloud GPU host, kept for side-by-side reading only
REFERENCE_CONTEXT = {
    "mlp_mean_latency_ms": 57.20,
    "mlp_classification_time_ms": 3.38,
    "note": "reported on different hardware and data; not comparable, never asserted",
}


def flip_count(sequence: Sequence[int]) -> int:
    """Number of adjacent unequal pairs."""
    s = np.asarray(sequence)
    if s.size == 0:
        return 0
    return int(np.count_nonzero(s[1:] != s[:-1]))


def accuracy(labels: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of decisions equal to ground truth; -1 only matches -1 truth."""
    labels, truth = np.asarray(labels), np.asarray(truth)
    if labels.size == 0:
        raise ValueError("empty trace")
    if labels.shape != truth.shape:
        raise ValueError("trace and truth are not aligned")
    return float(np.count_nonzero(labels == truth)) / labels.size


def coverage(labels: np.ndarray) -> float:
    """Fraction of non-abstained decisions."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("empty trace")
    return float(np.count_nonzero(labels != ABSTAIN)) / labels.size


def aligned_truth(trace: DecisionTrace, truth: np.ndarray) -> np.ndarray:
    return np.asarray(truth)[trace.centers]


@dataclass
class EventTiming:
    class_id: int
    onset_s: float
    end_s: float
    t_cls_ms: float | None

    @property
    def classified(self) -> bool:
        return self.t_cls_ms is not None


def classification_time(centers: np.ndarray, labels: np.ndarray, onsets: Sequence[EventOnset],
                        sample_rate: float = 4800.0, lookahead_samples: int = 40,
                        samples_per_cycle: int = 80) -> list[EventTiming]:
    """Delay from each onset to the first decision carrying the event's class.

    Only decisions centered in ``[onset, end + one cycle)`` are searched; the
    look-ahead is added because a decision for center ``c`` is only available
    ``lookahead_samples`` later.
    """
    centers, labels = np.asarray(centers), np.asarray(labels)
    if centers.size == 0:
        raise ValueError("empty trace")
    out = []
    for ev in onsets:
        lo = int(round(ev.start_time * sample_rate))
        hi = int(round(ev.end_time * sample_rate)) + samples_per_cycle
        if lo < centers[0] or lo > centers[-1]:
            raise ValueError(f"onset {ev.start_time}s outside trace span "
                             f"[{centers[0] / sample_rate}, {centers[-1] / sample_rate}]s")
        hit = np.flatnonzero((centers >= lo) & (centers < hi) & (labels == ev.class_id))
        t = None
        if hit.size:
            t = (centers[hit[0]] - lo + lookahead_samples) / sample_rate * 1e3
        out.append(EventTiming(ev.class_id, ev.start_time, ev.end_time, t))
    return out


def trace_classification_time(trace: DecisionTrace, onsets: Sequence[EventOnset]) -> list[EventTiming]:
    return classification_time(trace.centers, trace.labels, onsets, trace.sample_rate,
                               trace.lookahead_samples, trace.n_cyc)


def abstention_runs(labels: np.ndarray) -> list[tuple[int, int]]:
    """(start position, length) of each maximal run of -1 decisions."""
    labels = np.asarray(labels)
    runs, start = [], None
    for k, y in enumerate(labels):
        if y == ABSTAIN and start is None:
            start = k
        elif y != ABSTAIN and start is not None:
            runs.append((start, k - start))
            start = None
    if start is not None:
        runs.append((start, len(labels) - start))
    return runs


def label_shares(labels: np.ndarray) -> dict[int, float]:
    labels = np.asarray(labels)
    if labels.size == 0:
        return {}
    vals, counts = np.unique(labels, return_counts=True)
    return {int(v): int(c) / labels.size for v, c in zip(vals, counts)}


@dataclass
class StreamingReport:
    accuracy: float
    coverage: float
    n_decisions: int
    events: list[EventTiming]
    flips_raw: int
    flips_smoothed: int
    abstention_runs: list[tuple[int, int]]
    label_shares: dict[int, float]
    interval_s: tuple[float, float] | None = None

    @property
    def mean_classification_time_ms(self) -> float | None:
        ts = [e.t_cls_ms for e in self.events if e.t_cls_ms is not None]
        return float(np.mean(ts)) if ts else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["label_shares"] = {str(k): v for k, v in self.label_shares.items()}
        d["mean_classification_time_ms"] = self.mean_classification_time_ms
        return d


def streaming_report(trace: DecisionTrace, dataset: LabelledDataset,
                     interval: tuple[float, float] | None = None) -> StreamingReport:
    """Score a trace against ``dataset`` labels, optionally restricted to ``[t0, t1)``."""
    if interval is None:
        mask = np.ones(len(trace), dtype=bool)
        raw_mask = np.ones(len(trace.raw_indices), dtype=bool)
        span = (trace.centers[0], trace.centers[-1]) if len(trace) else (0, -1)
        onsets = [e for e in dataset.onsets()
                  if span[0] <= int(round(e.start_time * trace.sample_rate)) <= span[1]]
    else:
        mask = trace.window(*interval)
        raw_mask = trace.raw_window(*interval)
        onsets = [e for e in dataset.onsets()
                  if interval[0] <= e.start_time < interval[1]]
    labels = trace.labels[mask]
    truth = dataset.labels[trace.centers[mask]]
    return StreamingReport(
        accuracy=accuracy(labels, truth),
        coverage=coverage(labels),
        n_decisions=int(labels.size),
        events=trace_classification_time(trace, onsets),
        flips_raw=flip_count(trace.raw_labels[raw_mask]),
        flips_smoothed=flip_count(labels),
        abstention_runs=abstention_runs(labels),
        label_shares=label_shares(labels),
        interval_s=interval,
    )


@dataclass
class OfflineReport:
    accuracy: float
    balanced_accuracy: float
    macro_f1: float
    confusion: np.ndarray
    n_params: int | None = None
    excluded_classes: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["confusion"] = self.confusion.tolist()
        return d


def offline_report(predictions: np.ndarray, truth: np.ndarray, n_classes: int = 18,
                   n_params: int | None = None) -> OfflineReport:
    """Accuracy, balanced accuracy and macro F1 over classes present in ``truth``."""
    pred, truth = np.asarray(predictions, dtype=np.int64), np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError("predictions and truth differ in length")
    if pred.size == 0:
        raise ValueError("empty input")
    if min(pred.min(), truth.min()) < 0 or max(pred.max(), truth.max()) >= n_classes:
        raise ValueError(f"labels must lie in 0..{n_classes - 1}")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    support = cm.sum(axis=1)
    present = support > 0
    excluded = [int(c) for c in np.flatnonzero(~present)]
    if excluded:
        warnings.warn(f"classes absent from truth excluded from balanced/macro means: {excluded}",
                      stacklevel=2)
    # per-class ratios and their means in exact rationals, rounded once
    tp, predicted = np.diag(cm), cm.sum(axis=0)
    recalls, f1s = [], []
    for c in np.flatnonzero(present):
        t, fp, fn = int(tp[c]), int(predicted[c] - tp[c]), int(support[c] - tp[c])
        recalls.append(Fraction(t, t + fn))
        f1s.append(Fraction(2 * t, 2 * t + fp + fn))
    return OfflineReport(
        accuracy=int(tp.sum()) / pred.size,
        balanced_accuracy=float(sum(recalls) / len(recalls)),
        macro_f1=float(sum(f1s) / len(f1s)),
        confusion=cm,
        n_params=n_params,
        excluded_classes=excluded,
    )


class ClockResolutionError(RuntimeError):
    pass


def environment_descriptor() -> dict:
    info = time.get_clock_info("perf_counter")
    return {
        "platform": platform.platform(),
        "machine": platform.machine(),
        "processor": platform.processor() or "unknown",
        "cpu_count": os.cpu_count(),
        "python": platform.python_version(),
        "numpy": np.__version__,
        "clock": {"name": "perf_counter", "implementation": info.implementation,
                  "resolution_s": info.resolution, "monotonic": info.monotonic},
    }


@dataclass
class LatencyReport:
    mean_ms: float
    std_ms: float
    p50_ms: float
    p95_ms: float
    p99_ms: float
    warmup_runs: int
    measured_runs: int
    samples_per_run: int
    forward_mean_ms: float | None = None
    end_to_end_mean_ms: float | None = None
    environment: dict = field(default_factory=environment_descriptor)
    reference_context: dict = field(default_factory=lambda: dict(REFERENCE_CONTEXT))

    def to_dict(self) -> dict:
        return asdict(self)


def summarize_latency(runs_ns: Sequence[np.ndarray], warmup: int = 0,
                      forward_runs_ns: Sequence[np.ndarray] | None = None) -> LatencyReport:
    """Pool per-sample durations (ns) of the runs after the first ``warmup``."""
    if len(runs_ns) - warmup < 1:
        raise ValueError("need at least one measured run after warm-up")
    measured = [np.asarray(r, dtype=np.float64) for r in runs_ns[warmup:]]
    pooled = np.concatenate(measured)
    if pooled.size == 0:
        raise ValueError("measured runs contain no samples")
    if np.count_nonzero(pooled == 0) > 0.1 * pooled.size:
        raise ClockResolutionError("more than 10% of samples measured 0 ns; clock too coarse")
    ms = pooled / 1e6
    p50, p95, p99 = np.percentile(ms, [50, 95, 99])
    fwd = None
    if forward_runs_ns is not None:
        fwd = float(np.concatenate([np.asarray(r, dtype=np.float64)
                                    for r in forward_runs_ns[warmup:]]).mean() / 1e6)
    return LatencyReport(
        mean_ms=float(ms.mean()), std_ms=float(ms.std()),
        p50_ms=float(p50), p95_ms=float(p95), p99_ms=float(p99),
        warmup_runs=warmup, measured_runs=len(measured),
        samples_per_run=int(measured[0].size), forward_mean_ms=fwd,
    )


def inference_latency_benchmark(model, dataset: LabelledDataset, scaler, runs: int = 100,
                                warmup: int = 1, cfg: SmootherConfig = SmootherConfig(),
                                clock: Callable[[], int] = time.perf_counter_ns,
                                before_run: Callable[[int], None] | None = None
                                ) -> tuple[LatencyReport, DecisionTrace]:
    """Repeat the full per-sample decision path over ``dataset``; warm-up runs are discarded.

    Returns the report and the trace of the last run.
    """
    if runs < 1:
        raise ValueError("runs must be >= 1")
    totals, forwards, trace = [], [], None
    for r in range(warmup + runs):
        if before_run is not None:
            before_run(r)
        trace = run_stream(model, dataset, scaler, cfg, clock=clock)
        totals.append(trace.sample_compute_ns)
        forwards.append(trace.forward_ns)
    return summarize_latency(totals, warmup, forwards), trace


def write_json(path: str | Path, kind: str, payload: dict) -> None:
    doc = {"schema": f"svbench.{kind}", "schema_version": SCHEMA_VERSION, **payload}
    Path(path).write_text(json.dumps(doc, indent=2, default=_json_default))


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
