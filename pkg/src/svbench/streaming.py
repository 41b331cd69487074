"""Per-sample inference with one-cycle centered smoothing and confidence gating.

The causal form of the centered average: when probability frame ``i`` arrives
the buffer holds frames ``i-79 .. i`` and the decision is attributed to the
center ``i - 39`` (the buffer covers ``[c-40, c+39]``). The decision therefore
becomes available ``n_half`` samples after its center, which is recorded as
the trace's look-ahead.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .preprocess import Scaler
from .waveform import LabelledDataset

ABSTAIN = -1


@dataclass(frozen=True)
class SmootherConfig:
    n_cyc: int = 80
    n_half: int = 40
    tau: float = 0.60
    n_classes: int = 18

    def __post_init__(self):
        if self.n_cyc != 2 * self.n_half:
            raise ValueError("n_cyc must equal 2 * n_half")
        if not 0.0 < self.tau:
            raise ValueError("tau must be positive")


@dataclass(frozen=True)
class ProbabilityFrame:
    index: int
    probabilities: np.ndarray


@dataclass(frozen=True)
class Decision:
    center: int
    label: int
    confidence: float
    distribution: np.ndarray


def smooth(buffer: np.ndarray, n_cyc: int = 80) -> np.ndarray:
    """Arithmetic mean of the last ``n_cyc`` probability rows.

    Deviations from a reference row are summed, so a constant buffer returns
    its row bit-for-bit.
    """
    buf = np.asarray(buffer, dtype=np.float64)
    if buf.ndim != 2 or buf.shape[0] < n_cyc:
        raise ValueError(f"buffer underfull: need {n_cyc} frames, have {buf.shape[0] if buf.ndim else 0}")
    buf = buf[-n_cyc:]
    ref = buf[0]
    return ref + (buf - ref).sum(axis=0) / n_cyc


def decide(smoothed: np.ndarray, tau: float = 0.60, center: int = -1) -> Decision:
    """Argmax (lowest index on ties) if its probability reaches ``tau``, else abstain."""
    k = int(np.argmax(smoothed))
    conf = float(smoothed[k])
    return Decision(center, k if conf >= tau else ABSTAIN, conf, smoothed)


class SmoothingState:
    """Ring buffer of the last ``n_cyc`` posteriors for one stream. Not reentrant."""

    def __init__(self, cfg: SmootherConfig = SmootherConfig()):
        self.cfg = cfg
        self._ring = np.zeros((cfg.n_cyc, cfg.n_classes))
        self._count = 0
        self._last_index: int | None = None

    def push(self, frame: ProbabilityFrame) -> Decision | None:
        if self._last_index is not None and frame.index != self._last_index + 1:
            raise ValueError(f"out-of-order frame {frame.index} after {self._last_index}")
        self._last_index = frame.index
        self._ring[self._count % self.cfg.n_cyc] = frame.probabilities
        self._count += 1
        if self._count < self.cfg.n_cyc:
            return None
        center = frame.index - self.cfg.n_half + 1
        return decide(smooth(self._ring, self.cfg.n_cyc), self.cfg.tau, center)


push_and_decide = SmoothingState.push


@dataclass
class DecisionTrace:
    centers: np.ndarray
    labels: np.ndarray
    confidences: np.ndarray
    distributions: np.ndarray
    compute_ns: np.ndarray
    raw_indices: np.ndarray
    raw_labels: np.ndarray
    sample_rate: float = 4800.0
    lookahead_samples: int = 40
    n_cyc: int = 80
    sample_compute_ns: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    forward_ns: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def times(self) -> np.ndarray:
        return self.centers / self.sample_rate

    def window(self, t0: float, t1: float) -> np.ndarray:
        """Boolean mask of decisions whose center time lies in ``[t0, t1)``."""
        lo = int(round(t0 * self.sample_rate))
        hi = int(round(t1 * self.sample_rate))
        return (self.centers >= lo) & (self.centers < hi)

    def raw_window(self, t0: float, t1: float) -> np.ndarray:
        lo = int(round(t0 * self.sample_rate))
        hi = int(round(t1 * self.sample_rate))
        return (self.raw_indices >= lo) & (self.raw_indices < hi)

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["center_index", "time", "class", "confidence", "compute_us"])
            for c, t, y, conf, ns in zip(self.centers, self.times, self.labels,
                                         self.confidences, self.compute_ns):
                w.writerow([int(c), f"{t:.9f}", int(y), f"{conf:.6f}", f"{ns / 1e3:.3f}"])

    def raw_to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "time", "class"])
            for i, y in zip(self.raw_indices, self.raw_labels):
                w.writerow([int(i), f"{i / self.sample_rate:.9f}", int(y)])

    @classmethod
    def read_csv(cls, path: str | Path, sample_rate: float = 4800.0,
                 lookahead_samples: int = 40, n_cyc: int = 80) -> "DecisionTrace":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r)
            if header[:4] != ["center_index", "time", "class", "confidence"]:
                raise ValueError(f"{path}: not a decision trace")
            rows = [row for row in r]
        centers = np.array([int(row[0]) for row in rows], dtype=np.int64)
        labels = np.array([int(row[2]) for row in rows], dtype=np.int64)
        conf = np.array([float(row[3]) for row in rows])
        ns = np.array([float(row[4]) * 1e3 for row in rows]).astype(np.int64)
        empty = np.zeros(0, dtype=np.int64)
        return cls(centers, labels, conf, np.zeros((len(rows), 0)), ns, empty, empty,
                   sample_rate, lookahead_samples, n_cyc)


class ProbabilisticModel(Protocol):
    def forward(self, x: np.ndarray) -> np.ndarray: ...


def _finish(decisions: list[Decision], compute: list[int], raw_idx, raw_lab, cfg, sample_rate,
            sample_ns=None, forward_ns=None) -> DecisionTrace:
    k = cfg.n_classes
    return DecisionTrace(
        centers=np.array([d.center for d in decisions], dtype=np.int64),
        labels=np.array([d.label for d in decisions], dtype=np.int64),
        confidences=np.array([d.confidence for d in decisions]),
        distributions=np.array([d.distribution for d in decisions]).reshape(-1, k),
        compute_ns=np.array(compute, dtype=np.int64),
        raw_indices=np.asarray(raw_idx, dtype=np.int64),
        raw_labels=np.asarray(raw_lab, dtype=np.int64),
        sample_rate=sample_rate,
        lookahead_samples=cfg.n_half,
        n_cyc=cfg.n_cyc,
        sample_compute_ns=np.asarray(sample_ns if sample_ns is not None else [], dtype=np.int64),
        forward_ns=np.asarray(forward_ns if forward_ns is not None else [], dtype=np.int64),
    )


def run_probabilities(probs: np.ndarray, first_index: int = 0,
                      cfg: SmootherConfig = SmootherConfig(), sample_rate: float = 4800.0) -> DecisionTrace:
    """Feed precomputed posteriors (row ``r`` is sample ``first_index + r``) through the smoother."""
    state = SmoothingState(cfg)
    decisions = []
    for r, p in enumerate(np.asarray(probs)):
        d = state.push(ProbabilityFrame(first_index + r, p))
        if d is not None:
            decisions.append(d)
    idx = first_index + np.arange(len(probs))
    return _finish(decisions, [0] * len(decisions), idx, np.argmax(probs, axis=1), cfg, sample_rate)


def oracle_probabilities(labels: np.ndarray, n_classes: int = 18) -> np.ndarray:
    """One-hot ground truth; unknown (-1) samples get a uniform row."""
    labels = np.asarray(labels)
    out = np.zeros((len(labels), n_classes))
    known = labels >= 0
    out[np.flatnonzero(known), labels[known]] = 1.0
    out[~known] = 1.0 / n_classes
    return out


def run_stream(model: ProbabilisticModel, dataset: LabelledDataset, scaler: Scaler,
               cfg: SmootherConfig = SmootherConfig(), window_length: int = 50,
               clock: Callable[[], int] = time.perf_counter_ns) -> DecisionTrace:
    """Sample-by-sample decision loop over ``dataset``.

    Every sample from ``window_length - 1`` on gets: window build, scaling,
    forward pass, ring-buffer push and decision. The duration of that path is
    timed per sample with ``clock`` (nanoseconds).
    """
    n = len(dataset)
    if n < window_length + cfg.n_cyc - 1:
        raise ValueError(f"dataset of {n} samples is shorter than window + one cycle")
    if len(scaler.mean) != dataset.channels.shape[1]:
        raise ValueError("scaler does not match dataset channel count")
    spec = getattr(model, "spec", None)
    if spec is not None and (spec.n_channels != len(scaler.mean) or spec.n_classes != cfg.n_classes
                             or spec.window_length != window_length):
        raise ValueError("model spec does not match scaler/smoother configuration")

    channels = dataset.channels
    state = SmoothingState(cfg)
    decisions, compute = [], []
    raw_idx = np.arange(window_length - 1, n)
    raw_lab = np.empty(len(raw_idx), dtype=np.int64)
    sample_ns = np.empty(len(raw_idx), dtype=np.int64)
    fwd_ns = np.empty(len(raw_idx), dtype=np.int64)
    for r, i in enumerate(raw_idx):
        t0 = clock()
        window = scaler.transform(channels[i - window_length + 1 : i + 1])
        f0 = clock()
        p = model.forward(window[None])[0]
        f1 = clock()
        d = state.push(ProbabilityFrame(int(i), p))
        t1 = clock()
        raw_lab[r] = int(np.argmax(p))
        sample_ns[r] = t1 - t0
        fwd_ns[r] = f1 - f0
        if d is not None:
            decisions.append(d)
            compute.append(t1 - t0)
    return _finish(decisions, compute, raw_idx, raw_lab, cfg, dataset.sample_rate, sample_ns, fwd_ns)
