"""Scaling, sliding windows, block-stratified splitting and class weights."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

WINDOW_LENGTH = 50
DEFAULT_BLOCK_LENGTH = 400


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray
    epsilon: float = 1e-8

    def transform(self, x: np.ndarray, dtype=np.float32) -> np.ndarray:
        return ((np.asarray(x) - self.mean) / (self.std + self.epsilon)).astype(dtype, copy=False)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, doc: dict) -> "Scaler":
        return cls(np.asarray(doc["mean"], dtype=np.float64),
                   np.asarray(doc["std"], dtype=np.float64), float(doc["epsilon"]))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path: str | Path) -> "Scaler":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Scaler):
            return NotImplemented
        return (np.array_equal(self.mean, other.mean) and np.array_equal(self.std, other.std)
                and self.epsilon == other.epsilon)


def fit_scaler(train_frames: np.ndarray, epsilon: float = 1e-8) -> Scaler:
    """Per-channel population mean and standard deviation over ``train_frames``."""
    x = np.asarray(train_frames, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] == 0:
        raise ValueError("cannot fit a scaler on empty input")
    # shifted-data moments: a constant channel gets std exactly 0
    ref = x[0]
    d = x - ref
    return Scaler(ref + d.mean(axis=0), d.std(axis=0), epsilon)


@dataclass
class WindowedDataset:
    """Windows over a frame buffer, held as start offsets rather than copies.

    Window ``w`` covers ``frames[starts[w] : starts[w] + length]`` and carries
    the label of its last frame.
    """

    frames: np.ndarray
    frame_labels: np.ndarray
    starts: np.ndarray
    length: int = WINDOW_LENGTH
    stride: int = 1

    def __len__(self) -> int:
        return len(self.starts)

    @property
    def labels(self) -> np.ndarray:
        return self.frame_labels[self.starts + self.length - 1]

    @property
    def windows(self) -> np.ndarray:
        view = sliding_window_view(self.frames, self.length, axis=0)  # (n, C, L)
        return view[self.starts].transpose(0, 2, 1)

    def batch(self, positions: np.ndarray) -> np.ndarray:
        """Materialize windows for the given positions as (b, length, channels)."""
        idx = self.starts[positions][:, None] + np.arange(self.length)
        return self.frames[idx]

    def subset(self, positions: np.ndarray) -> "WindowedDataset":
        return WindowedDataset(self.frames, self.frame_labels, self.starts[positions],
                               self.length, self.stride)

    def with_frames(self, frames: np.ndarray) -> "WindowedDataset":
        return WindowedDataset(frames, self.frame_labels, self.starts, self.length, self.stride)

    def frame_mask(self) -> np.ndarray:
        """Boolean mask of frames covered by at least one window."""
        cover = np.zeros(len(self.frames) + 1, dtype=np.int64)
        np.add.at(cover, self.starts, 1)
        np.add.at(cover, self.starts + self.length, -1)
        return np.cumsum(cover)[:-1] > 0


def make_windows(frames: np.ndarray, labels: np.ndarray, length: int = WINDOW_LENGTH,
                 stride: int = 1) -> WindowedDataset:
    frames = np.asarray(frames)
    n = frames.shape[0]
    if length < 1 or stride < 1:
        raise ValueError("length and stride must be positive")
    if n < length:
        raise ValueError(f"need at least {length} frames, got {n}")
    starts = np.arange(0, n - length + 1, stride)
    return WindowedDataset(frames, np.asarray(labels), starts, length, stride)


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.70
    validation: float = 0.10
    test: float = 0.20
    block_length: int = DEFAULT_BLOCK_LENGTH

    def __post_init__(self):
        if abs(self.train + self.validation + self.test - 1.0) > 1e-9:
            raise ValueError("split ratios must sum to 1")
        if min(self.train, self.validation, self.test) < 0:
            raise ValueError("split ratios must be non-negative")


@dataclass
class Split:
    train: WindowedDataset
    validation: WindowedDataset
    test: WindowedDataset
    dropped: np.ndarray


def stratified_block_split(windows: WindowedDataset, spec: SplitSpec = SplitSpec(),
                           seed: int = 0) -> Split:
    """Assign whole blocks of windows to train/validation/test, stratified by block class.

    Blocks are ``spec.block_length`` frames long. A window whose frames cross
    a block boundary is dropped, so no raw frame is shared between splits.
    Each block is stratified by the majority label of its windows.
    """
    L = spec.block_length
    if L < windows.length:
        raise ValueError(f"block_length {L} must be >= window length {windows.length}")
    starts = windows.starts
    block_of = starts // L
    inside = (starts + windows.length - 1) // L == block_of
    labels = windows.labels

    kept_blocks = np.unique(block_of[inside])
    block_class = {}
    for b in kept_blocks:
        members = labels[inside & (block_of == b)]
        vals, counts = np.unique(members, return_counts=True)
        block_class[int(b)] = int(vals[np.argmax(counts)])

    rng = np.random.default_rng(seed)
    assign: dict[int, int] = {}
    for cls in sorted(set(block_class.values())):
        blocks = np.array([b for b, c in block_class.items() if c == cls])
        needed = sum(1 for r in (spec.train, spec.validation, spec.test) if r > 0)
        if len(blocks) < needed:
            raise ValueError(
                f"class {cls} spans {len(blocks)} block(s); need at least {needed} to stratify"
            )
        rng.shuffle(blocks)
        n = len(blocks)
        n_val = max(1 if spec.validation > 0 else 0, int(round(spec.validation * n)))
        n_test = max(1 if spec.test > 0 else 0, int(round(spec.test * n)))
        n_train = n - n_val - n_test
        for k, b in enumerate(blocks):
            assign[int(b)] = 0 if k < n_train else (1 if k < n_train + n_val else 2)

    which = np.full(len(starts), -1)
    for b, s in assign.items():
        which[inside & (block_of == b)] = s
    return Split(
        windows.subset(np.flatnonzero(which == 0)),
        windows.subset(np.flatnonzero(which == 1)),
        windows.subset(np.flatnonzero(which == 2)),
        np.flatnonzero(which == -1),
    )


def compute_class_weights(labels: np.ndarray) -> dict[int, float]:
    """Inverse-frequency weights ``N / (K_present * n_k)`` for classes present in ``labels``."""
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("cannot weight an empty label set")
    vals, counts = np.unique(labels, return_counts=True)
    n, k = labels.size, len(vals)
    return {int(v): n / (k * int(c)) for v, c in zip(vals, counts)}


def weight_vector(weights: dict[int, float], n_classes: int) -> np.ndarray:
    """Dense per-class weights; classes absent from ``weights`` get 1.0."""
    w = np.ones(n_classes)
    for c, v in weights.items():
        w[c] = v
    return w
