"""Glue between the generator, preprocessing and the network engine."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import preprocess as pp
from . import waveform as wf
from .metrics import OfflineReport, offline_report
from .nn import ModelSpec, Network, TrainConfig, TrainingHistory, predict, train

# default noise seeds per built-in stream, so evaluation noise never repeats training noise
STREAM_SEEDS = {"train": 0, "event1": 101, "event2": 202}


def default_spec(architecture: str) -> ModelSpec:
    return ModelSpec(architecture=architecture)


def builtin_stream(name: str, cfg: wf.GridConfig | None = None, seed: int | None = None) -> wf.LabelledDataset:
    """One of ``train``, ``event1``, ``event2`` with its conventional seed offset by ``seed``."""
    if name not in wf.BUILTIN_SCRIPTS:
        raise ValueError(f"unknown built-in stream {name!r}; choose from {sorted(wf.BUILTIN_SCRIPTS)}")
    cfg = cfg or wf.GridConfig()
    base = STREAM_SEEDS[name] + (seed or 0)
    script = wf.training_script(base) if name == "train" else wf.BUILTIN_SCRIPTS[name]()
    return wf.build_event_stream(script, replace(cfg, rng_seed=base))


@dataclass
class PreparedData:
    scaler: pp.Scaler
    train: pp.WindowedDataset
    validation: pp.WindowedDataset
    test: pp.WindowedDataset
    class_weights: dict[int, float]


def prepare(dataset: wf.LabelledDataset, split: pp.SplitSpec = pp.SplitSpec(), seed: int = 0,
            window_length: int = pp.WINDOW_LENGTH) -> PreparedData:
    """Window, split by blocks, fit the scaler on training frames only, then scale."""
    if np.any(dataset.labels < 0):
        raise ValueError("training data cannot contain out-of-zone (-1) labels")
    windows = pp.make_windows(dataset.channels, dataset.labels, window_length)
    parts = pp.stratified_block_split(windows, split, seed)
    scaler = pp.fit_scaler(dataset.channels[parts.train.frame_mask()])
    frames = scaler.transform(dataset.channels)
    tr, va, te = (p.with_frames(frames) for p in (parts.train, parts.validation, parts.test))
    return PreparedData(scaler, tr, va, te, pp.compute_class_weights(tr.labels))


@dataclass
class FitResult:
    network: Network
    scaler: pp.Scaler
    history: TrainingHistory
    test_report: OfflineReport


def fit_model(architecture: str, dataset: wf.LabelledDataset, seed: int = 0,
              train_cfg: TrainConfig | None = None, spec: ModelSpec | None = None) -> FitResult:
    data = prepare(dataset, seed=seed)
    spec = spec or default_spec(architecture)
    cfg = replace(train_cfg or TrainConfig(), class_weights=data.class_weights, seed=seed)
    net, hist = train(spec, data.train, data.validation, cfg)
    report = offline_report(predict(net, data.test), data.test.labels, spec.n_classes, net.n_params)
    return FitResult(net, data.scaler, hist, report)


def class_labels() -> dict[int, str]:
    return {c: wf.class_name(c) for c in range(wf.N_CLASSES)}
