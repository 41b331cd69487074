"""Synthetic sampled-value streams for two merging units.

Steady state is a balanced three-phase set per merging unit (MU23, MU32),
seven channels each. Anomalies are injected as parametric rules per class of
the 18-class taxonomy; faults hit both units, attacks hit one.
"""

from __future__ import annotations

import csv
import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import yaml

MERGING_UNITS = ("MU23", "MU32")
SIGNALS = ("Ia", "Ib", "Ic", "In", "Van", "Vbn", "Vcn")
CHANNELS = tuple(f"{mu}_{sig}" for mu in MERGING_UNITS for sig in SIGNALS)
N_CHANNELS = len(CHANNELS)
CSV_HEADER = ("index", "time", *CHANNELS, "label")

N_CLASSES = 18
OUT_OF_ZONE = -1

PHASE_ANGLES_DEG = (0.0, -120.0, 120.0)
_CURRENT = (0, 1, 2)
_NEUTRAL = 3
_VOLTAGE = (4, 5, 6)

# class id -> (name, kind, target); target is phase indices for faults, MU index for attacks.
# attacks follow the streaming ground-truth mapping: CT MU32 = 4, PT MU23 = 13, GPS MU32 = 16.
CLASS_TABLE: dict[int, tuple[str, str, tuple[int, ...]]] = {
    0: ("Normal", "normal", ()),
    1: ("SLG A-N", "slg", (0,)),
    2: ("SLG B-N", "slg", (1,)),
    3: ("SLG C-N", "slg", (2,)),
    4: ("CT ratio MU32", "ct", (1,)),
    5: ("LL A-B", "ll", (0, 1)),
    6: ("LL A-C", "ll", (0, 2)),
    7: ("LL B-C", "ll", (1, 2)),
    8: ("CT ratio MU23", "ct", (0,)),
    9: ("DLG AB-N", "dlg", (0, 1)),
    10: ("DLG AC-N", "dlg", (0, 2)),
    11: ("DLG BC-N", "dlg", (1, 2)),
    12: ("PT ratio MU32", "pt", (1,)),
    13: ("PT ratio MU23", "pt", (0,)),
    14: ("3PH ABC", "abc", (0, 1, 2)),
    15: ("3PH ABC-N", "abcn", (0, 1, 2)),
    16: ("GPS spoof MU32", "gps", (1,)),
    17: ("GPS spoof MU23", "gps", (0,)),
}


def class_name(class_id: int) -> str:
    if class_id == OUT_OF_ZONE:
        return "Out-of-zone"
    return CLASS_TABLE[class_id][0]


@dataclass(frozen=True)
class GridConfig:
    system_frequency: float = 60.0
    sample_rate: float = 4800.0
    nominal_voltage_amplitude: float = 1.0
    nominal_current_amplitude: float = 1.0
    noise_stddev: float = 0.01
    rng_seed: int = 0

    def __post_init__(self):
        if self.system_frequency <= 0 or self.sample_rate <= 0:
            raise ValueError("frequencies must be positive")
        ratio = self.sample_rate / self.system_frequency
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(
                f"sample_rate {self.sample_rate} is not an integer multiple of "
                f"system_frequency {self.system_frequency}"
            )
        if self.noise_stddev < 0:
            raise ValueError("noise_stddev must be >= 0")

    @property
    def samples_per_cycle(self) -> int:
        return int(round(self.sample_rate / self.system_frequency))


@dataclass(frozen=True)
class SampleFrame:
    index: int
    time: float
    channels: np.ndarray
    label: int


@dataclass(frozen=True)
class AnomalySpec:
    """One injected disturbance over ``[start_time, end_time)``.

    ``class_id`` is 1..17, or -1 for an out-of-zone disturbance realized as the
    ``signature_class`` waveform scaled toward steady state by ``attenuation``.
    """

    class_id: int
    start_time: float
    end_time: float
    surge_multiplier: float = 6.0
    sag_fraction: float = 0.3
    dc_time_constant_cycles: float = 1.0
    fault_angle_deg: float = 80.0
    ground_imbalance: float = 0.15
    ct_scale: float = 0.5
    pt_scale: float = 1.5
    gps_shift_deg: float = 20.0
    signature_class: int = 1
    attenuation: float = 0.25

    def __post_init__(self):
        if self.class_id != OUT_OF_ZONE and self.class_id not in CLASS_TABLE:
            raise ValueError(f"unknown class_id {self.class_id}")
        if self.class_id == 0:
            raise ValueError("class 0 (normal) cannot be injected")
        if self.class_id == OUT_OF_ZONE and CLASS_TABLE.get(self.signature_class, ("", "", ""))[1] not in (
            "slg", "ll", "dlg", "abc", "abcn"
        ):
            raise ValueError("out-of-zone signature must be a fault class")
        if not self.start_time < self.end_time:
            raise ValueError("start_time must be < end_time")


@dataclass(frozen=True)
class EventScript:
    anomalies: tuple[AnomalySpec, ...]
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "anomalies", tuple(self.anomalies))
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        ordered = sorted(self.anomalies, key=lambda a: a.start_time)
        for a in ordered:
            if a.start_time < 0 or a.end_time > self.duration + 1e-12:
                raise ValueError(f"anomaly {a.class_id} outside [0, {self.duration}]")
        for a, b in zip(ordered, ordered[1:]):
            if b.start_time < a.end_time:
                raise ValueError(
                    f"overlapping anomalies: class {a.class_id} [{a.start_time}, {a.end_time}) "
                    f"and class {b.class_id} [{b.start_time}, {b.end_time})"
                )


@dataclass(frozen=True)
class EventOnset:
    class_id: int
    start_time: float
    end_time: float


@dataclass
class LabelledDataset:
    channels: np.ndarray
    labels: np.ndarray
    sample_rate: float = 4800.0
    system_frequency: float = 60.0
    events: tuple[AnomalySpec, ...] = field(default=())

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int16)
        if self.channels.ndim != 2 or self.channels.shape[1] != N_CHANNELS:
            raise ValueError(f"channels must have shape (n, {N_CHANNELS})")
        if self.labels.shape != (self.channels.shape[0],):
            raise ValueError("labels must have one entry per frame")

    def __len__(self) -> int:
        return self.channels.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelledDataset):
            return NotImplemented
        return (
            self.sample_rate == other.sample_rate
            and np.array_equal(self.channels, other.channels)
            and np.array_equal(self.labels, other.labels)
        )

    @property
    def samples_per_cycle(self) -> int:
        return int(round(self.sample_rate / self.system_frequency))

    @property
    def index(self) -> np.ndarray:
        return np.arange(len(self))

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) / self.sample_rate

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate

    def frame(self, i: int) -> SampleFrame:
        return SampleFrame(i, i / self.sample_rate, self.channels[i].copy(), int(self.labels[i]))

    def __iter__(self) -> Iterator[SampleFrame]:
        for i in range(len(self)):
            yield self.frame(i)

    def slice(self, start: int, stop: int) -> "LabelledDataset":
        return LabelledDataset(
            self.channels[start:stop].copy(), self.labels[start:stop].copy(),
            self.sample_rate, self.system_frequency,
        )

    def onsets(self) -> list[EventOnset]:
        """Maximal runs of non-normal labels, as (class, start, end) in seconds."""
        labels = self.labels
        out = []
        change = np.flatnonzero(np.diff(labels)) + 1
        bounds = np.concatenate([[0], change, [len(labels)]])
        for a, b in zip(bounds[:-1], bounds[1:]):
            if labels[a] != 0:
                out.append(EventOnset(int(labels[a]), a / self.sample_rate, b / self.sample_rate))
        return out


def _index_range(start: float, end: float, sample_rate: float) -> tuple[int, int]:
    def first_at_or_after(t: float) -> int:
        x = t * sample_rate
        r = round(x)
        return int(r) if abs(x - r) < 1e-6 else int(math.ceil(x))

    return first_at_or_after(start), first_at_or_after(end)


def generate_steady_state(cfg: GridConfig, duration: float) -> LabelledDataset:
    """Balanced sinusoids on both merging units plus seeded Gaussian noise."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    n = int(math.floor(duration * cfg.sample_rate + 1e-6))
    t = np.arange(n) / cfg.sample_rate
    wt = 2.0 * np.pi * cfg.system_frequency * t
    rng = np.random.default_rng(cfg.rng_seed)

    channels = np.empty((n, N_CHANNELS))
    for m in range(len(MERGING_UNITS)):
        base = m * len(SIGNALS)
        for p, ang in enumerate(np.deg2rad(PHASE_ANGLES_DEG)):
            channels[:, base + _CURRENT[p]] = cfg.nominal_current_amplitude * np.cos(wt + ang)
            channels[:, base + _VOLTAGE[p]] = cfg.nominal_voltage_amplitude * np.cos(wt + ang)
        channels[:, base + _NEUTRAL] = channels[:, [base + c for c in _CURRENT]].sum(axis=1)
    if cfg.noise_stddev > 0:
        channels += rng.normal(0.0, cfg.noise_stddev, size=channels.shape)
    return LabelledDataset(
        channels, np.zeros(n, dtype=np.int16), cfg.sample_rate, cfg.system_frequency
    )


def _fault_component(spec: AnomalySpec, phase_deg: float, wt: np.ndarray, wt0: float,
                     elapsed_cycles: np.ndarray, amplitude: float) -> np.ndarray:
    # steady AC fault current lagging by the fault angle plus a decaying DC term that
    # makes the added component start from zero at the onset sample
    ang = np.deg2rad(phase_deg - spec.fault_angle_deg)
    decay = np.exp(-elapsed_cycles / spec.dc_time_constant_cycles)
    return (spec.surge_multiplier - 1.0) * amplitude * (np.cos(wt + ang) - np.cos(wt0 + ang) * decay)


def _apply_fault(block: np.ndarray, kind: str, phases: tuple[int, ...], spec: AnomalySpec,
                 wt: np.ndarray, wt0: float, elapsed_cycles: np.ndarray,
                 current_amplitude: float) -> None:
    for m in range(len(MERGING_UNITS)):
        base = m * len(SIGNALS)
        added = np.zeros(block.shape[0])
        if kind == "ll":
            p, q = phases
            # driven by the line-to-line voltage; equal and opposite in the two phases
            vp, vq = np.deg2rad(PHASE_ANGLES_DEG[p]), np.deg2rad(PHASE_ANGLES_DEG[q])
            ll_deg = np.rad2deg(np.angle(np.exp(1j * vp) - np.exp(1j * vq)))
            comp = _fault_component(spec, ll_deg, wt, wt0, elapsed_cycles, current_amplitude)
            block[:, base + _CURRENT[p]] += comp
            block[:, base + _CURRENT[q]] -= comp
            v_p, v_q = block[:, base + _VOLTAGE[p]].copy(), block[:, base + _VOLTAGE[q]].copy()
            mid, half = 0.5 * (v_p + v_q), 0.5 * (v_p - v_q)
            block[:, base + _VOLTAGE[p]] = mid + spec.sag_fraction * half
            block[:, base + _VOLTAGE[q]] = mid - spec.sag_fraction * half
        else:
            for n_ph, p in enumerate(phases):
                scale = 1.0
                if kind == "abcn":
                    scale = 1.0 - n_ph * spec.ground_imbalance
                comp = scale * _fault_component(
                    spec, PHASE_ANGLES_DEG[p], wt, wt0, elapsed_cycles, current_amplitude
                )
                block[:, base + _CURRENT[p]] += comp
                added += comp
                block[:, base + _VOLTAGE[p]] *= spec.sag_fraction
        block[:, base + _NEUTRAL] += added


def _phase_shift(channels: np.ndarray, lo: int, hi: int, cols: list[int], shift_samples: float) -> None:
    if shift_samples == 0.0:
        return
    idx = np.arange(channels.shape[0], dtype=np.float64)
    target = idx[lo:hi] + shift_samples
    for c in cols:
        channels[lo:hi, c] = np.interp(target, idx, channels[:, c])


def _inject(channels: np.ndarray, lo: int, hi: int, class_id: int, spec: AnomalySpec,
            sample_rate: float, system_frequency: float, current_amplitude: float) -> None:
    kind, target = CLASS_TABLE[class_id][1], CLASS_TABLE[class_id][2]
    spc = sample_rate / system_frequency
    if kind in ("ct", "pt"):
        base = target[0] * len(SIGNALS)
        if kind == "ct":
            cols, scale = [base + c for c in (*_CURRENT, _NEUTRAL)], spec.ct_scale
        else:
            cols, scale = [base + c for c in _VOLTAGE], spec.pt_scale
        channels[lo:hi, cols] *= scale
    elif kind == "gps":
        base = target[0] * len(SIGNALS)
        shift = spec.gps_shift_deg / 360.0 * spc
        _phase_shift(channels, lo, hi, list(range(base, base + len(SIGNALS))), shift)
    else:
        idx = np.arange(lo, hi)
        wt = 2.0 * np.pi * idx / spc
        wt0 = 2.0 * np.pi * lo / spc
        elapsed = (idx - lo) / spc
        block = channels[lo:hi].copy()
        _apply_fault(block, kind, target, spec, wt, wt0, elapsed, current_amplitude)
        channels[lo:hi] = block


def inject_anomaly(dataset: LabelledDataset, spec: AnomalySpec,
                   current_amplitude: float = 1.0) -> LabelledDataset:
    """Return a copy of ``dataset`` with ``spec`` applied and relabeled."""
    lo, hi = _index_range(spec.start_time, spec.end_time, dataset.sample_rate)
    if spec.start_time < 0 or hi > len(dataset) or lo >= hi:
        raise ValueError(
            f"interval [{spec.start_time}, {spec.end_time}) outside dataset span "
            f"[0, {dataset.duration})"
        )
    channels = dataset.channels.copy()
    labels = dataset.labels.copy()
    if spec.class_id == OUT_OF_ZONE:
        steady = channels[lo:hi].copy()
        _inject(channels, lo, hi, spec.signature_class, spec,
                dataset.sample_rate, dataset.system_frequency, current_amplitude)
        channels[lo:hi] = steady + spec.attenuation * (channels[lo:hi] - steady)
    else:
        _inject(channels, lo, hi, spec.class_id, spec,
                dataset.sample_rate, dataset.system_frequency, current_amplitude)
    labels[lo:hi] = spec.class_id
    return LabelledDataset(channels, labels, dataset.sample_rate, dataset.system_frequency,
                           (*dataset.events, spec))


def build_event_stream(script: EventScript, cfg: GridConfig) -> LabelledDataset:
    ds = generate_steady_state(cfg, script.duration)
    for spec in script.anomalies:
        ds = inject_anomaly(ds, spec, cfg.nominal_current_amplitude)
    return ds


def event_1_script(duration: float = 6.0) -> EventScript:
    """Five consecutive anomalies: SLG A-N, LL B-C, DLG AC-N, CT MU32, PT MU23."""
    classes = (1, 7, 10, 4, 13)
    return EventScript(
        tuple(AnomalySpec(c, float(k + 1), k + 1.2) for k, c in enumerate(classes)), duration
    )


def event_2_script(duration: float = 6.0) -> EventScript:
    """ABC, ABC-G, GPS spoof MU32, and an out-of-zone A-G fault labeled -1."""
    return EventScript(
        (
            AnomalySpec(14, 1.0, 1.2),
            AnomalySpec(15, 2.0, 2.2),
            AnomalySpec(16, 4.0, 4.2),
            AnomalySpec(OUT_OF_ZONE, 5.0, 5.2, signature_class=1),
        ),
        duration,
    )


def training_script(seed: int = 0, duration: float = 22.0, repeats: int = 3,
                    anomaly_length: float = 0.25) -> EventScript:
    """Every class 1..17 ``repeats`` times in shuffled order, onsets jittered.

    Jitter moves the onset phase between occurrences so the DC-offset and
    point-on-wave at onset vary across the training stream.
    """
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.arange(1, N_CLASSES)) for _ in range(repeats)])
    lead = 0.25
    slot = (duration - lead) / len(order)
    if slot <= anomaly_length:
        raise ValueError("duration too short for the requested anomalies")
    slack = slot - anomaly_length
    specs = []
    for k, c in enumerate(order):
        start = lead + k * slot + float(rng.uniform(0.25, 0.75)) * slack
        start = round(start * 4800) / 4800
        specs.append(AnomalySpec(int(c), start, start + anomaly_length))
    return EventScript(tuple(specs), duration)


BUILTIN_SCRIPTS = {
    "event1": event_1_script,
    "event2": event_2_script,
    "train": training_script,
}


_SPEC_FIELDS = {f.name for f in dataclasses.fields(AnomalySpec)}


def script_from_mapping(doc: dict) -> EventScript:
    """Build a script from ``{duration, anomalies: [{class_id, start, end, ...overrides}]}``."""
    if "duration" not in doc or "anomalies" not in doc:
        raise ValueError("event script needs 'duration' and 'anomalies'")
    specs = []
    for entry in doc["anomalies"]:
        entry = dict(entry)
        kwargs = {
            "class_id": int(entry.pop("class_id")),
            "start_time": float(entry.pop("start", entry.pop("start_time", None))),
            "end_time": float(entry.pop("end", entry.pop("end_time", None))),
        }
        unknown = set(entry) - _SPEC_FIELDS
        if unknown:
            raise ValueError(f"unknown anomaly fields: {sorted(unknown)}")
        kwargs.update(entry)
        specs.append(AnomalySpec(**kwargs))
    return EventScript(tuple(specs), float(doc["duration"]))


def load_script(path: str | Path) -> EventScript:
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return script_from_mapping(doc)


def script_to_mapping(script: EventScript) -> dict:
    return {
        "duration": script.duration,
        "anomalies": [
            {"class_id": a.class_id, "start": a.start_time, "end": a.end_time}
            for a in script.anomalies
        ],
    }


class DatasetFormatError(ValueError):
    pass


def write_csv(dataset: LabelledDataset, path: str | Path) -> None:
    n = len(dataset)
    table = np.column_stack([dataset.index, dataset.times, dataset.channels, dataset.labels])
    fmt = ["%d", "%.17g"] + ["%.17g"] * N_CHANNELS + ["%d"]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(CSV_HEADER) + "\n")
        if n:
            np.savetxt(fh, table, fmt=fmt, delimiter=",")


def read_csv(path: str | Path, system_frequency: float = 60.0) -> LabelledDataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetFormatError(f"{path}: empty file") from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise DatasetFormatError(
                f"{path}: malformed header; expected {len(CSV_HEADER)} columns "
                f"{','.join(CSV_HEADER)}"
            )
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(CSV_HEADER):
                raise DatasetFormatError(
                    f"{path}:{lineno}: truncated row ({len(row)} of {len(CSV_HEADER)} cells)"
                )
            try:
                rows.append([float(x) for x in row])
            except ValueError as exc:
                raise DatasetFormatError(f"{path}:{lineno}: non-numeric cell ({exc})") from None
    if not rows:
        raise DatasetFormatError(f"{path}: no data rows")
    table = np.asarray(rows)
    index = table[:, 0].astype(np.int64)
    if not np.array_equal(index, np.arange(len(index))):
        raise DatasetFormatError(f"{path}: index column is not 0..n-1")
    if len(index) > 1:
        sample_rate = float(round(1.0 / (table[1, 1] - table[0, 1]), 6))
    else:
        sample_rate = 4800.0
    return LabelledDataset(table[:, 2:-1], table[:, -1].astype(np.int16), sample_rate, system_frequency)
