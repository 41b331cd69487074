"""Sampled-value replay over UDP: a paced publisher and a classifying subscriber.

Wire frame, little-endian, 69 bytes::

    seq      uint32
    send_us  uint64   monotonic clock, microseconds
    values   14 x float32
    label    int8     ground truth, -1..17 (in-band for scoring only)

Publisher and subscriber must share a host for the latency figures to mean
anything: both sides read ``time.monotonic_ns``.
"""

from __future__ import annotations

import json
import logging
import multiprocessing as mp
import socket
import struct
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .streaming import DecisionTrace, ProbabilityFrame, SmootherConfig, SmoothingState, _finish
from .waveform import N_CHANNELS, N_CLASSES, LabelledDataset

log = logging.getLogger(__name__)

FRAME = struct.Struct(f"<IQ{N_CHANNELS}fb")
FRAME_SIZE = FRAME.size
assert FRAME_SIZE == 69

LABEL_MIN, LABEL_MAX = -1, N_CLASSES - 1


class FrameError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SVFrame:
    seq: int
    send_us: int
    values: np.ndarray
    label: int

    def __eq__(self, other) -> bool:
        if not isinstance(other, SVFrame):
            return NotImplemented
        a = np.asarray(self.values, dtype=np.float32).view(np.uint32)
        b = np.asarray(other.values, dtype=np.float32).view(np.uint32)
        return (self.seq == other.seq and self.send_us == other.send_us
                and self.label == other.label and np.array_equal(a, b))


def encode_frame(frame: SVFrame) -> bytes:
    if not LABEL_MIN <= frame.label <= LABEL_MAX:
        raise FrameError(f"reserved label value {frame.label}")
    values = np.asarray(frame.values, dtype=np.float32)
    if values.shape != (N_CHANNELS,):
        raise FrameError(f"expected {N_CHANNELS} channel values, got {values.shape}")
    try:
        return FRAME.pack(frame.seq, frame.send_us, *values.tolist(), frame.label)
    except struct.error as exc:
        raise FrameError(str(exc)) from None


def decode_frame(buf: bytes) -> SVFrame:
    if len(buf) != FRAME_SIZE:
        raise FrameError(f"frame must be {FRAME_SIZE} bytes, got {len(buf)}")
    seq, send_us, *rest = FRAME.unpack(buf)
    label = rest[-1]
    if not LABEL_MIN <= label <= LABEL_MAX:
        raise FrameError(f"reserved label value {label}")
    return SVFrame(seq, send_us, np.frombuffer(buf, dtype="<f4", count=N_CHANNELS, offset=12).copy(), label)


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must be host:port, got {endpoint!r}")
    return host or "127.0.0.1", int(port)


@dataclass(frozen=True)
class PacingConfig:
    mode: str = "realtime"  # realtime | multiplier | max-rate
    multiplier: float = 1.0
    sample_rate: float = 4800.0

    def __post_init__(self):
        if self.mode not in ("realtime", "multiplier", "max-rate"):
            raise ValueError(f"unknown pacing mode {self.mode!r}")
        if self.multiplier <= 0:
            raise ValueError("multiplier must be positive")

    @property
    def period_ns(self) -> float:
        if self.mode == "max-rate":
            return 0.0
        rate = self.sample_rate * (self.multiplier if self.mode == "multiplier" else 1.0)
        return 1e9 / rate


@dataclass
class PublishStats:
    frames_sent: int
    wall_s: float
    target_period_us: float
    mean_period_us: float
    p50_period_us: float
    p99_period_us: float
    max_window_deviation: float
    late_frames: int
    send_errors: int

    def to_dict(self) -> dict:
        return asdict(self)


def _wait_until(deadline_ns: int) -> None:
    while True:
        now = time.monotonic_ns()
        remaining = deadline_ns - now
        if remaining <= 0:
            return
        if remaining > 300_000:
            time.sleep((remaining - 200_000) / 1e9)


def publish(dataset: LabelledDataset, endpoint: str, pacing: PacingConfig = PacingConfig(),
            start_delay_s: float = 0.0) -> PublishStats:
    """Send every frame to ``endpoint`` on an absolute schedule of one period per frame."""
    addr = parse_endpoint(endpoint)
    values = dataset.channels.astype(np.float32)
    labels = dataset.labels
    period = pacing.period_ns
    sent_at = np.zeros(len(dataset), dtype=np.int64)
    errors = 0
    with socket.socket(socket.AF_INET, socket.SOCK_DGRAM) as sock:
        if start_delay_s:
            time.sleep(start_delay_s)
        t0 = time.monotonic_ns()
        for k in range(len(dataset)):
            if period:
                _wait_until(t0 + int(round(k * period)))
            now = time.monotonic_ns()
            try:
                sock.sendto(FRAME.pack(k, now // 1000, *values[k].tolist(), int(labels[k])), addr)
            except OSError as exc:
                errors += 1
                log.warning("send failed at seq %d: %s", k, exc)
            sent_at[k] = now
        wall = (time.monotonic_ns() - t0) / 1e9
    return _publish_stats(sent_at, period, wall, errors, pacing.sample_rate)


def _publish_stats(sent_at: np.ndarray, period_ns: float, wall_s: float, errors: int,
                   sample_rate: float) -> PublishStats:
    gaps = np.diff(sent_at) / 1e3
    if gaps.size == 0:
        gaps = np.zeros(1)
    target_us = period_ns / 1e3
    dev = 0.0
    late = 0
    if period_ns:
        per_window = max(int(round(1e9 / period_ns)), 1)
        if len(gaps) >= per_window:
            csum = np.concatenate([[0.0], np.cumsum(gaps)])
            means = (csum[per_window:] - csum[:-per_window]) / per_window
            dev = float(np.max(np.abs(means - target_us)) / target_us)
        else:
            dev = float(abs(gaps.mean() - target_us) / target_us)
        schedule = sent_at[0] + np.round(np.arange(len(sent_at)) * period_ns)
        late = int(np.count_nonzero(sent_at - schedule > period_ns))
    return PublishStats(len(sent_at), wall_s, target_us, float(gaps.mean()),
                        float(np.percentile(gaps, 50)), float(np.percentile(gaps, 99)),
                        dev, late, errors)


def open_subscriber(endpoint: str, rcvbuf: int = 1 << 20) -> socket.socket:
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVBUF, rcvbuf)
    sock.bind(parse_endpoint(endpoint))
    return sock


@dataclass
class SubscribeResult:
    trace: DecisionTrace
    seqs: np.ndarray
    truth: np.ndarray
    end_to_end_ns: np.ndarray
    compute_ns: np.ndarray
    received: int
    decode_failures: int
    gap_frames: int
    reordered: int
    resets: int
    stats: dict = field(default_factory=dict)

    def summary(self) -> dict:
        def pct(a, q):
            return float(np.percentile(a, q) / 1e6) if len(a) else None
        return {
            "received": self.received,
            "decisions": len(self.trace),
            "decode_failures": self.decode_failures,
            "gap_frames": self.gap_frames,
            "reordered": self.reordered,
            "pipeline_resets": self.resets,
            "end_to_end_mean_ms": float(self.end_to_end_ns.mean() / 1e6) if len(self.end_to_end_ns) else None,
            "end_to_end_p95_ms": pct(self.end_to_end_ns, 95),
            "compute_mean_ms": float(self.compute_ns.mean() / 1e6) if len(self.compute_ns) else None,
        }


def subscribe_classify(sock: socket.socket, model, scaler, cfg: SmootherConfig = SmootherConfig(),
                       window_length: int = 50, expected_frames: int | None = None,
                       first_timeout_s: float = 5.0, idle_timeout_s: float = 0.5) -> SubscribeResult:
    """Receive, decode, window, scale, infer, smooth and decide, one frame at a time.

    A sequence gap restarts the window and smoothing buffers, since neither may
    span missing samples. Late (reordered or duplicate) frames are dropped.
    """
    n_ch = len(scaler.mean)
    ring = np.zeros((2 * window_length, n_ch))
    filled = pos = 0
    state = SmoothingState(cfg)
    decisions, dec_compute = [], []
    seqs, truth, e2e, compute, raw_idx, raw_lab = [], [], [], [], [], []
    received = failures = gaps = reordered = resets = 0
    expected = None
    sock.settimeout(first_timeout_s)
    while expected_frames is None or received < expected_frames:
        try:
            buf = sock.recv(256)
        except socket.timeout:
            break
        t_recv = time.monotonic_ns()
        sock.settimeout(idle_timeout_s)
        received += 1
        try:
            frame = decode_frame(buf)
        except FrameError:
            failures += 1
            continue
        if expected is not None and frame.seq < expected:
            reordered += 1
            continue
        if expected is not None and frame.seq > expected:
            gaps += frame.seq - expected
            state = SmoothingState(cfg)
            filled = 0
            resets += 1
        expected = frame.seq + 1

        x = frame.values.astype(np.float64)
        ring[pos] = x
        ring[pos + window_length] = x
        pos = (pos + 1) % window_length
        filled += 1
        if filled >= window_length:
            window = scaler.transform(ring[pos : pos + window_length])
            p = model.forward(window[None])[0]
            d = state.push(ProbabilityFrame(frame.seq, p))
            raw_idx.append(frame.seq)
            raw_lab.append(int(np.argmax(p)))
        else:
            d = None
        t_done = time.monotonic_ns()
        seqs.append(frame.seq)
        truth.append(frame.label)
        e2e.append(t_done - frame.send_us * 1000)
        compute.append(t_done - t_recv)
        if d is not None:
            decisions.append(d)
            dec_compute.append(t_done - t_recv)
    trace = _finish(decisions, dec_compute, raw_idx, raw_lab, cfg, 4800.0)
    return SubscribeResult(trace, np.asarray(seqs), np.asarray(truth), np.asarray(e2e, dtype=np.int64),
                           np.asarray(compute, dtype=np.int64), received, failures, gaps,
                           reordered, resets)


def _publisher_main(channels, labels, sample_rate, endpoint, pacing, delay, queue):
    ds = LabelledDataset(channels, labels, sample_rate)
    queue.put(publish(ds, endpoint, pacing, start_delay_s=delay).to_dict())


def replay(dataset: LabelledDataset, model, scaler, endpoint: str = "127.0.0.1:0",
           pacing: PacingConfig = PacingConfig(), cfg: SmootherConfig = SmootherConfig(),
           rcvbuf: int = 1 << 20, idle_timeout_s: float = 0.5) -> tuple[SubscribeResult, PublishStats]:
    """Loopback replay: publisher in a child process, subscriber in this one."""
    sock = open_subscriber(endpoint, rcvbuf)
    host, port = sock.getsockname()
    target = f"{host}:{port}"
    ctx = mp.get_context("fork")
    queue = ctx.Queue()
    proc = ctx.Process(target=_publisher_main,
                       args=(dataset.channels, dataset.labels, dataset.sample_rate, target,
                             pacing, 0.2, queue), daemon=True)
    proc.start()
    try:
        result = subscribe_classify(sock, model, scaler, cfg, expected_frames=len(dataset),
                                    idle_timeout_s=idle_timeout_s)
        stats = PublishStats(**queue.get(timeout=60))
    finally:
        proc.join(timeout=10)
        sock.close()
    result.trace.sample_rate = dataset.sample_rate
    result.stats = stats.to_dict()
    return result, stats


def stats_json(result: SubscribeResult, stats: PublishStats) -> str:
    return json.dumps({"publisher": stats.to_dict(), "subscriber": result.summary()}, indent=2)
