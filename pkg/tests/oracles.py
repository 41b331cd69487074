"""Independent reference computations shared by the unit and acceptance suites.

Everything here is written as plain loops, deliberately unlike the package code.
"""

from fractions import Fraction

import numpy as np

from svbench.nn import ModelSpec, Network
from svbench.nn.layers import weighted_cross_entropy


def numeric_gradients(net, x, y, w, h=1e-4):
    """Central differences of the weighted loss with respect to every parameter."""
    out = []
    for p in net.params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up, _ = weighted_cross_entropy(net.logits(x), y, w)
            flat[i] = keep - h
            down, _ = weighted_cross_entropy(net.logits(x), y, w)
            flat[i] = keep
            gflat[i] = (up - down) / (2 * h)
        out.append(g)
    return out


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        err = np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), 1e-7)
        worst = max(worst, float(err.max()))
    return worst


def small_spec(arch, r):
    k = int(r.integers(2, 5))
    if arch == "mlp":
        return ModelSpec.mlp(n_classes=k, window_length=int(r.integers(2, 5)),
                             n_channels=int(r.integers(1, 4)),
                             hidden=tuple(int(h) for h in r.integers(2, 6, r.integers(1, 3))))
    kernel = int(r.integers(1, 4))
    stride = int(r.integers(1, 3))
    return ModelSpec.cnn1d(n_classes=k, window_length=int(r.integers(2 * kernel + 2, 12)),
                           n_channels=int(r.integers(1, 4)),
                           filters=tuple(int(f) for f in r.integers(2, 5, r.integers(1, 3))),
                           kernel=kernel, conv_stride=stride)


def gradient_check(arch, seed):
    """Max relative error between backprop and finite differences on a random small net."""
    r = np.random.default_rng(seed)
    spec = small_spec(arch, r)
    net = Network.create(spec, seed=seed, dtype=np.float64)
    for p in net.params:  # nonzero biases exercise every path
        p += r.normal(0, 0.1, p.shape)
    b = int(r.integers(1, 5))
    x = r.normal(size=(b, spec.window_length, spec.n_channels))
    y = r.integers(0, spec.n_classes, b)
    w = r.uniform(0.5, 2.0, spec.n_classes)
    _, grads = net.loss_and_gradients(x, y, w)
    return max_relative_error(grads, numeric_gradients(net, x, y, w))


def scan_accuracy(labels, truth):
    hits = 0
    for a, b in zip(labels, truth):
        if a == b:
            hits += 1
    return hits / len(labels)


def scan_coverage(labels):
    return sum(1 for a in labels if a != -1) / len(labels)


def tcls_oracle(centers, labels, cls, start, end, fs=4800.0, look=40, cyc=80):
    lo, hi = round(start * fs), round(end * fs) + cyc
    for c, y in zip(centers, labels):
        if lo <= c < hi and y == cls:
            return (c - lo + look) / fs * 1000
    return None


def tally(pred, truth, k):
    """Balanced accuracy and macro F1 from per-class counts, in exact rationals."""
    recalls, f1s = [], []
    for c in range(k):
        tp = fp = fn = 0
        for p, t in zip(pred, truth):
            if p == c and t == c:
                tp += 1
            elif p == c:
                fp += 1
            elif t == c:
                fn += 1
        if tp + fn == 0:
            continue
        rec = Fraction(tp, tp + fn)
        prec = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        recalls.append(rec)
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else Fraction(0))
    return float(sum(recalls) / len(recalls)), float(sum(f1s) / len(f1s))


def random_trace(r):
    """Decisions and truth over -1..17, N <= 1000, about 60% agreement."""
    n = int(r.integers(1, 1001))
    truth = r.integers(-1, 18, n)
    labels = np.where(r.random(n) < 0.6, truth, r.integers(-1, 18, n))
    return labels, truth


def random_offline(r):
    """Predictions and truth over 0..17 with every class present in truth."""
    n = int(r.integers(18, 1001))
    truth = np.concatenate([np.arange(18), r.integers(0, 18, n - 18)])
    pred = np.where(r.random(n) < 0.7, truth, r.integers(0, 18, n))
    return pred, truth


def random_event(r, centers, fs=4800.0):
    from svbench.waveform import EventOnset

    s_idx = int(r.integers(centers[0], centers[-1] + 1))
    e_idx = s_idx + int(r.integers(1, 300))
    return EventOnset(int(r.integers(0, 18)), s_idx / fs, e_idx / fs)
