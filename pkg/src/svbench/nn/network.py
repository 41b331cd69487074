from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .layers import Conv1D, Dense, Flatten, GlobalAvgPool1D, Layer, ReLU, softmax, weighted_cross_entropy

ARCHITECTURES = ("mlp", "cnn1d")


@dataclass(frozen=True)
class ModelSpec:
    architecture: str = "mlp"
    n_classes: int = 18
    window_length: int = 50
    n_channels: int = 14
    hidden: tuple[int, ...] = (128, 64)
    filters: tuple[int, ...] = (32, 64)
    kernel: int = 5
    conv_stride: int = 1
    bias: bool = True

    def __post_init__(self):
        if self.architecture not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.architecture!r}; choose from {ARCHITECTURES}")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        object.__setattr__(self, "filters", tuple(int(f) for f in self.filters))
        widths = self.hidden if self.architecture == "mlp" else self.filters
        if any(w <= 0 for w in widths) or self.n_classes < 1:
            raise ValueError("every hidden layer needs positive width")

    @classmethod
    def mlp(cls, **kw) -> "ModelSpec":
        return cls(architecture="mlp", **kw)

    @classmethod
    def cnn1d(cls, **kw) -> "ModelSpec":
        return cls(architecture="cnn1d", **kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"], d["filters"] = list(self.hidden), list(self.filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(**{**d, "hidden": tuple(d["hidden"]), "filters": tuple(d["filters"])})


def build_layers(spec: ModelSpec, rng: np.random.Generator, dtype=np.float32) -> list[Layer]:
    layers: list[Layer] = []
    if spec.architecture == "mlp":
        layers.append(Flatten())
        width = spec.window_length * spec.n_channels
        for h in spec.hidden:
            layers += [Dense(width, h, rng, spec.bias, dtype), ReLU()]
            width = h
        layers.append(Dense(width, spec.n_classes, rng, spec.bias, dtype))
    else:
        channels, t = spec.n_channels, spec.window_length
        for f in spec.filters:
            conv = Conv1D(channels, f, spec.kernel, rng, spec.conv_stride, dtype)
            t = conv.output_length(t)
            if t < 1:
                raise ValueError("window too short for the convolution stack")
            layers += [conv, ReLU()]
            channels = f
        layers += [GlobalAvgPool1D(), Dense(channels, spec.n_classes, rng, spec.bias, dtype)]
    return layers


@dataclass
class Network:
    """A layer stack producing class posteriors for ``(batch, time, channels)`` windows."""

    spec: ModelSpec
    layers: list[Layer] = field(repr=False)

    @classmethod
    def create(cls, spec: ModelSpec, seed: int = 0, dtype=np.float32) -> "Network":
        return cls(spec, build_layers(spec, np.random.default_rng(seed), dtype))

    @property
    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params))

    @property
    def dtype(self):
        return self.params[0].dtype

    def set_params(self, values: list[np.ndarray]) -> None:
        params = self.params
        if len(values) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(values)}")
        for p, v in zip(params, values):
            if p.shape != np.shape(v):
                raise ValueError(f"shape mismatch: {p.shape} vs {np.shape(v)}")
            p[...] = v

    def astype(self, dtype) -> "Network":
        net = Network.create(self.spec, 0, dtype)
        net.set_params([p.astype(dtype) for p in self.params])
        return net

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        expected = (self.spec.window_length, self.spec.n_channels)
        if x.ndim != 3 or x.shape[1:] != expected:
            raise ValueError(f"expected windows of shape (batch, {expected[0]}, {expected[1]}), got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite values in input windows")
        return x.astype(self.dtype, copy=False)

    def logits(self, x: np.ndarray) -> np.ndarray:
        out = self._check(x)
        for layer in self.layers:
            out = layer.forward(out)
        return out

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Class probabilities, one row per window."""
        return softmax(self.logits(x))

    def predict_proba(self, x: np.ndarray, batch_size: int = 4096) -> np.ndarray:
        return np.concatenate([self.forward(x[i : i + batch_size])
                               for i in range(0, len(x), batch_size)])

    def loss_and_gradients(self, x: np.ndarray, labels: np.ndarray,
                           class_weights: np.ndarray | None = None) -> tuple[float, list[np.ndarray]]:
        labels = np.asarray(labels, dtype=np.int64)
        k = self.spec.n_classes
        if labels.size and (labels.min() < 0 or labels.max() >= k):
            raise ValueError(f"labels must lie in 0..{k - 1}")
        if class_weights is None:
            class_weights = np.ones(k)
        self.last_logits = self.logits(x)
        loss, grad = weighted_cross_entropy(self.last_logits, labels, np.asarray(class_weights))
        if not np.isfinite(loss):
            raise FloatingPointError("non-finite loss")
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return loss, [g for layer in self.layers for g in layer.grads]
