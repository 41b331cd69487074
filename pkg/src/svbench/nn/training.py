from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from ..preprocess import WindowedDataset, weight_vector
from .layers import weighted_cross_entropy
from .network import ModelSpec, Network
from .optim import Adam

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 128
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    patience: int = 5
    lr_factor: float = 0.5
    lr_patience: int = 3
    min_lr: float = 1e-6
    class_weights: dict[int, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 < self.lr_factor < 1.0:
            raise ValueError("lr_factor must be in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class TrainingHistory:
    train_loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)
    learning_rate: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(net: Network, data: WindowedDataset, batch_size: int = 4096) -> tuple[float, float]:
    """Unweighted mean cross-entropy and accuracy over ``data``."""
    labels = data.labels.astype(np.int64)
    ones = np.ones(net.spec.n_classes)
    total_loss, correct = 0.0, 0
    for i in range(0, len(data), batch_size):
        pos = np.arange(i, min(i + batch_size, len(data)))
        logits = net.logits(data.batch(pos))
        loss, _ = weighted_cross_entropy(logits, labels[pos], ones)
        total_loss += loss * len(pos)
        correct += int(np.sum(np.argmax(logits, axis=1) == labels[pos]))
    return total_loss / len(data), correct / len(data)


def predict(net: Network, data: WindowedDataset, batch_size: int = 4096) -> np.ndarray:
    return np.concatenate([
        np.argmax(net.logits(data.batch(np.arange(i, min(i + batch_size, len(data))))), axis=1)
        for i in range(0, len(data), batch_size)
    ])


def train(spec: ModelSpec, train_set: WindowedDataset, validation_set: WindowedDataset,
          cfg: TrainConfig = TrainConfig()) -> tuple[Network, TrainingHistory]:
    """Mini-batch Adam on weighted cross-entropy with early stopping and LR reduction.

    Both splits must already be scaled. Returns the network restored to the
    epoch with the lowest validation loss.
    """
    if len(train_set) == 0 or len(validation_set) == 0:
        raise ValueError("training and validation splits must be non-empty")
    net = Network.create(spec, seed=cfg.seed)
    weights = weight_vector(cfg.class_weights or {}, spec.n_classes)
    opt = Adam(net.params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed + 1)
    labels = train_set.labels.astype(np.int64)
    hist = TrainingHistory()

    best_loss, best_params = np.inf, [p.copy() for p in net.params]
    since_best = since_lr = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(train_set))
        run_loss, run_correct = 0.0, 0
        for i in range(0, len(order), cfg.batch_size):
            pos = order[i : i + cfg.batch_size]
            x = train_set.batch(pos)
            try:
                loss, grads = net.loss_and_gradients(x, labels[pos], weights)
            except FloatingPointError:
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch + 1}, batch {i // cfg.batch_size}, lr {opt.lr:g}"
                ) from None
            opt.step(net.params, grads)
            run_loss += loss * len(pos)
            run_correct += int(np.sum(np.argmax(net.last_logits, axis=1) == labels[pos]))
        val_loss, val_acc = evaluate(net, validation_set)
        if not np.isfinite(val_loss):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch + 1}")
        hist.train_loss.append(run_loss / len(order))
        hist.train_accuracy.append(run_correct / len(order))
        hist.val_loss.append(val_loss)
        hist.val_accuracy.append(val_acc)
        hist.learning_rate.append(opt.lr)
        log.info("epoch %d/%d loss %.4f acc %.4f val_loss %.4f val_acc %.4f lr %.2e",
                 epoch + 1, cfg.epochs, hist.train_loss[-1], hist.train_accuracy[-1],
                 val_loss, val_acc, opt.lr)

        if val_loss < best_loss:
            best_loss, since_best, since_lr = val_loss, 0, 0
            best_params = [p.copy() for p in net.params]
            hist.best_epoch = epoch
            continue
        since_best += 1
        since_lr += 1
        if since_best >= max(cfg.patience, 1):
            hist.stopped_early = epoch + 1 < cfg.epochs
            break
        if since_lr >= cfg.lr_patience:
            opt.lr = max(opt.lr * cfg.lr_factor, cfg.min_lr)
            since_lr = 0

    net.set_params(best_params)
    return net, hist
