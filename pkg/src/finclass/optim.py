"""Adam, the training loop and evaluation metrics."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .errors import DivergedError, InvalidConfigError, InvalidInputError, InvalidShapeError
from .nn import ACTIVATIONS, cross_entropy


class Adam:
    """Adam with bias-corrected moments; one state slot per parameter array."""

    def __init__(self, params: list[np.ndarray], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if len(params) != len(self.m) or len(grads) != len(params):
            raise InvalidInputError("parameter / gradient / state counts disagree")
        for p, g, m in zip(params, grads, self.m):
            if p.shape != g.shape or p.shape != m.shape:
                raise InvalidInputError(f"shape mismatch: param {p.shape}, grad {g.shape}, state {m.shape}")
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(p.dtype)


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    activation: str = "relu"
    loss_form: str = "binary"
    shuffle: bool = True

    def validate(self) -> None:
        if self.epochs < 1:
            raise InvalidConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise InvalidConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.lr <= 0:
            raise InvalidConfigError(f"lr must be positive, got {self.lr}")
        if self.activation not in ACTIVATIONS:
            raise InvalidConfigError(f"unknown activation {self.activation!r}")
        if self.loss_form not in ("binary", "categorical"):
            raise InvalidConfigError(f"unknown loss form {self.loss_form!r}")


@dataclass
class History:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_accuracy: list[float] = field(default_factory=list)
    # One row per optimizer step: (epoch, step, loss, batch accuracy %).
    steps: list[tuple[int, int, float, float]] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["epoch", "step", "loss", "train_accuracy"])
        for e, s, loss, acc in self.steps:
            w.writerow([e, s, repr(loss), repr(acc)])
        return buf.getvalue()


def one_hot(labels: np.ndarray, k: int, dtype=np.float32) -> np.ndarray:
    out = np.zeros((len(labels), k), dtype=dtype)
    out[np.arange(len(labels)), labels] = 1
    return out


def fit(network, dataset: Dataset, cfg: TrainConfig, on_step=None) -> History:
    """Minibatch training with Adam over all trainable parameters.

    Batch gradients are the mean over samples. ``on_step`` is called with each
    ``(epoch, step, loss, accuracy)`` row as it is produced.
    """
    cfg.validate()
    if len(dataset) == 0:
        raise InvalidInputError("cannot train on an empty dataset")
    x, y = dataset.arrays()
    if x.shape[1:] != tuple(network.spec.input_shape):
        raise InvalidShapeError(f"samples have shape {x.shape[1:]}, network expects {network.spec.input_shape}")
    x = x.astype(network.dtype, copy=False)
    k = network.spec.num_classes
    targets = one_hot(y, k, network.dtype)

    params = [p for _, p in network.parameters()]
    opt = Adam(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    hist = History()
    n, step = len(x), 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        losses, correct = [], 0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            logits = network.forward(x[idx], training=True)
            loss, g = cross_entropy(logits, targets[idx], cfg.loss_form)
            if not math.isfinite(loss):
                raise DivergedError(step, loss)
            network.backward(g.astype(network.dtype, copy=False))
            opt.step(params, network.gradients())
            hits = int((logits.argmax(axis=1) == y[idx]).sum())
            correct += hits
            losses.append(loss)
            row = (epoch, step, loss, 100.0 * hits / len(idx))
            hist.steps.append(row)
            if on_step:
                on_step(row)
            step += 1
        hist.epoch_loss.append(float(np.mean(losses)))
        hist.epoch_accuracy.append(100.0 * correct / n)
    return hist


@dataclass
class Metrics:
    accuracy: float
    confusion: np.ndarray  # rows = true class, columns = predicted
    precision: list[float]
    recall: list[float]

    def report(self, class_names: list[str]) -> str:
        lines = [f"accuracy: {self.accuracy:.2f}%", "confusion (rows=true, cols=predicted):"]
        width = max(len(c) for c in class_names)
        for name, row in zip(class_names, self.confusion):
            lines.append(f"  {name:>{width}}  " + " ".join(f"{v:5d}" for v in row))
        lines.append("per-class precision TP/(TP+FP) and recall:")
        for name, p, r in zip(class_names, self.precision, self.recall):
            lines.append(f"  {name:>{width}}  precision {p:6.2f}%  recall {r:6.2f}%")
        return "\n".join(lines)


def metrics_from_predictions(truth, predicted, k: int) -> Metrics:
    truth = np.asarray(truth, dtype=np.int64)
    predicted = np.asarray(predicted, dtype=np.int64)
    if truth.size == 0:
        raise InvalidInputError("cannot evaluate an empty dataset")
    conf = np.zeros((k, k), dtype=np.int64)
    np.add.at(conf, (truth, predicted), 1)
    tp = np.diag(conf)
    col, row = conf.sum(axis=0), conf.sum(axis=1)
    precision = [100.0 * int(t) / int(c) if c else 0.0 for t, c in zip(tp, col)]
    recall = [100.0 * int(t) / int(r) if r else 0.0 for t, r in zip(tp, row)]
    accuracy = 100.0 * int(tp.sum()) / int(truth.size)
    return Metrics(accuracy, conf, precision, recall)


def evaluate(network, dataset: Dataset, batch_size: int = 64) -> Metrics:
    if len(dataset) == 0:
        raise InvalidInputError("cannot evaluate an empty dataset")
    x, y = dataset.arrays()
    probs = network.predict_proba(x, batch_size)
    return metrics_from_predictions(y, probs.argmax(axis=1), network.spec.num_classes)
