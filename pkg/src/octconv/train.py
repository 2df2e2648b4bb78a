"""Toy classification task and a plain SGD trainer.

The task plants an oriented grating patch in one image quadrant over Gaussian
noise; the label is the quadrant. It is small enough to train on one CPU core
in a minute or two and still needs spatial features, which is all the octave
layers are asked to show here.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .netspec import Net, softmax_cross_entropy


class TrainingDiverged(RuntimeError):
    """Loss became NaN or infinite."""


@dataclass(frozen=True)
class ToyTask:
    seed: int = 0
    n_classes: int = 4
    channels: int = 3
    size: int = 32
    n_samples: int = 256
    patch: int = 10
    noise: float = 1.0
    contrast: float = 1.5

    def __post_init__(self):
        if self.n_classes != 4:
            raise ValueError("the quadrant rule defines exactly 4 classes")
        if self.patch > self.size // 2:
            raise ValueError(f"patch {self.patch} does not fit in a {self.size // 2} px quadrant")

    def sample(self, index):
        """Return ``(image, label)`` for sample ``index``; depends only on (seed, index)."""
        g = rng.stream(self.seed, "toytask", index)
        label = index % self.n_classes
        half = self.size // 2
        img = g.standard_normal((self.channels, self.size, self.size)) * self.noise
        theta = g.uniform(0, np.pi)
        period = g.uniform(3.0, 6.0)
        yy, xx = np.mgrid[0 : self.patch, 0 : self.patch]
        wave = np.cos(2 * np.pi * (xx * np.cos(theta) + yy * np.sin(theta)) / period)
        color = g.choice([-1.0, 1.0], size=self.channels)
        oy = g.integers(0, half - self.patch + 1) + (label // 2) * half
        ox = g.integers(0, half - self.patch + 1) + (label % 2) * half
        img[:, oy : oy + self.patch, ox : ox + self.patch] += self.contrast * color[:, None, None] * wave
        return img, label

    def generate(self, dtype=np.float32):
        """All samples as ``(X of shape (N, C, H, W), y of shape (N,))``; classes are balanced."""
        xs, ys = zip(*(self.sample(i) for i in range(self.n_samples)))
        return np.stack(xs).astype(dtype), np.asarray(ys, dtype=np.int64)


@dataclass
class TrainResult:
    net: Net
    losses: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)
    final_accuracy: float = 0.0
    final_loss: float = 0.0


def cosine_lr(base, step, total):
    if total <= 0:
        return base
    return 0.5 * base * (1.0 + math.cos(math.pi * step / total))


def evaluate(net, x, y, batch_size=64):
    """Return ``(mean loss, accuracy)`` over the full set."""
    loss_sum = 0.0
    correct = 0
    for s in range(0, len(y), batch_size):
        logits = net.forward(x[s : s + batch_size])
        logits = logits.reshape(logits.shape[0], -1)
        loss, _ = softmax_cross_entropy(logits, y[s : s + batch_size])
        loss_sum += loss * logits.shape[0]
        correct += int((logits.argmax(axis=1) == y[s : s + batch_size]).sum())
    return loss_sum / len(y), correct / len(y)


def train_toy(spec, task, epochs=30, lr=0.05, batch_size=32, seed=0, dtype=np.float32, net=None):
    """Minibatch SGD with a cosine-decayed learning rate and softmax cross-entropy.

    No momentum, no weight decay. The run is a pure function of its arguments:
    initial weights come from ``spec.seed`` (or ``net``), batch order from
    ``seed``. ``losses``/``accuracies`` hold per-epoch means over the minibatches
    seen; ``final_*`` come from a clean pass after training.
    """
    net = Net.init(spec, dtype=dtype) if net is None else net
    x, y = task.generate(dtype)
    n = len(y)
    steps_per_epoch = math.ceil(n / batch_size)
    total = epochs * steps_per_epoch
    result = TrainResult(net)
    step = 0
    for epoch in range(epochs):
        order = rng.stream(seed, "shuffle", epoch).permutation(n)
        loss_sum = 0.0
        correct = 0
        for s in range(0, n, batch_size):
            idx = order[s : s + batch_size]
            out, acts = net.forward(x[idx], keep=True)
            logits = out.reshape(out.shape[0], -1)
            loss, g = softmax_cross_entropy(logits, y[idx])
            if not math.isfinite(loss):
                raise TrainingDiverged(f"loss is {loss} at epoch {epoch}, step {step}")
            grads = net.backward(acts, g.astype(out.dtype).reshape(out.shape))
            net.sgd_step(grads, cosine_lr(lr, step, total))
            loss_sum += loss * len(idx)
            correct += int((logits.argmax(axis=1) == y[idx]).sum())
            step += 1
        result.losses.append(loss_sum / n)
        result.accuracies.append(correct / n)
    result.final_loss, result.final_accuracy = evaluate(net, x, y)
    if not math.isfinite(result.final_loss):
        raise TrainingDiverged(f"final loss is {result.final_loss}")
    return result


LOSS_CSV_SCHEMA = "# schema: octconv.loss_curve v1"


def write_loss_csv(result, fh):
    fh.write(LOSS_CSV_SCHEMA + "\n")
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["epoch", "loss", "acc"])
    for e, (loss, acc) in enumerate(zip(result.losses, result.accuracies), 1):
        w.writerow([e, repr(loss), repr(acc)])
