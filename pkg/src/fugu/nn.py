"""Small fully-connected network with softmax output, trained by plain SGD.

Hidden layers use ReLU; weights are Glorot-uniform initialised from a seeded
generator. Gradients are computed by hand (no autodiff) and are exact for the
weighted cross-entropy loss, which the gradient-check tests rely on.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

FORMAT_MAGIC = "fugu-mlp"
FORMAT_VERSION = 1

Params = list[tuple[np.ndarray, np.ndarray]]


@dataclass(frozen=True)
class MlpSpec:
    input_dim: int
    hidden_layers: tuple[int, ...] = (64, 64)
    output_dim: int = 21
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(h) for h in self.hidden_layers))
        if self.input_dim <= 0 or any(h <= 0 for h in self.hidden_layers):
            raise ValueError("layer widths must be positive")
        if self.output_dim < 2:
            raise ValueError("output_dim must be at least 2")

    @property
    def widths(self) -> list[int]:
        return [self.input_dim, *self.hidden_layers, self.output_dim]


@dataclass
class Mlp:
    """Network parameters: ``params[l] = (W, b)`` with ``W`` of shape (fan_in, fan_out)."""

    spec: MlpSpec
    params: Params
    variant: str = "full"

    def __post_init__(self):
        widths = self.spec.widths
        if len(self.params) != len(widths) - 1:
            raise ValueError("parameter list does not match spec depth")
        for (w, b), fan_in, fan_out in zip(self.params, widths, widths[1:]):
            if w.shape != (fan_in, fan_out) or b.shape != (fan_out,):
                raise ValueError(
                    f"layer shape {w.shape}/{b.shape} != ({fan_in}, {fan_out})"
                )
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError("non-finite parameter")

    @classmethod
    def init(cls, spec: MlpSpec, variant: str = "full") -> "Mlp":
        rng = np.random.default_rng(spec.seed)
        params = []
        widths = spec.widths
        for fan_in, fan_out in zip(widths, widths[1:]):
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            params.append((w, np.zeros(fan_out)))
        return cls(spec, params, variant)

    @classmethod
    def zeros(cls, spec: MlpSpec, variant: str = "full") -> "Mlp":
        widths = spec.widths
        params = [(np.zeros((a, b)), np.zeros(b)) for a, b in zip(widths, widths[1:])]
        return cls(spec, params, variant)

    def copy(self) -> "Mlp":
        return Mlp(self.spec, [(w.copy(), b.copy()) for w, b in self.params], self.variant)

    def flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.params])

    def same_weights(self, other: "Mlp") -> bool:
        return self.spec == other.spec and all(
            np.array_equal(w1, w2) and np.array_equal(b1, b2)
            for (w1, b1), (w2, b2) in zip(self.params, other.params)
        )


def _check_input(net: Mlp, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != net.spec.input_dim:
        raise ValueError(
            f"input dimension {x.shape[-1]} does not match network input {net.spec.input_dim}"
        )
    return x


def forward(net: Mlp, x) -> np.ndarray:
    """Logits for one input vector or a (batch, input_dim) matrix."""
    h = _check_input(net, x)
    last = len(net.params) - 1
    for i, (w, b) in enumerate(net.params):
        h = h @ w + b
        if i < last:
            h = np.maximum(h, 0.0)
    return h


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=float)
    z = z - np.max(z, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def predict_proba(net: Mlp, x) -> np.ndarray:
    return softmax(forward(net, x))


def _batch_loss_grad(net: Mlp, x: np.ndarray, targets: np.ndarray,
                     weights: np.ndarray) -> tuple[float, Params]:
    """Summed weighted cross-entropy over a batch and its exact gradient."""
    activations = [x]
    pre = []
    h = x
    last = len(net.params) - 1
    for i, (w, b) in enumerate(net.params):
        z = h @ w + b
        pre.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        activations.append(h)

    logp = log_softmax(pre[-1])
    rows = np.arange(len(targets))
    loss = float(-np.sum(weights * logp[rows, targets]))

    delta = np.exp(logp)
    delta[rows, targets] -= 1.0
    delta *= weights[:, None]

    grads: Params = [None] * len(net.params)  # type: ignore[list-item]
    for i in range(last, -1, -1):
        w, _ = net.params[i]
        grads[i] = (activations[i].T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ w.T) * (pre[i - 1] > 0)
    return loss, grads


def cross_entropy_grad(net: Mlp, x, target_bin: int, weight: float = 1.0) -> tuple[float, Params]:
    """Weighted cross-entropy ``-weight * ln p[target_bin]`` and its parameter gradients."""
    if not (0 <= target_bin < net.spec.output_dim):
        raise ValueError(f"target bin {target_bin} out of range")
    x = _check_input(net, x).reshape(1, -1)
    return _batch_loss_grad(net, x, np.array([target_bin]), np.array([float(weight)]))


def sgd_step(net: Mlp, grads: Params, learning_rate: float) -> Mlp:
    if len(grads) != len(net.params):
        raise ValueError("gradient list does not match network depth")
    params = []
    for (w, b), (gw, gb) in zip(net.params, grads):
        if gw.shape != w.shape or gb.shape != b.shape:
            raise ValueError("gradient shape mismatch")
        if not (np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise FloatingPointError("non-finite gradient")
        params.append((w - learning_rate * gw, b - learning_rate * gb))
    return Mlp(net.spec, params, net.variant)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-2
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("batch_size and epochs must be positive")


@dataclass
class TrainReport:
    examples: int
    epoch_losses: list[float] = field(default_factory=list)
    warm_started: bool = False

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1] if self.epoch_losses else float("nan")


def as_arrays(dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Accept a list of ``(input, target_bin, weight)`` or a ready (X, y, w) triple."""
    if isinstance(dataset, tuple) and len(dataset) == 3 and isinstance(dataset[0], np.ndarray):
        x, y, w = dataset
        return np.asarray(x, float), np.asarray(y, int), np.asarray(w, float)
    rows = list(dataset)
    if not rows:
        return np.zeros((0, 0)), np.zeros(0, int), np.zeros(0)
    x = np.array([r[0] for r in rows], dtype=float)
    y = np.array([r[1] for r in rows], dtype=int)
    w = np.array([r[2] for r in rows], dtype=float)
    return x, y, w


def train(net: Mlp, dataset, config: TrainConfig = TrainConfig(),
          warm_start: Optional[Mlp] = None) -> tuple[Mlp, TrainReport]:
    """Minibatch SGD on the weighted cross-entropy.

    Each epoch reshuffles with a generator seeded from ``config.seed``; the
    result is bit-for-bit reproducible for fixed inputs. When ``warm_start``
    is given, training starts from its parameters instead of ``net``'s.
    """
    x, y, w = as_arrays(dataset)
    if len(y) == 0:
        raise ValueError("cannot train on an empty dataset")
    start = warm_start if warm_start is not None else net
    if start.spec.input_dim != x.shape[1] or start.spec.widths != net.spec.widths:
        raise ValueError("dataset / warm-start dimensions do not match the network")
    if np.any(y < 0) or np.any(y >= net.spec.output_dim):
        raise ValueError("target bin out of range")

    params = [(pw.copy(), pb.copy()) for pw, pb in start.params]
    rng = np.random.default_rng(config.seed)
    report = TrainReport(examples=len(y), warm_started=warm_start is not None)
    n = len(y)
    scratch = Mlp(net.spec, params, net.variant)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            scratch.params = params
            loss, grads = _batch_loss_grad(scratch, x[idx], y[idx], w[idx])
            total += loss
            scale = config.learning_rate / len(idx)
            for (pw, pb), (gw, gb) in zip(params, grads):
                pw -= scale * gw
                pb -= scale * gb
        if not all(np.all(np.isfinite(pw)) for pw, _ in params):
            raise FloatingPointError("training diverged")
        report.epoch_losses.append(total / n)
    return Mlp(net.spec, params, net.variant), report


def mean_cross_entropy(net: Mlp, x: np.ndarray, y: np.ndarray) -> float:
    logp = log_softmax(forward(net, x))
    return float(-np.mean(logp[np.arange(len(y)), y]))


# -- serialization ----------------------------------------------------------

def dumps(net: Mlp) -> str:
    """Text form: header lines, then one line per weight row and one per bias.

    Floats are written with ``repr`` so that loading reproduces every bit.
    """
    out = io.StringIO()
    spec = net.spec
    out.write(f"{FORMAT_MAGIC} {FORMAT_VERSION}\n")
    out.write(f"variant {net.variant}\n")
    out.write(f"input_dim {spec.input_dim}\n")
    out.write("hidden " + " ".join(str(h) for h in spec.hidden_layers) + "\n")
    out.write(f"output_dim {spec.output_dim}\n")
    out.write(f"seed {spec.seed}\n")
    for i, (w, b) in enumerate(net.params):
        out.write(f"layer {i} {w.shape[0]} {w.shape[1]}\n")
        for row in w:
            out.write(" ".join(repr(float(v)) for v in row) + "\n")
        out.write(" ".join(repr(float(v)) for v in b) + "\n")
    return out.getvalue()


def loads(text: str) -> Mlp:
    lines = iter(text.splitlines())

    def header(key: str) -> list[str]:
        parts = next(lines).split()
        if not parts or parts[0] != key:
            raise ValueError(f"model file: expected '{key}' line")
        return parts[1:]

    magic = header(FORMAT_MAGIC)
    if int(magic[0]) != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {magic[0]}")
    variant = header("variant")[0]
    input_dim = int(header("input_dim")[0])
    hidden = tuple(int(h) for h in header("hidden"))
    output_dim = int(header("output_dim")[0])
    seed = int(header("seed")[0])
    spec = MlpSpec(input_dim, hidden, output_dim, seed)
    params = []
    for i, (fan_in, fan_out) in enumerate(zip(spec.widths, spec.widths[1:])):
        idx, rows, cols = (int(v) for v in header("layer"))
        if (idx, rows, cols) != (i, fan_in, fan_out):
            raise ValueError(f"model file: unexpected layer header {idx} {rows} {cols}")
        w = np.array([[float(v) for v in next(lines).split()] for _ in range(rows)])
        b = np.array([float(v) for v in next(lines).split()])
        params.append((w.reshape(rows, cols), b))
    return Mlp(spec, params, variant)


def save(net: Mlp, path) -> None:
    Path(path).write_text(dumps(net), encoding="utf-8")


def load(path) -> Mlp:
    return loads(Path(path).read_text(encoding="utf-8"))
