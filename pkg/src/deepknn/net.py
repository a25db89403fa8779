"""Small fully-connected ReLU classifier trained with Adam, written on numpy.

Three losses are supported, all expressed through a per-example *target
distribution* ``w`` so that the logit gradient is always ``(softmax(z) - w) / B``:

* :class:`CrossEntropy` -- ``w`` is the one-hot observed label.
* :class:`CorrectedCrossEntropy` -- the model's softmax ``p`` over true classes
  is pushed through a row-stochastic corruption matrix ``C`` (``q = C^T p``)
  and scored against the observed label; ``w`` is the posterior over the true
  class, ``w_t ∝ p_t C[t, y]``.  With ``C = I`` this is exactly cross-entropy.
* :class:`SoftLabelCrossEntropy` -- ``w`` is a given row-stochastic matrix.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

FORMAT_NAME = "deepknn.DenseNet"
FORMAT_VERSION = 1


class TrainingError(RuntimeError):
    def __init__(self, message: str, step: int | None = None):
        self.step = step
        super().__init__(message if step is None else f"step {step}: {message}")


@dataclass(frozen=True)
class Architecture:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        widths = self.widths
        if any(w < 1 for w in widths):
            raise ValueError(f"all layer widths must be >= 1, got {widths}")

    @property
    def widths(self) -> tuple[int, ...]:
        return (int(self.input_dim), *self.hidden, int(self.output_dim))

    @property
    def num_params(self) -> int:
        w = self.widths
        return sum(a * b + b for a, b in zip(w[:-1], w[1:]))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 128
    epochs: int = 100
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be nonnegative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be positive")


def logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=1, keepdims=True)))[:, 0]


def softmax_rows(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class DenseNet:
    arch: Architecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def params(self) -> list[np.ndarray]:
        out = []
        for W, b in zip(self.weights, self.biases):
            out.extend((W, b))
        return out

    def copy(self) -> "DenseNet":
        return DenseNet(self.arch, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def _check_input(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.arch.input_dim:
            raise ValueError(f"input has dimension {X.shape[1]}, network expects {self.arch.input_dim}")
        return X

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        """Logits plus the per-layer inputs needed for backpropagation."""
        h = X
        cache = [h]
        last = len(self.weights) - 1
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            a = h @ W + b
            if i == last:
                return a, cache
            h = np.maximum(a, 0.0)
            cache.append(h)
        raise AssertionError("network has no layers")

    def backward(self, cache: list[np.ndarray], dz: np.ndarray) -> list[np.ndarray]:
        grads: list[np.ndarray] = []
        delta = dz
        for i in range(len(self.weights) - 1, -1, -1):
            h = cache[i]
            grads.append(delta.sum(axis=0))
            grads.append(h.T @ delta)
            if i:
                delta = (delta @ self.weights[i].T) * (h > 0)
        grads.reverse()
        return grads

    def logits(self, X) -> np.ndarray:
        return self.forward(self._check_input(X))[0]

    def softmax(self, X) -> np.ndarray:
        return softmax_rows(self.logits(X))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)

    def to_dict(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "architecture": {
                "input_dim": self.arch.input_dim,
                "hidden": list(self.arch.hidden),
                "output_dim": self.arch.output_dim,
            },
            "weights": [W.tolist() for W in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DenseNet":
        if doc.get("format") != FORMAT_NAME:
            raise ValueError(f"not a serialized DenseNet (format={doc.get('format')!r})")
        if doc.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported DenseNet format version {doc.get('version')!r}")
        a = doc["architecture"]
        arch = Architecture(a["input_dim"], tuple(a["hidden"]), a["output_dim"])
        weights = [np.array(W, dtype=np.float64).reshape(m, n) for W, m, n in
                   zip(doc["weights"], arch.widths[:-1], arch.widths[1:])]
        biases = [np.array(b, dtype=np.float64).reshape(n) for b, n in zip(doc["biases"], arch.widths[1:])]
        return cls(arch, weights, biases)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "DenseNet":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def init(arch: Architecture, seed: int = 0) -> DenseNet:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(arch.widths[:-1], arch.widths[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return DenseNet(arch, weights, biases)


# losses ---------------------------------------------------------------------

class CrossEntropy:
    def __call__(self, z: np.ndarray, y: np.ndarray, rows: np.ndarray) -> tuple[float, np.ndarray]:
        B = len(z)
        lse = logsumexp(z)
        loss = lse - z[np.arange(B), y]
        dz = softmax_rows(z)
        dz[np.arange(B), y] -= 1.0
        return float(loss.mean()), dz / B


class CorrectedCrossEntropy:
    """Cross-entropy of the observed label against ``C^T softmax(z)``.

    ``mask`` (one flag per training example) restricts the correction to the
    flagged rows; the others use plain cross-entropy.
    """

    def __init__(self, matrix, mask=None):
        C = np.array(matrix, dtype=np.float64)
        if C.ndim != 2 or C.shape[0] != C.shape[1]:
            raise ValueError(f"corruption matrix must be square, got {C.shape}")
        if not np.all(np.isfinite(C)) or np.any(C < 0):
            raise ValueError("corruption matrix entries must be finite and nonnegative")
        if not np.allclose(C.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise ValueError("corruption matrix rows must sum to 1")
        self.matrix = C
        with np.errstate(divide="ignore"):
            self._log_matrix = np.log(C)
        self.mask = None if mask is None else np.asarray(mask, dtype=bool)

    def __call__(self, z, y, rows):
        B = len(z)
        p = softmax_rows(z)
        lse = logsumexp(z)
        target_lse = z[np.arange(B), y] + 0.0
        w = np.zeros_like(p)
        w[np.arange(B), y] = 1.0
        sel = np.arange(B) if self.mask is None else np.nonzero(self.mask[rows])[0]
        if len(sel):
            # joint log-score of (true class t, observed label y): z_t + log C[t, y]
            joint = z[sel] + self._log_matrix[:, y[sel]].T
            target_lse[sel] = logsumexp(joint)
            w[sel] = softmax_rows(joint)
        loss = lse - target_lse
        return float(loss.mean()), (p - w) / B


class SoftLabelCrossEntropy:
    def __init__(self, targets):
        S = np.array(targets, dtype=np.float64)
        if S.ndim != 2 or np.any(S < 0) or not np.allclose(S.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise ValueError("soft targets must be a row-stochastic matrix")
        self.targets = S

    def __call__(self, z, y, rows):
        B = len(z)
        S = self.targets[rows]
        lse = logsumexp(z)
        loss = lse * S.sum(axis=1) - (S * z).sum(axis=1)
        return float(loss.mean()), (softmax_rows(z) - S) / B


# training -------------------------------------------------------------------

def train(net: DenseNet, X, y, config: TrainConfig, loss=None) -> DenseNet:
    """Adam on shuffled mini-batches for ``config.epochs`` passes.

    Returns a new network; ``net`` is not modified.  ``y`` may be ``None``
    when ``loss`` is a :class:`SoftLabelCrossEntropy`.
    """
    loss = CrossEntropy() if loss is None else loss
    X = np.asarray(X, dtype=np.float64)
    n = len(X)
    if y is None:
        if not isinstance(loss, SoftLabelCrossEntropy):
            raise ValueError("labels are required unless training on soft targets")
        y = np.argmax(loss.targets, axis=1)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != net.arch.input_dim:
        raise ValueError(f"features of shape {X.shape} do not match input dim {net.arch.input_dim}")
    if len(y) != n:
        raise ValueError(f"{len(y)} labels for {n} examples")
    if n and (y.min() < 0 or y.max() >= net.arch.output_dim):
        raise ValueError(f"labels must lie in [0, {net.arch.output_dim})")
    if isinstance(loss, SoftLabelCrossEntropy) and loss.targets.shape != (n, net.arch.output_dim):
        raise ValueError(f"soft targets have shape {loss.targets.shape}, expected {(n, net.arch.output_dim)}")
    if isinstance(loss, CorrectedCrossEntropy):
        if loss.matrix.shape[0] != net.arch.output_dim:
            raise ValueError("corruption matrix size does not match the number of classes")
        if loss.mask is not None and len(loss.mask) != n:
            raise ValueError("correction mask needs one flag per example")

    out = net.copy()
    if config.epochs == 0 or n == 0:
        return out
    params = out.params()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(config.seed)
    b1, b2, lr, eps = config.beta1, config.beta2, config.learning_rate, config.eps
    step = 0
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.batch_size):
            rows = order[start:start + config.batch_size]
            z, cache = out.forward(X[rows])
            value, dz = loss(z, y[rows], rows)
            step += 1
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss {value}", step)
            grads = out.backward(cache, dz)
            c1 = 1.0 - b1 ** step
            c2 = 1.0 - b2 ** step
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= b1
                mi += (1.0 - b1) * g
                vi *= b2
                vi += (1.0 - b2) * (g * g)
                p -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
        if not all(np.all(np.isfinite(p)) for p in params):
            raise TrainingError("parameters became non-finite", step)
    return out


def train_dataset(arch: Architecture, data, config: TrainConfig, loss=None) -> DenseNet:
    """Initialise from ``config.seed`` and train on a :class:`~deepknn.data.Dataset`."""
    return train(init(arch, config.seed), data.features, data.labels, config, loss)


def accuracy(net: DenseNet, data) -> float:
    if data.n == 0:
        raise ValueError("cannot score an empty dataset")
    return float(np.mean(net.predict(data.features) == data.labels))


# numerical validation -------------------------------------------------------

@dataclass(frozen=True)
class GradientCheckReport:
    max_relative_error: float
    max_absolute_error: float
    num_params: int
    tolerance: float
    passed: bool = field(default=False)


def batch_loss(net: DenseNet, X, y, loss=None) -> tuple[float, list[np.ndarray]]:
    loss = CrossEntropy() if loss is None else loss
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    z, cache = net.forward(X)
    value, dz = loss(z, y, np.arange(len(X)))
    return value, net.backward(cache, dz)


def gradient_check(net: DenseNet, X, y, loss=None, tolerance: float = 1e-4, h: float = 1e-5,
                   floor: float = 1e-7) -> GradientCheckReport:
    """Compare backprop gradients of the mean batch loss with central differences.

    The relative error of an entry is ``|a - f| / max(|a| + |f|, floor)``.
    """
    if net.arch.num_params > 10_000:
        raise ValueError("gradient check is meant for small networks (<= 10^4 parameters)")
    work = net.copy()
    _, analytic = batch_loss(work, X, y, loss)
    max_rel = max_abs = 0.0
    for p, g in zip(work.params(), analytic):
        flat = p.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = batch_loss(work, X, y, loss)
            flat[i] = orig - h
            down, _ = batch_loss(work, X, y, loss)
            flat[i] = orig
            fd = (up - down) / (2 * h)
            err = abs(gflat[i] - fd)
            max_abs = max(max_abs, err)
            max_rel = max(max_rel, err / max(abs(gflat[i]) + abs(fd), floor))
    return GradientCheckReport(max_rel, max_abs, net.arch.num_params, tolerance, max_rel < tolerance)


def architecture_for(input_dim: int, num_classes: int, hidden: Sequence[int] = (100,)) -> Architecture:
    return Architecture(input_dim, tuple(hidden), num_classes)


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
