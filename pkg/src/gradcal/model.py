"""Differentiable model zoo with exact analytic gradients.

Three model kinds share one flat-parameter interface:

* ``ridge-quadratic`` -- scalar linear predictor with squared loss and L2
  penalty; the loss is an exact quadratic, which gives closed-form optima
  and curvature constants for convergence experiments.
* ``softmax-linear``  -- multinomial logistic regression (weights + bias).
* ``mlp-1hidden``     -- one tanh hidden layer feeding a softmax layer.

All losses are means over the batch, with the L2 penalty folded into the
per-sample loss, so the gradient of a batch is the exact mean of per-sample
gradients. Parameters are flat float64 vectors of length ``param_dim``.
Labels are 1-based integers in ``{1..class_count}``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

from .errors import ConfigError

MODEL_KINDS = ("ridge-quadratic", "softmax-linear", "mlp-1hidden")


@dataclass(frozen=True)
class Sample:
    """One labeled observation: feature vector plus 1-based class label."""

    features: np.ndarray  # (d,)
    label: int


class LabeledBatch:
    """Non-empty ordered collection of samples, stored as stacked arrays."""

    __slots__ = ("x", "y")

    def __init__(self, x: np.ndarray, y: np.ndarray):
        x = np.ascontiguousarray(x, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.int64)
        if x.ndim != 2:
            raise ConfigError(f"batch features must be 2-D, got shape {x.shape}")
        if x.shape[0] == 0:
            raise ConfigError("batch must contain at least one sample")
        if y.shape != (x.shape[0],):
            raise ConfigError(f"labels shape {y.shape} does not match {x.shape[0]} rows")
        if not np.all(np.isfinite(x)):
            raise ConfigError("batch features contain non-finite values")
        self.x = x
        self.y = y

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "LabeledBatch":
        samples = list(samples)
        if not samples:
            raise ValueError("cannot build a batch from zero samples")
        x = np.stack([np.asarray(s.features, dtype=np.float64) for s in samples])
        y = np.array([s.label for s in samples], dtype=np.int64)
        return cls(x, y)

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def __len__(self) -> int:
        return self.x.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(features=self.x[i].copy(), label=int(self.y[i]))

    def __iter__(self) -> Iterator[Sample]:
        for i in range(len(self)):
            yield self[i]

    def subset(self, indices: np.ndarray) -> "LabeledBatch":
        return LabeledBatch(self.x[indices], self.y[indices])

    def samples(self) -> list[Sample]:
        return list(self)


Dataset = Union[LabeledBatch, Sequence[Sample]]


def as_batch(data: Dataset) -> LabeledBatch:
    """Normalize a dataset (batch or sample sequence) to a LabeledBatch."""
    if isinstance(data, LabeledBatch):
        return data
    samples = list(data)
    if not samples:
        raise ValueError("dataset is empty")
    return LabeledBatch.from_samples(samples)


def concat_batches(parts: Iterable[LabeledBatch]) -> LabeledBatch:
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to concatenate")
    return LabeledBatch(
        np.concatenate([p.x for p in parts], axis=0),
        np.concatenate([p.y for p in parts], axis=0),
    )


@dataclass(frozen=True)
class ModelSpec:
    """Model architecture description; parameter dimension is derived."""

    kind: str
    input_dim: int
    class_count: int
    hidden_width: int = 0
    l2_coefficient: float = 0.0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigError(f"unknown model kind {self.kind!r}; valid: {MODEL_KINDS}")
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be >= 1, got {self.input_dim}")
        if self.class_count < 1:
            raise ConfigError(f"class_count must be >= 1, got {self.class_count}")
        if self.kind == "mlp-1hidden" and self.hidden_width < 1:
            raise ConfigError("mlp-1hidden requires hidden_width >= 1")
        if self.l2_coefficient < 0:
            raise ConfigError(f"l2_coefficient must be >= 0, got {self.l2_coefficient}")

    @property
    def param_dim(self) -> int:
        d, k, h = self.input_dim, self.class_count, self.hidden_width
        if self.kind == "ridge-quadratic":
            return d
        if self.kind == "softmax-linear":
            return k * (d + 1)
        return h * (d + 1) + k * (h + 1)


@dataclass(frozen=True)
class ConvexityParams:
    """Smoothness and strong-convexity constants of the composed loss.

    ``estimated`` is True when the constants come from sampled parameter
    pairs rather than a closed form.
    """

    smoothness: float
    strong_convexity: float
    estimated: bool = False

    def __post_init__(self):
        if not (self.smoothness >= self.strong_convexity > 0):
            raise ValueError(
                f"need L >= gamma > 0, got L={self.smoothness}, gamma={self.strong_convexity}"
            )


def _check_theta(model: ModelSpec, theta: np.ndarray) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if theta.shape != (model.param_dim,):
        raise ConfigError(
            f"parameter shape {theta.shape} does not match param_dim {model.param_dim}"
        )
    if not np.all(np.isfinite(theta)):
        raise ConfigError("parameter vector contains non-finite values")
    return theta


def _check_batch(model: ModelSpec, batch: LabeledBatch) -> None:
    if batch.dim != model.input_dim:
        raise ConfigError(
            f"batch dimension {batch.dim} does not match model input_dim {model.input_dim}"
        )


def _unpack_softmax(model: ModelSpec, theta: np.ndarray):
    d, k = model.input_dim, model.class_count
    return theta[: k * d].reshape(k, d), theta[k * d :]


def _unpack_mlp(model: ModelSpec, theta: np.ndarray):
    d, k, h = model.input_dim, model.class_count, model.hidden_width
    o = 0
    w1 = theta[o : o + h * d].reshape(h, d)
    o += h * d
    b1 = theta[o : o + h]
    o += h
    w2 = theta[o : o + k * h].reshape(k, h)
    o += k * h
    b2 = theta[o : o + k]
    return w1, b1, w2, b2


def _log_probs(z: np.ndarray) -> np.ndarray:
    zs = z - z.max(axis=1, keepdims=True)
    return zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))


def scores(model: ModelSpec, batch: LabeledBatch, theta: np.ndarray) -> np.ndarray:
    """Per-class scores, shape (n, class_count); prediction is the argmax.

    ridge-quadratic scores a class by proximity of its scalar prediction to
    the class index, so argmax picks the nearest label.
    """
    theta = _check_theta(model, theta)
    _check_batch(model, batch)
    if model.kind == "softmax-linear":
        w, b = _unpack_softmax(model, theta)
        return batch.x @ w.T + b
    if model.kind == "mlp-1hidden":
        w1, b1, w2, b2 = _unpack_mlp(model, theta)
        hidden = np.tanh(batch.x @ w1.T + b1)
        return hidden @ w2.T + b2
    pred = batch.x @ theta
    classes = np.arange(1, model.class_count + 1, dtype=np.float64)
    return -((pred[:, None] - classes[None, :]) ** 2)


def loss(model: ModelSpec, batch: LabeledBatch, theta: np.ndarray) -> float:
    """Mean per-sample loss over the batch (L2 penalty included)."""
    theta = _check_theta(model, theta)
    _check_batch(model, batch)
    penalty = 0.5 * model.l2_coefficient * float(theta @ theta)
    if model.kind == "ridge-quadratic":
        r = batch.x @ theta - batch.y.astype(np.float64)
        return float(0.5 * np.mean(r * r)) + penalty
    z = scores(model, batch, theta)
    logp = _log_probs(z)
    n = len(batch)
    return float(-np.mean(logp[np.arange(n), batch.y - 1])) + penalty


def gradient(model: ModelSpec, batch: LabeledBatch, theta: np.ndarray) -> np.ndarray:
    """Mean per-sample analytic gradient, same shape as theta."""
    theta = _check_theta(model, theta)
    _check_batch(model, batch)
    lam = model.l2_coefficient
    n = len(batch)
    if model.kind == "ridge-quadratic":
        r = batch.x @ theta - batch.y.astype(np.float64)
        return batch.x.T @ r / n + lam * theta

    if model.kind == "softmax-linear":
        w, b = _unpack_softmax(model, theta)
        z = batch.x @ w.T + b
        p = np.exp(_log_probs(z))
        p[np.arange(n), batch.y - 1] -= 1.0
        p /= n
        gw = p.T @ batch.x
        gb = p.sum(axis=0)
        return np.concatenate([gw.ravel(), gb]) + lam * theta

    w1, b1, w2, b2 = _unpack_mlp(model, theta)
    hidden = np.tanh(batch.x @ w1.T + b1)
    z = hidden @ w2.T + b2
    p = np.exp(_log_probs(z))
    p[np.arange(n), batch.y - 1] -= 1.0
    p /= n
    gw2 = p.T @ hidden
    gb2 = p.sum(axis=0)
    gh = p @ w2
    gpre = gh * (1.0 - hidden * hidden)
    gw1 = gpre.T @ batch.x
    gb1 = gpre.sum(axis=0)
    return np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2]) + lam * theta


def full_gradient(model: ModelSpec, dataset: Dataset, theta: np.ndarray) -> np.ndarray:
    """Mean gradient over an entire dataset (undefined for zero samples)."""
    return gradient(model, as_batch(dataset), theta)


def finite_diff_gradient(
    model: ModelSpec, batch: LabeledBatch, theta: np.ndarray, step: float
) -> np.ndarray:
    """Central-difference gradient approximation; test oracle only."""
    if step <= 0:
        raise ValueError(f"step must be > 0, got {step}")
    theta = _check_theta(model, theta)
    out = np.empty_like(theta)
    for i in range(theta.size):
        hi = theta.copy()
        lo = theta.copy()
        hi[i] += step
        lo[i] -= step
        out[i] = (loss(model, batch, hi) - loss(model, batch, lo)) / (2.0 * step)
    return out


def predict_accuracy(model: ModelSpec, dataset: Dataset, theta: np.ndarray) -> float:
    """Fraction of samples whose argmax class score equals the label.

    Ties go to the lowest class index (np.argmax picks the first maximum).
    """
    batch = as_batch(dataset)
    s = scores(model, batch, theta)
    pred = np.argmax(s, axis=1) + 1
    return float(np.mean(pred == batch.y))


def convexity_params(
    model: ModelSpec,
    dataset: Dataset,
    n_probe_pairs: int = 64,
    probe_radius: float = 1.0,
    seed: int = 0,
) -> ConvexityParams:
    """Curvature constants of the composed loss on a dataset.

    ridge-quadratic is closed form: the Hessian is X^T X / n + l2 * I, so the
    constants are its extreme eigenvalues. For the classifiers a smoothness
    estimate is taken as the max gradient-difference ratio over sampled
    parameter pairs, and strong convexity comes from the L2 term alone;
    both are flagged ``estimated``.
    """
    batch = as_batch(dataset)
    _check_batch(model, batch)
    lam = model.l2_coefficient
    if model.kind == "ridge-quadratic":
        second_moment = batch.x.T @ batch.x / len(batch)
        eigs = np.linalg.eigvalsh(second_moment)
        lo, hi = float(eigs[0]) + lam, float(eigs[-1]) + lam
        if lo <= 0:
            raise ValueError(
                f"data second moment is singular (min eigenvalue {eigs[0]:.3e}) and l2={lam}"
            )
        return ConvexityParams(smoothness=hi, strong_convexity=lo)

    if lam <= 0:
        raise ValueError(
            "strong convexity of a classifier loss is certified only by the L2 term; "
            "set l2_coefficient > 0"
        )
    rng = np.random.default_rng(seed)
    p = model.param_dim
    ratio = 0.0
    for _ in range(n_probe_pairs):
        t1 = probe_radius * rng.standard_normal(p)
        t2 = probe_radius * rng.standard_normal(p)
        diff = np.linalg.norm(t1 - t2)
        if diff == 0.0:
            continue
        g1 = gradient(model, batch, t1)
        g2 = gradient(model, batch, t2)
        ratio = max(ratio, float(np.linalg.norm(g1 - g2)) / diff)
    return ConvexityParams(smoothness=max(ratio, lam), strong_convexity=lam, estimated=True)


def init_params(model: ModelSpec, rng: np.random.Generator | None = None) -> np.ndarray:
    """Initial parameter vector: zeros for the convex kinds, scaled Gaussian
    hidden weights for the MLP (zeros would pin it to a symmetric saddle)."""
    p = model.param_dim
    if model.kind != "mlp-1hidden":
        return np.zeros(p)
    if rng is None:
        raise ConfigError("mlp-1hidden initialization requires a random generator")
    d, k, h = model.input_dim, model.class_count, model.hidden_width
    theta = np.zeros(p)
    theta[: h * d] = rng.standard_normal(h * d) / np.sqrt(d)
    o = h * d + h
    theta[o : o + k * h] = rng.standard_normal(k * h) / np.sqrt(h)
    return theta


def ridge_minimizer(model: ModelSpec, dataset: Dataset) -> np.ndarray:
    """Closed-form optimum of the ridge-quadratic loss on a dataset."""
    if model.kind != "ridge-quadratic":
        raise ConfigError("closed-form optimum exists only for ridge-quadratic")
    batch = as_batch(dataset)
    _check_batch(model, batch)
    n = len(batch)
    a = batch.x.T @ batch.x / n + model.l2_coefficient * np.eye(model.input_dim)
    b = batch.x.T @ batch.y.astype(np.float64) / n
    return np.linalg.solve(a, b)
