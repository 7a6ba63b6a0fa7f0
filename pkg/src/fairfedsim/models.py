"""Small differentiable classifiers trained with mini-batch SGD.

Two architectures: logistic regression ("linear") and a one-hidden-layer
ReLU network ("mlp"). Parameters live in one flat float64 vector (layer
weights row-major, then biases) so federated averaging and proximal terms
are plain vector arithmetic.

Training minimizes mean binary cross-entropy, optionally plus a proximal
penalty (mu/2)*||theta - anchor||^2 tying the parameters to an anchor
model. Predicted label is 1 iff the predicted probability >= 0.5 (a tie at
exactly 0.5 maps to 1).
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple, Union

import numpy as np

from .data import ClientDataset
from .errors import DivergenceError, ValidationError
from .seeds import make_rng

PROB_CLAMP = 1e-12


@dataclass(frozen=True)
class Architecture:
    kind: str  # 'linear' | 'mlp'
    input_dim: int
    hidden: Optional[int] = None

    def __post_init__(self):
        if self.kind not in ("linear", "mlp"):
            raise ValidationError(f"unknown architecture kind {self.kind!r}")
        if self.input_dim < 1:
            raise ValidationError("input_dim must be >= 1")
        if self.kind == "mlp" and (self.hidden is None or self.hidden < 1):
            raise ValidationError("mlp needs hidden >= 1")
        if self.kind == "linear" and self.hidden is not None:
            raise ValidationError("linear architecture takes no hidden size")

    @property
    def param_count(self) -> int:
        d = self.input_dim
        if self.kind == "linear":
            return d + 1
        h = self.hidden
        return h * d + h + h + 1  # W1, b1, w2, b2


@dataclass(frozen=True, eq=False)
class ModelParams:
    architecture: Architecture
    params: np.ndarray  # flat float64, read-only

    def __post_init__(self):
        vec = np.asarray(self.params, dtype=np.float64).ravel()
        if vec.shape[0] != self.architecture.param_count:
            raise ValidationError(
                f"expected {self.architecture.param_count} params, got {vec.shape[0]}"
            )
        if not np.isfinite(vec).all():
            raise ValidationError("params must be finite")
        vec = vec.copy()
        vec.setflags(write=False)
        object.__setattr__(self, "params", vec)

    def with_params(self, vec: np.ndarray) -> "ModelParams":
        return ModelParams(self.architecture, vec)


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    return a.architecture == b.architecture and np.array_equal(a.params, b.params)


def init_params(architecture: Architecture, seed: int) -> ModelParams:
    """Weights i.i.d. uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases 0."""
    rng = make_rng(seed)
    d = architecture.input_dim
    if architecture.kind == "linear":
        bound = 1.0 / np.sqrt(d)
        vec = np.concatenate([rng.uniform(-bound, bound, size=d), [0.0]])
        return ModelParams(architecture, vec)
    h = architecture.hidden
    b1 = 1.0 / np.sqrt(d)
    b2 = 1.0 / np.sqrt(h)
    vec = np.concatenate(
        [
            rng.uniform(-b1, b1, size=h * d),  # W1
            np.zeros(h),                       # b1
            rng.uniform(-b2, b2, size=h),      # w2
            [0.0],                             # b2
        ]
    )
    return ModelParams(architecture, vec)


def _unpack(model: ModelParams):
    arch, p = model.architecture, model.params
    d = arch.input_dim
    if arch.kind == "linear":
        return p[:d], p[d]
    h = arch.hidden
    W1 = p[: h * d].reshape(h, d)
    b1 = p[h * d : h * d + h]
    w2 = p[h * d + h : h * d + 2 * h]
    b2 = p[-1]
    return W1, b1, w2, b2


def _as_features(model: ModelParams, features) -> np.ndarray:
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != model.architecture.input_dim:
        raise ValidationError(
            f"feature dim {X.shape[1]} does not match model input_dim "
            f"{model.architecture.input_dim}"
        )
    return X


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def predict_logits(model: ModelParams, features) -> np.ndarray:
    X = _as_features(model, features)
    if model.architecture.kind == "linear":
        w, b = _unpack(model)
        return X @ w + b
    W1, b1, w2, b2 = _unpack(model)
    hidden = np.maximum(X @ W1.T + b1, 0.0)
    return hidden @ w2 + b2


def predict_proba(model: ModelParams, features) -> np.ndarray:
    """Sigmoid of the final logit; scalar in, scalar-shaped array out."""
    return _sigmoid(predict_logits(model, features))


def predict_labels(model: ModelParams, features) -> np.ndarray:
    return (predict_proba(model, features) >= 0.5).astype(np.int8)


DataLike = Union[ClientDataset, Tuple[np.ndarray, np.ndarray]]


def _as_xy(data: DataLike):
    if isinstance(data, ClientDataset):
        return data.features, data.labels.astype(np.float64)
    X, y = data
    return np.atleast_2d(np.asarray(X, dtype=np.float64)), np.asarray(y, dtype=np.float64)


@dataclass(frozen=True)
class ProximalTerm:
    mu: float
    anchor: ModelParams

    def __post_init__(self):
        if self.mu < 0:
            raise ValidationError("proximal mu must be >= 0")


def loss(model: ModelParams, data: DataLike, proximal: Optional[ProximalTerm] = None) -> float:
    """Mean binary cross-entropy, probabilities clamped away from {0, 1}."""
    X, y = _as_xy(data)
    if len(y) == 0:
        raise ValidationError("loss needs a non-empty dataset")
    p = np.clip(predict_proba(model, X), PROB_CLAMP, 1.0 - PROB_CLAMP)
    value = float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))
    if proximal is not None and proximal.mu:
        diff = model.params - proximal.anchor.params
        value += 0.5 * proximal.mu * float(diff @ diff)
    return value


def misclassification_rate(model: ModelParams, data: DataLike) -> float:
    X, y = _as_xy(data)
    if len(y) == 0:
        raise ValidationError("misclassification_rate needs a non-empty dataset")
    return float(np.mean(predict_labels(model, X) != y.astype(np.int8)))


def gradient(
    model: ModelParams, data: DataLike, proximal: Optional[ProximalTerm] = None
) -> np.ndarray:
    """Analytic gradient of the (mean cross-entropy + proximal) objective.

    ReLU uses subgradient 0 at exactly 0.
    """
    X, y = _as_xy(data)
    n = len(y)
    if n == 0:
        raise ValidationError("gradient needs a non-empty batch")
    arch = model.architecture
    if arch.kind == "linear":
        w, b = _unpack(model)
        p = _sigmoid(X @ w + b)
        delta = (p - y) / n
        grad = np.concatenate([X.T @ delta, [delta.sum()]])
    else:
        W1, b1, w2, b2 = _unpack(model)
        z1 = X @ W1.T + b1
        hdn = np.maximum(z1, 0.0)
        p = _sigmoid(hdn @ w2 + b2)
        delta = (p - y) / n                      # (n,)
        g_w2 = hdn.T @ delta                     # (h,)
        g_b2 = delta.sum()
        dz1 = np.outer(delta, w2) * (z1 > 0)     # (n, h)
        g_W1 = dz1.T @ X                         # (h, d)
        g_b1 = dz1.sum(axis=0)
        grad = np.concatenate([g_W1.ravel(), g_b1, g_w2, [g_b2]])
    if proximal is not None and proximal.mu:
        grad = grad + proximal.mu * (model.params - proximal.anchor.params)
    return grad


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 1
    learning_rate: float = 0.05
    batch_size: int = 64
    seed: int = 0
    proximal: Optional[ProximalTerm] = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ValidationError("epochs must be >= 1")
        if self.learning_rate < 0:
            raise ValidationError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")

    def with_seed(self, seed: int) -> "TrainConfig":
        return replace(self, seed=seed)

    def with_proximal(self, proximal: Optional[ProximalTerm]) -> "TrainConfig":
        return replace(self, proximal=proximal)


def sgd_train(model: ModelParams, dataset: ClientDataset, config: TrainConfig) -> ModelParams:
    """Mini-batch SGD with seeded shuffling; deterministic given config.

    Raises DivergenceError naming the epoch if the training loss goes
    non-finite.
    """
    if dataset.n < 1:
        raise ValidationError("sgd_train needs a non-empty dataset")
    if config.learning_rate == 0.0:
        return model
    X = dataset.features
    y = dataset.labels.astype(np.float64)
    rng = make_rng(config.seed)
    theta = model.params.copy()
    work = model.with_params(theta)
    # overflow here is not a numpy bug but divergence; detected and reported below
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            order = rng.permutation(dataset.n)
            for start in range(0, dataset.n, config.batch_size):
                idx = order[start : start + config.batch_size]
                g = gradient(work, (X[idx], y[idx]), config.proximal)
                theta = work.params - config.learning_rate * g
                if not np.isfinite(theta).all():
                    raise DivergenceError(
                        f"training diverged at epoch {epoch + 1}: non-finite parameters"
                    )
                work = work.with_params(theta)
            epoch_loss = loss(work, (X, y), config.proximal)
            if not np.isfinite(epoch_loss):
                raise DivergenceError(
                    f"training diverged at epoch {epoch + 1}: loss={epoch_loss}"
                )
    return work


def full_batch_steps(
    model: ModelParams, dataset: ClientDataset, steps: int, learning_rate: float
) -> ModelParams:
    """Plain full-batch gradient descent, used for fine-tuning."""
    if steps < 0:
        raise ValidationError("steps must be >= 0")
    X = dataset.features
    y = dataset.labels.astype(np.float64)
    work = model
    for _ in range(steps):
        g = gradient(work, (X, y))
        work = work.with_params(work.params - learning_rate * g)
    return work
