"""Softmax-regression client model with closed-form gradients.

Every client runs the same multinomial logistic regression. Peers exchange
softmax probabilities (never logits), local training uses mean cross-entropy,
and the distillation term is the mean squared distance between the client's
reference-set predictions and the average of its valid neighbours' outputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import InvalidInputError, NumericError

LOG_FLOOR = 1e-12
INIT_SCALE = 0.01

# Row-stochastic matrix (num_samples x num_classes).
Prediction = np.ndarray


@dataclass(frozen=True, eq=False)
class ModelParams:
    weights: np.ndarray  # (num_classes, num_features)
    bias: np.ndarray  # (num_classes,)

    def __post_init__(self):
        if self.weights.ndim != 2 or self.bias.ndim != 1:
            raise InvalidInputError("weights must be 2-D and bias 1-D")
        if self.weights.shape[0] != self.bias.shape[0]:
            raise InvalidInputError(
                f"weights have {self.weights.shape[0]} rows but bias has {self.bias.shape[0]} entries"
            )

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def num_features(self) -> int:
        return self.weights.shape[1]

    @property
    def size(self) -> int:
        return self.weights.size + self.bias.size

    def flatten(self) -> np.ndarray:
        """Row-major weights followed by bias; the layout LSH codes are computed over."""
        return np.concatenate([self.weights.ravel(), self.bias])

    @classmethod
    def from_flat(cls, flat: np.ndarray, num_classes: int, num_features: int) -> "ModelParams":
        flat = np.asarray(flat, dtype=np.float64)
        n_w = num_classes * num_features
        if flat.shape != (n_w + num_classes,):
            raise InvalidInputError(f"flat vector has shape {flat.shape}, expected ({n_w + num_classes},)")
        return cls(flat[:n_w].reshape(num_classes, num_features).copy(), flat[n_w:].copy())

    @classmethod
    def zeros(cls, num_classes: int, num_features: int) -> "ModelParams":
        return cls(np.zeros((num_classes, num_features)), np.zeros(num_classes))

    @classmethod
    def initial(cls, num_classes: int, num_features: int, rng: np.random.Generator,
                scale: float = INIT_SCALE) -> "ModelParams":
        """Draw from the shared initialisation distribution N(0, scale^2)."""
        w = rng.normal(0.0, scale, size=(num_classes, num_features))
        b = rng.normal(0.0, scale, size=num_classes)
        return cls(w, b)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ModelParams):
            return NotImplemented
        return np.array_equal(self.weights, other.weights) and np.array_equal(self.bias, other.bias)

    __hash__ = None

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.weights)) and np.all(np.isfinite(self.bias)))

    def permute_classes(self, perm: np.ndarray) -> "ModelParams":
        """Model whose class ``perm[c]`` behaves like this model's class ``c``."""
        inv = np.argsort(perm)
        return ModelParams(self.weights[inv].copy(), self.bias[inv].copy())


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray  # (num_samples, num_features)
    labels: np.ndarray  # (num_samples,) int

    def __post_init__(self):
        if self.features.ndim != 2:
            raise InvalidInputError("features must be a 2-D matrix")
        if self.labels.ndim != 1 or self.labels.shape[0] != self.features.shape[0]:
            raise InvalidInputError(
                f"{self.features.shape[0]} feature rows but labels have shape {self.labels.shape}"
            )
        if self.labels.size and self.labels.min() < 0:
            raise InvalidInputError("labels must be non-negative class ids")

    def __len__(self) -> int:
        return self.features.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self.features, other.features) and np.array_equal(self.labels, other.labels)

    __hash__ = None

    def check_classes(self, num_classes: int) -> None:
        if self.labels.size and self.labels.max() >= num_classes:
            raise InvalidInputError(f"label {self.labels.max()} outside [0, {num_classes})")

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx])


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def predict(params: ModelParams, features: np.ndarray) -> Prediction:
    """Class probabilities ``softmax(X W^T + b)``, one row per sample."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != params.num_features:
        raise InvalidInputError(
            f"features have shape {features.shape}, model expects (*, {params.num_features})"
        )
    return softmax(features @ params.weights.T + params.bias)


def accuracy(params: ModelParams, data: Dataset) -> float:
    if len(data) == 0:
        raise InvalidInputError("cannot score an empty dataset")
    pred = predict(params, data.features)
    return float(np.mean(pred.argmax(axis=1) == data.labels))


def cross_entropy(pred: Prediction, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true class (floored at 1e-12)."""
    labels = np.asarray(labels)
    if pred.shape[0] == 0:
        raise InvalidInputError("cross-entropy of an empty dataset is undefined")
    if pred.ndim != 2 or labels.shape != (pred.shape[0],):
        raise InvalidInputError(f"prediction {pred.shape} and labels {labels.shape} disagree")
    p = pred[np.arange(labels.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(p, LOG_FLOOR))))


def distill_loss(own: Prediction, neighbor_mean: Prediction) -> float:
    """Squared Frobenius distance divided by the number of samples."""
    if own.shape != neighbor_mean.shape:
        raise InvalidInputError(f"shape mismatch {own.shape} vs {neighbor_mean.shape}")
    if own.shape[0] == 0:
        raise InvalidInputError("distillation loss over zero samples is undefined")
    diff = own - neighbor_mean
    return float(np.sum(diff * diff) / own.shape[0])


def _affine_grads(d_logits: np.ndarray, features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    return d_logits.T @ features, d_logits.sum(axis=0)


def local_loss_and_grad(params: ModelParams, data: Dataset):
    """Mean cross-entropy on ``data`` and its gradient w.r.t. (weights, bias)."""
    n = len(data)
    if n == 0:
        raise InvalidInputError("cannot train on an empty dataset")
    probs = predict(params, data.features)
    loss = cross_entropy(probs, data.labels)
    d = probs.copy()
    d[np.arange(n), data.labels] -= 1.0
    d /= n
    return loss, _affine_grads(d, data.features)


def ref_loss_and_grad(params: ModelParams, features: np.ndarray, target: Prediction):
    """Distillation loss against ``target`` and its gradient w.r.t. (weights, bias)."""
    probs = predict(params, features)
    loss = distill_loss(probs, target)
    g = 2.0 * (probs - target) / probs.shape[0]
    # softmax Jacobian-vector product: p * (g - <p, g>)
    d = probs * (g - np.sum(probs * g, axis=1, keepdims=True))
    return loss, _affine_grads(d, features)


def combined_loss_and_grad(params: ModelParams, local: Dataset, ref_features: Optional[np.ndarray],
                           neighbor_mean: Optional[Prediction], alpha: float):
    """``alpha * L_loc + (1 - alpha) * L_ref``; the distillation term drops out when
    ``neighbor_mean`` is None."""
    loss, (gw, gb) = local_loss_and_grad(params, local)
    if neighbor_mean is None or alpha == 1.0:
        return loss, (gw, gb)
    r_loss, (rw, rb) = ref_loss_and_grad(params, ref_features, neighbor_mean)
    total = alpha * loss + (1.0 - alpha) * r_loss
    return total, (alpha * gw + (1.0 - alpha) * rw, alpha * gb + (1.0 - alpha) * rb)


def gradient_descent(params: ModelParams, local: Dataset, ref_features: Optional[np.ndarray],
                     neighbor_mean: Optional[Prediction], alpha: float, lr: float, steps: int,
                     round_id: int | None = None, client_id: int | None = None) -> ModelParams:
    """Run ``steps`` full-batch gradient steps on the combined objective."""
    if not 0.0 <= alpha <= 1.0:
        raise InvalidInputError(f"alpha must lie in [0, 1], got {alpha}")
    if lr < 0 or not np.isfinite(lr):
        raise InvalidInputError(f"learning rate must be finite and non-negative, got {lr}")
    if steps < 1:
        raise InvalidInputError(f"steps must be >= 1, got {steps}")
    if neighbor_mean is not None:
        if ref_features is None or neighbor_mean.shape != (ref_features.shape[0], params.num_classes):
            raise InvalidInputError("neighbor mean does not match the reference set")
    w, b = params.weights, params.bias
    for _ in range(steps):
        loss, (gw, gb) = combined_loss_and_grad(ModelParams(w, b), local, ref_features,
                                                neighbor_mean, alpha)
        if not (np.isfinite(loss) and np.all(np.isfinite(gw)) and np.all(np.isfinite(gb))):
            raise NumericError("non-finite loss or gradient", round_id=round_id, client_id=client_id)
        w = w - lr * gw
        b = b - lr * gb
    return ModelParams(w, b)


def combined_update(state, neighbor_mean: Optional[Prediction], alpha: float, lr: float,
                    steps: int, round_id: int | None = None) -> ModelParams:
    """Update a client's parameters on its own local and reference data.

    ``state`` needs ``params``, ``data.local_train`` and ``data.reference``
    (a :class:`~wpfed.protocol.ClientState` fits). With no neighbour mean,
    only the local loss is optimised.
    """
    return gradient_descent(state.params, state.data.local_train, state.data.reference.features,
                            neighbor_mean, alpha, lr, steps, round_id=round_id,
                            client_id=getattr(state, "id", None))
