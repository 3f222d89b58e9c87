"""Two-layer MLP classifier stored as one flat parameter vector.

Layout of the flat vector, in order: ``W1`` (d x H, row-major), ``b1`` (H),
``W2`` (H x K, row-major), ``b2`` (K).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np

ModelParams = np.ndarray


@dataclass(frozen=True)
class MLPLayout:
    dim: int
    hidden: int
    classes: int

    @property
    def size(self) -> int:
        return self.dim * self.hidden + self.hidden + self.hidden * self.classes + self.classes

    def unpack(self, params: ModelParams) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """Views ``(W1, b1, W2, b2)`` into ``params``."""

        if params.shape != (self.size,):
            raise ValueError(f"expected {self.size} parameters, got shape {params.shape}")
        d, h, k = self.dim, self.hidden, self.classes
        o1 = d * h
        o2 = o1 + h
        o3 = o2 + h * k
        return (
            params[:o1].reshape(d, h),
            params[o1:o2],
            params[o2:o3].reshape(h, k),
            params[o3:],
        )

    def pack(self, w1: np.ndarray, b1: np.ndarray, w2: np.ndarray, b2: np.ndarray) -> ModelParams:
        return np.concatenate([w1.reshape(-1), b1.reshape(-1), w2.reshape(-1), b2.reshape(-1)]).astype(np.float64)


@dataclass
class MLP:
    """A layout plus the parameter vector it describes."""

    layout: MLPLayout
    params: ModelParams

    def __post_init__(self) -> None:
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (self.layout.size,):
            raise ValueError(f"expected {self.layout.size} parameters, got shape {self.params.shape}")

    def copy(self) -> "MLP":
        return MLP(self.layout, self.params.copy())

    def with_params(self, params: ModelParams) -> "MLP":
        return MLP(self.layout, params)

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Argmax class per row; ties go to the lowest class id."""

        return np.argmax(forward(self, np.atleast_2d(x)), axis=1)


def init_mlp(layout: MLPLayout, seed: int) -> MLP:
    """He-normal weights, zero biases."""

    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, np.sqrt(2.0 / layout.dim), size=(layout.dim, layout.hidden))
    w2 = rng.normal(0.0, np.sqrt(2.0 / layout.hidden), size=(layout.hidden, layout.classes))
    return MLP(layout, layout.pack(w1, np.zeros(layout.hidden), w2, np.zeros(layout.classes)))


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def forward(model: MLP, x: np.ndarray) -> np.ndarray:
    """Class probabilities for one sample (1-D) or a batch (2-D)."""

    if not np.all(np.isfinite(model.params)):
        raise ValueError("model parameters contain non-finite values")
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.layout.dim:
        raise ValueError(f"input dimension {x.shape[-1]} does not match model dim {model.layout.dim}")
    w1, b1, w2, b2 = model.layout.unpack(model.params)
    hidden = np.maximum(x @ w1 + b1, 0.0)
    return _softmax(hidden @ w2 + b2)


def loss_and_grad(model: MLP, x: np.ndarray, y: np.ndarray) -> Tuple[float, ModelParams]:
    """Mean cross-entropy over the batch and its gradient as a flat vector."""

    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_1d(np.asarray(y, dtype=np.int64))
    n = x.shape[0]
    w1, b1, w2, b2 = model.layout.unpack(model.params)

    pre = x @ w1 + b1
    hidden = np.maximum(pre, 0.0)
    probs = _softmax(hidden @ w2 + b2)
    loss = float(-np.mean(np.log(np.clip(probs[np.arange(n), y], 1e-300, None))))

    error = probs.copy()
    error[np.arange(n), y] -= 1.0
    error /= n
    grad_w2 = hidden.T @ error
    grad_b2 = error.sum(axis=0)
    back = (error @ w2.T) * (pre > 0.0)
    grad_w1 = x.T @ back
    grad_b1 = back.sum(axis=0)
    return loss, model.layout.pack(grad_w1, grad_b1, grad_w2, grad_b2)


def mean_loss(model: MLP, x: np.ndarray, y: np.ndarray) -> float:
    return loss_and_grad(model, x, y)[0]


__all__ = ["ModelParams", "MLPLayout", "MLP", "init_mlp", "forward", "loss_and_grad", "mean_loss"]
