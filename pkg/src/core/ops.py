# src/core/ops.py

"""
Forward/backward kernels for the five primitives the recommendation model is
built from (affine map, ReLU, sigmoid, binary cross-entropy, embedding gather
lives in the model) plus inverted dropout. Everything runs in float64.
"""

from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from src.common.errors import ContractViolation

BCE_EPSILON = 1e-7


@dataclass(frozen=True)
class AffineContext:
    inputs: np.ndarray
    weights: np.ndarray


def dense_affine_forward(inputs: np.ndarray, weights: np.ndarray, bias: np.ndarray) -> Tuple[np.ndarray, AffineContext]:
    """out[b] = inputs[b] @ weights + bias, with inputs (B, p), weights (p, q), bias (q,)."""
    if inputs.ndim != 2 or weights.ndim != 2 or bias.ndim != 1:
        raise ContractViolation(
            f"affine expects 2-D inputs/weights and 1-D bias, got {inputs.shape}, {weights.shape}, {bias.shape}"
        )
    if inputs.shape[1] != weights.shape[0] or weights.shape[1] != bias.shape[0]:
        raise ContractViolation(
            f"affine shape mismatch: inputs {inputs.shape}, weights {weights.shape}, bias {bias.shape}"
        )
    return inputs @ weights + bias, AffineContext(inputs=inputs, weights=weights)


def dense_affine_backward(grad_out: np.ndarray, ctx: AffineContext) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Returns (grad_inputs, grad_weights, grad_bias)."""
    if grad_out.shape != (ctx.inputs.shape[0], ctx.weights.shape[1]):
        raise ContractViolation(f"affine upstream gradient has shape {grad_out.shape}")
    grad_inputs = grad_out @ ctx.weights.T
    grad_weights = ctx.inputs.T @ grad_out
    grad_bias = grad_out.sum(axis=0)
    return grad_inputs, grad_weights, grad_bias


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_backward(grad_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    # gradient is zero at the kink itself
    return grad_out * (x > 0.0)


def sigmoid_forward(logits: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function; stays strictly inside (0, 1) for |logit| <= 700."""
    logits = np.asarray(logits, dtype=np.float64)
    out = np.empty_like(logits)
    positive = logits >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-logits[positive]))
    exp_l = np.exp(logits[~positive])
    out[~positive] = exp_l / (1.0 + exp_l)
    return out


def sigmoid_backward(grad_out: np.ndarray, probabilities: np.ndarray) -> np.ndarray:
    return grad_out * probabilities * (1.0 - probabilities)


def check_binary_labels(labels: np.ndarray) -> None:
    if labels.size and not np.all((labels == 0) | (labels == 1)):
        raise ContractViolation("labels must be exactly 0 or 1")


def bce_loss(predictions: np.ndarray, labels: np.ndarray, eps: float = BCE_EPSILON) -> Tuple[float, np.ndarray]:
    """
    Mean negative log-likelihood -mean[y log p + (1 - y) log(1 - p)] with p clamped
    to [eps, 1 - eps]. Returns (loss, d loss / d predictions); the gradient is zero
    where the clamp is active.
    """
    predictions = np.asarray(predictions, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if predictions.shape != labels.shape:
        raise ContractViolation(f"predictions {predictions.shape} and labels {labels.shape} differ in shape")
    if predictions.size == 0:
        raise ContractViolation("bce_loss needs at least one prediction")
    check_binary_labels(labels)

    clipped = np.clip(predictions, eps, 1.0 - eps)
    n = predictions.size
    loss = -np.mean(labels * np.log(clipped) + (1.0 - labels) * np.log(1.0 - clipped))
    inside = (predictions > eps) & (predictions < 1.0 - eps)
    grad = -(labels / clipped - (1.0 - labels) / (1.0 - clipped)) / n
    return float(loss), grad * inside


def dropout(
    inputs: np.ndarray,
    rate: float,
    generator: Optional[np.random.Generator],
    training: bool,
) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    """
    Inverted dropout. Returns (output, scale mask); the mask is None when the op is
    the identity (evaluation mode or rate 0).
    """
    if not 0.0 <= rate < 1.0:
        raise ContractViolation(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return inputs, None
    if generator is None:
        raise ContractViolation("training-mode dropout needs a random generator")
    keep = generator.random(inputs.shape) >= rate
    mask = keep / (1.0 - rate)
    return inputs * mask, mask


def dropout_backward(grad_out: np.ndarray, mask: Optional[np.ndarray]) -> np.ndarray:
    return grad_out if mask is None else grad_out * mask
