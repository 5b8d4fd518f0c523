"""Dense-tensor primitives with hand-written reverse-mode gradients.

Tensors are plain numpy arrays (rank 1-3, row-major, float32 by default;
float64 when callers initialize in 64-bit mode for gradient checks). Each
primitive is a pure function; the matching ``*_backward`` implements its
closed-form vector-Jacobian product. There is no tape: the model graph is
static and chains these rules explicitly.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, DataError, ShapeError
from .rng import RngStream

GELU_C = math.sqrt(2.0 / math.pi)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product a[m,k] @ b[k,n]."""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    return a @ b


def matmul_backward(d_out: np.ndarray, a: np.ndarray, b: np.ndarray):
    """dA = dC @ B^T, dB = A^T @ dC."""
    return d_out @ b.T, a.T @ d_out


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row-wise softmax over the last axis, max-subtracted for stability.

    -inf entries (masked attention scores) map to exactly 0.
    """
    shifted = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_backward(d_out: np.ndarray, y: np.ndarray) -> np.ndarray:
    """dX = y * (dY - sum(dY * y)) per row, with y = softmax(x)."""
    return y * (d_out - np.sum(d_out * y, axis=-1, keepdims=True))


def layer_norm(
    x: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-5
) -> np.ndarray:
    """Per-row normalization then affine: (x - mu) / sqrt(var + eps) * gamma + beta."""
    if x.shape[-1] != gamma.shape[-1] or x.shape[-1] != beta.shape[-1]:
        raise ShapeError(
            f"layer_norm: feature dim {x.shape[-1]} vs gamma {gamma.shape} beta {beta.shape}"
        )
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.var(x, axis=-1, keepdims=True)
    xhat = (x - mu) / np.sqrt(var + eps)
    return xhat * gamma + beta


def layer_norm_backward(
    d_out: np.ndarray, x: np.ndarray, gamma: np.ndarray, eps: float = 1e-5
):
    """Returns (dx, dgamma, dbeta)."""
    mu = np.mean(x, axis=-1, keepdims=True)
    var = np.var(x, axis=-1, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_sigma

    d_beta = d_out.sum(axis=tuple(range(d_out.ndim - 1)))
    d_gamma = (d_out * xhat).sum(axis=tuple(range(d_out.ndim - 1)))
    d_xhat = d_out * gamma
    dx = inv_sigma * (
        d_xhat
        - np.mean(d_xhat, axis=-1, keepdims=True)
        - xhat * np.mean(d_xhat * xhat, axis=-1, keepdims=True)
    )
    return dx, d_gamma, d_beta


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-approximation GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))."""
    return 0.5 * x * (1.0 + np.tanh(GELU_C * (x + 0.044715 * x * x * x)))


def gelu_backward(d_out: np.ndarray, x: np.ndarray) -> np.ndarray:
    inner = GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(inner)
    d_inner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
    return d_out * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner)


def dropout_mask(shape, p: float, rng: RngStream, dtype=np.float32) -> np.ndarray:
    """Inverted-dropout multiplier: 0 with probability p, else 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if p == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.uniform(shape, dtype=np.float64) >= p
    return (keep / (1.0 - p)).astype(dtype)


def dropout(x: np.ndarray, p: float, training: bool, rng: RngStream | None = None) -> np.ndarray:
    """Train mode zeroes each element with probability p and rescales survivors;
    eval mode is the identity (returns x unchanged)."""
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ConfigError("dropout in training mode requires an RngStream")
    return x * dropout_mask(x.shape, p, rng, dtype=x.dtype)


def cross_entropy(logits: np.ndarray, labels: np.ndarray, mask: np.ndarray):
    """Mean negative log-likelihood over unmasked positions.

    Returns (loss, d_logits) with d_logits = (softmax - onehot) / count at
    unmasked rows and zero elsewhere.
    """
    labels = np.asarray(labels)
    mask = np.asarray(mask, dtype=bool)
    t_len, n_classes = logits.shape
    if labels.shape != (t_len,) or mask.shape != (t_len,):
        raise ShapeError(
            f"cross_entropy: logits {logits.shape} vs labels {labels.shape} mask {mask.shape}"
        )
    bad = np.nonzero((labels < 0) | (labels >= n_classes))[0]
    if bad.size:
        raise DataError(
            f"label {int(labels[bad[0]])} out of range [0, {n_classes}) at position {int(bad[0])}"
        )
    count = int(mask.sum())
    if count == 0:
        raise DataError("cross_entropy: all positions masked")

    probs = softmax_rows(logits)
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    log_z = np.log(np.sum(np.exp(shifted), axis=-1))
    nll = log_z - shifted[np.arange(t_len), labels]
    loss = float(np.sum(nll[mask]) / count)

    d_logits = probs.copy()
    d_logits[np.arange(t_len), labels] -= 1.0
    d_logits /= count
    d_logits[~mask] = 0.0
    return loss, d_logits.astype(logits.dtype)
