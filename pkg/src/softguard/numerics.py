"""Numerically stable softmax-family kernels.

All vector operations take 1-D double-precision logit vectors and are
pure functions: no shared state, safe to call from any thread.  The
max-subtraction form is used everywhere so that inputs of magnitude 1e3
and beyond never overflow.

Field variants operate channel-wise on (k, H, W) arrays (or on any
chosen axis) and share the same stability guarantees.
"""

from __future__ import annotations

from typing import Callable, Sequence, Union

import numpy as np

__all__ = [
    "as_logit_vector",
    "logsumexp",
    "softmax",
    "log_softmax",
    "argmax_class",
    "finite_diff_grad",
    "logsumexp_field",
    "softmax_field",
    "log_softmax_field",
]

ArrayLike = Union[Sequence[float], np.ndarray]


def as_logit_vector(v: ArrayLike) -> np.ndarray:
    """Validate ``v`` as a finite, non-empty 1-D float64 vector.

    Raises:
        ValueError: if ``v`` is empty, not 1-D, or contains NaN/Inf.
    """
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ValueError(f"expected a 1-D logit vector, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("logit vector must not be empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError("logit vector must be finite (no NaN/Inf)")
    return arr


def logsumexp(v: ArrayLike) -> float:
    """log(sum(exp(v))), evaluated as max(v) + log(sum(exp(v - max(v)))).

    The shifted form keeps every exponent <= 0, so no finite input can
    overflow, and the result is always >= max(v) (the shifted sum is
    >= 1 because the maximum contributes exp(0)).
    """
    arr = as_logit_vector(v)
    m = float(arr.max())
    return m + float(np.log(np.exp(arr - m).sum()))


def softmax(v: ArrayLike) -> np.ndarray:
    """Map logits onto the interior of the probability simplex.

    Returns exp(v_i - logsumexp(v)) per component; components are
    positive and sum to 1 within a few ulp.
    """
    arr = as_logit_vector(v)
    z = np.exp(arr - arr.max())
    return z / z.sum()


def log_softmax(v: ArrayLike) -> np.ndarray:
    """v - logsumexp(v) * 1.  Every component of the result is <= 0."""
    arr = as_logit_vector(v)
    return arr - logsumexp(arr)


def argmax_class(v: ArrayLike) -> int:
    """Index of the maximum component; ties go to the lowest index."""
    return int(np.argmax(as_logit_vector(v)))


def finite_diff_grad(
    f: Callable[[np.ndarray], float], v: ArrayLike, h: float = 1e-4
) -> np.ndarray:
    """Central-difference gradient estimate of a scalar function.

    Args:
        f: scalar function of a 1-D vector, evaluable near ``v``.
        v: point at which to estimate the gradient.
        h: step size, must be positive.

    Returns:
        (f(v + h*e_i) - f(v - h*e_i)) / (2h) per component.
    """
    if h <= 0:
        raise ValueError(f"finite-difference step must be positive, got {h}")
    x = as_logit_vector(v).copy()
    grad = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + h
        f_plus = float(f(x))
        x[i] = orig - h
        f_minus = float(f(x))
        x[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def _validate_field(logits: np.ndarray, axis: int) -> np.ndarray:
    arr = np.asarray(logits, dtype=np.float64)
    if arr.shape[axis] == 0:
        raise ValueError("logit field has no channels")
    return arr


def logsumexp_field(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    """Stable channel-wise logsumexp; reduces ``axis`` away."""
    arr = _validate_field(logits, axis)
    m = arr.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(arr - m).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def softmax_field(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    """Stable channel-wise softmax along ``axis``; shape preserved."""
    arr = _validate_field(logits, axis)
    z = np.exp(arr - arr.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def log_softmax_field(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    """Stable channel-wise log-softmax along ``axis``; shape preserved."""
    arr = _validate_field(logits, axis)
    m = arr.max(axis=axis, keepdims=True)
    shifted = arr - m
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
