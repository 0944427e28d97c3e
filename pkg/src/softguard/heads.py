"""Background-estimation heads over composite logit vectors.

Layout convention used throughout the package: index 0 of a composite
vector is the background component, indices 1..k-1 are the
in-distribution classes.

The explicit head passes k model logits through unchanged.  The implicit
head receives k-1 in-distribution logits and derives the background
component as -logsumexp of them, which couples a confident background
claim to *every* in-distribution logit being pushed down.
"""

from __future__ import annotations

import math
from enum import Enum

import numpy as np

from .numerics import as_logit_vector, logsumexp, logsumexp_field, softmax, softmax_field

__all__ = [
    "BACKGROUND_INDEX",
    "HeadKind",
    "implicit_compose",
    "implicit_backward",
    "bg_membership_closed_form",
    "apply_head",
    "implicit_compose_field",
    "implicit_backward_field",
    "apply_head_field",
]

BACKGROUND_INDEX = 0


class HeadKind(Enum):
    """Which classifier head produced (or should produce) composite logits."""

    EXPLICIT = "explicit"
    IMPLICIT = "implicit"

    @classmethod
    def parse(cls, name: str) -> "HeadKind":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(
                f"unknown head kind {name!r}; expected 'explicit' or 'implicit'"
            ) from None

    def out_channels(self, num_classes: int) -> int:
        """Model output channels for a k-class composite."""
        return num_classes if self is HeadKind.EXPLICIT else num_classes - 1


def implicit_compose(v_id: np.ndarray) -> np.ndarray:
    """Build the composite vector [-logsumexp(v_id), *v_id].

    The background component moves opposite to the in-distribution mass:
    it grows without bound only when all in-distribution logits fall
    together, and collapses to -inf when any of them grows.

    Note that the composite maximum is *not* always >= 0: with every
    in-distribution logit in a shallow negative band the whole composite
    is negative, e.g. [-0.1, -0.1] -> [-0.5931..., -0.1, -0.1].  What
    does hold (and is fuzz-tested): background wins the argmax only when
    every in-distribution logit is negative, and for a single
    in-distribution logit x the composite maximum is exactly |x|.
    """
    arr = as_logit_vector(v_id)
    return np.concatenate(([-logsumexp(arr)], arr))


def implicit_backward(v_id: np.ndarray, upstream: np.ndarray) -> np.ndarray:
    """Chain rule through ``implicit_compose``.

    With g the upstream gradient over the composite vector, the gradient
    over the in-distribution logits is

        grad_i = g[i+1] - g[0] * softmax(v_id)_i

    using d(-logsumexp(v_id))/d(v_id_i) = -softmax(v_id)_i.
    """
    arr = as_logit_vector(v_id)
    g = np.asarray(upstream, dtype=np.float64)
    if g.ndim != 1 or g.size != arr.size + 1:
        raise ValueError(
            f"upstream gradient must have length {arr.size + 1}, got shape {g.shape}"
        )
    return g[1:] - g[0] * softmax(arr)


def bg_membership_closed_form(v_id: np.ndarray) -> float:
    """Background probability of the implicit composite, in closed form.

    Equals softmax(implicit_compose(v_id))[0] = 1 / (1 + S^2) with
    S = sum(exp(v_id)), evaluated as a stable logistic of
    -2*logsumexp(v_id) so that no finite input overflows.
    """
    two_l = 2.0 * logsumexp(v_id)
    if two_l >= 0.0:
        e = math.exp(-two_l)
        return e / (1.0 + e)
    return 1.0 / (1.0 + math.exp(two_l))


def apply_head(kind: HeadKind, raw: np.ndarray) -> np.ndarray:
    """Dispatch raw model logits to a composite vector of length k.

    Explicit: identity on k logits (k >= 2).  Implicit: implicit_compose
    on k-1 logits (k-1 >= 1).
    """
    arr = as_logit_vector(raw)
    if kind is HeadKind.EXPLICIT:
        if arr.size < 2:
            raise ValueError(
                f"explicit head needs >= 2 logits (background + classes), got {arr.size}"
            )
        return arr.copy()
    return implicit_compose(arr)


# --- field variants (channel axis first by default) ---


def implicit_compose_field(raw: np.ndarray, axis: int = 0) -> np.ndarray:
    """implicit_compose applied along ``axis`` of a logit field."""
    arr = np.asarray(raw, dtype=np.float64)
    if arr.shape[axis] < 1:
        raise ValueError("implicit head needs at least one in-distribution channel")
    bg = -np.expand_dims(logsumexp_field(arr, axis=axis), axis)
    return np.concatenate([bg, arr], axis=axis)


def implicit_backward_field(
    raw: np.ndarray, upstream: np.ndarray, axis: int = 0
) -> np.ndarray:
    """implicit_backward applied along ``axis`` of a logit field."""
    arr = np.asarray(raw, dtype=np.float64)
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape[axis] != arr.shape[axis] + 1:
        raise ValueError(
            f"upstream field must have {arr.shape[axis] + 1} channels on axis "
            f"{axis}, got {g.shape[axis]}"
        )
    g = np.moveaxis(g, axis, 0)
    sub = softmax_field(np.moveaxis(arr, axis, 0), axis=0)
    out = g[1:] - g[0] * sub
    return np.moveaxis(out, 0, axis)


def apply_head_field(kind: HeadKind, raw: np.ndarray, axis: int = 0) -> np.ndarray:
    """Field version of ``apply_head``; output has k channels on ``axis``."""
    arr = np.asarray(raw, dtype=np.float64)
    if kind is HeadKind.EXPLICIT:
        if arr.shape[axis] < 2:
            raise ValueError(
                f"explicit head needs >= 2 channels, got {arr.shape[axis]}"
            )
        return arr.astype(np.float64, copy=True)
    return implicit_compose_field(arr, axis=axis)
