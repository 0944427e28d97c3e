"""Membership indicators and non-distinctiveness maps.

Per composite logit vector v (background at index 0):

    mu_bg = softmax(v)[0]
    mu_id = max over the in-distribution probabilities
    mu_nd = mu_bg * mu_id

mu_nd is high exactly where the model simultaneously claims background
and some class, i.e. where the prediction is not distinctive.

The in-distribution probabilities can be read two ways, and both are
implemented: SUB_VECTOR (default) renormalizes a softmax over the k-1
in-distribution logits alone; FULL_VECTOR takes the in-distribution
slice of the full k-way softmax.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .numerics import as_logit_vector, softmax, softmax_field
from .pngio import write_gray_png

__all__ = [
    "IDSoftmaxMode",
    "MembershipTriple",
    "MembershipMaps",
    "membership",
    "membership_field",
    "expected_nd",
    "render_membership_png",
]


class IDSoftmaxMode(Enum):
    """How the in-distribution membership is normalized."""

    SUB_VECTOR = "sub"
    FULL_VECTOR = "full"

    @classmethod
    def parse(cls, name: str) -> "IDSoftmaxMode":
        try:
            return cls(name.lower())
        except ValueError:
            raise ValueError(
                f"unknown id-softmax mode {name!r}; expected 'sub' or 'full'"
            ) from None


@dataclass(frozen=True)
class MembershipTriple:
    """Per-pixel membership indicators, each in [0, 1]."""

    mu_id: float
    mu_bg: float
    mu_nd: float

    def __post_init__(self) -> None:
        for name in ("mu_id", "mu_bg", "mu_nd"):
            val = getattr(self, name)
            if not (0.0 <= val <= 1.0):
                raise ValueError(f"{name} must lie in [0, 1], got {val}")


@dataclass(frozen=True)
class MembershipMaps:
    """Per-pixel membership fields, each of shape (1, H, W)."""

    mu_id: np.ndarray
    mu_bg: np.ndarray
    mu_nd: np.ndarray

    def __post_init__(self) -> None:
        shapes = {arr.shape for arr in (self.mu_id, self.mu_bg, self.mu_nd)}
        if len(shapes) != 1:
            raise ValueError(f"membership maps disagree in shape: {shapes}")
        shape = self.mu_id.shape
        if len(shape) != 3 or shape[0] != 1:
            raise ValueError(f"membership maps must have shape (1, H, W), got {shape}")

    @property
    def pixel_count(self) -> int:
        return int(self.mu_nd.size)


def membership(
    v: np.ndarray, mode: IDSoftmaxMode = IDSoftmaxMode.SUB_VECTOR
) -> MembershipTriple:
    """Membership indicators of a single composite logit vector.

    Args:
        v: composite logits, background at index 0, length >= 2.
        mode: normalization of the in-distribution probabilities.

    Returns:
        MembershipTriple with mu_nd = mu_bg * mu_id exactly.
    """
    arr = as_logit_vector(v)
    if arr.size < 2:
        raise ValueError(f"composite vector needs >= 2 components, got {arr.size}")
    full = softmax(arr)
    mu_bg = float(full[0])
    if mode is IDSoftmaxMode.SUB_VECTOR:
        mu_id = float(softmax(arr[1:]).max())
    else:
        mu_id = float(full[1:].max())
    return MembershipTriple(mu_id=mu_id, mu_bg=mu_bg, mu_nd=mu_bg * mu_id)


def membership_field(
    logits: np.ndarray, mode: IDSoftmaxMode = IDSoftmaxMode.SUB_VECTOR
) -> MembershipMaps:
    """Per-pixel membership maps of a (k, H, W) composite logit field."""
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected a (k, H, W) logit field, got shape {arr.shape}")
    if arr.shape[0] < 2:
        raise ValueError(f"composite field needs >= 2 channels, got {arr.shape[0]}")
    full = softmax_field(arr, axis=0)
    mu_bg = full[0]
    if mode is IDSoftmaxMode.SUB_VECTOR:
        mu_id = softmax_field(arr[1:], axis=0).max(axis=0)
    else:
        mu_id = full[1:].max(axis=0)
    return MembershipMaps(
        mu_id=mu_id[None], mu_bg=mu_bg[None], mu_nd=(mu_bg * mu_id)[None]
    )


def expected_nd(maps: Sequence[MembershipMaps]) -> float:
    """Dataset mean of mu_nd over every pixel, as a percentage.

    The per-image sums are combined with exact (fsum) accumulation, so
    the result is invariant to dataset reordering.
    """
    if not maps:
        raise ValueError("expected_nd needs at least one membership map")
    total_pixels = sum(m.pixel_count for m in maps)
    if total_pixels == 0:
        raise ValueError("expected_nd needs at least one pixel")
    total = math.fsum(float(np.sum(m.mu_nd)) for m in maps)
    return 100.0 * total / total_pixels


def render_membership_png(
    maps: MembershipMaps,
    stem: Union[str, Path],
    text: Optional[Mapping[str, str]] = None,
) -> dict[str, Path]:
    """Write the three indicators as 8-bit grayscale PNGs.

    Files are named ``<stem>_mu_{id,bg,nd}.png``; pixel value is
    round-half-up of 255 * mu.  Returns the written paths keyed by
    indicator name.
    """
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    for name, field in (("id", maps.mu_id), ("bg", maps.mu_bg), ("nd", maps.mu_nd)):
        path = stem.parent / f"{stem.name}_mu_{name}.png"
        write_gray_png(path, field, text=text)
        written[name] = path
    return written
