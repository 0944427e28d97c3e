"""8-bit PNG read/write helpers with deterministic bytes.

Quantization convention everywhere: value = floor(255 * x + 0.5)
(round half up), so repeated save/load/save cycles are byte-identical.
Optional text chunks are written in insertion order, which PIL preserves,
so identical inputs always produce identical files.
"""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional, Union

import numpy as np
from PIL import Image
from PIL.PngImagePlugin import PngInfo

__all__ = [
    "quantize_unit",
    "write_gray_png",
    "write_rgb_png",
    "write_palette_png",
    "read_rgb_png",
    "read_palette_png",
    "LABEL_PALETTE",
]

PathLike = Union[str, Path]

# Palette for label masks and predicted segmentations: 0 = background
# (black), 1..4 = the shape-class display colors, 5..254 = gray ramp,
# 255 = reserved ignore value (white).
_CLASS_DISPLAY = [
    (0, 0, 0),
    (204, 51, 51),
    (51, 77, 217),
    (230, 204, 38),
    (153, 51, 191),
]


def _build_palette() -> list[int]:
    colors = list(_CLASS_DISPLAY)
    for i in range(len(colors), 255):
        colors.append((i, i, i))
    colors.append((255, 255, 255))
    flat: list[int] = []
    for rgb in colors:
        flat.extend(rgb)
    return flat


LABEL_PALETTE = _build_palette()


def quantize_unit(values: np.ndarray) -> np.ndarray:
    """Map floats in [0, 1] to uint8 via round-half-up."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("values must lie in [0, 1] before quantization")
    return np.floor(arr * 255.0 + 0.5).astype(np.uint8)


def _png_info(text: Optional[Mapping[str, str]]) -> Optional[PngInfo]:
    if not text:
        return None
    info = PngInfo()
    for key, value in text.items():
        info.add_text(str(key), str(value))
    return info


def write_gray_png(
    path: PathLike, values: np.ndarray, text: Optional[Mapping[str, str]] = None
) -> None:
    """Write a (H, W) float field in [0, 1] as 8-bit grayscale."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError(f"expected a (H, W) field, got shape {arr.shape}")
    img = Image.fromarray(quantize_unit(arr), mode="L")
    img.save(path, format="PNG", pnginfo=_png_info(text))


def write_rgb_png(
    path: PathLike, image: np.ndarray, text: Optional[Mapping[str, str]] = None
) -> None:
    """Write a (3, H, W) float image in [0, 1] as 8-bit RGB."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValueError(f"expected a (3, H, W) image, got shape {arr.shape}")
    img = Image.fromarray(quantize_unit(arr).transpose(1, 2, 0), mode="RGB")
    img.save(path, format="PNG", pnginfo=_png_info(text))


def write_palette_png(
    path: PathLike, labels: np.ndarray, text: Optional[Mapping[str, str]] = None
) -> None:
    """Write a (H, W) integer label field as an 8-bit palette PNG."""
    arr = np.asarray(labels)
    if arr.ndim != 2:
        raise ValueError(f"expected a (H, W) label field, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() > 255):
        raise ValueError("labels must fit in uint8")
    img = Image.fromarray(arr.astype(np.uint8), mode="P")
    img.putpalette(LABEL_PALETTE)
    img.save(path, format="PNG", pnginfo=_png_info(text))


def read_rgb_png(path: PathLike) -> np.ndarray:
    """Read an RGB PNG as a (3, H, W) float64 image in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr.transpose(2, 0, 1) / 255.0


def read_palette_png(path: PathLike) -> np.ndarray:
    """Read a palette PNG as a (H, W) int64 label field."""
    with Image.open(path) as img:
        if img.mode != "P":
            raise ValueError(f"{path}: expected a palette PNG, got mode {img.mode}")
        return np.asarray(img, dtype=np.int64)
