"""Synthetic datasets: labeled shape scenes plus two kinds of OOD inputs.

Three generators, all pure functions of (seed, index):

* gen_scene - colored geometric shapes (disk, square, triangle, cross,
  classes 1..4) on a textured noisy background (class 0), sized so the
  background covers a configurable fraction of the image.
* gen_noise - per-pixel Gaussian noise, mean 0.5, stddev 0.25, clipped.
* gen_texture - structured non-semantic images (gratings, checkerboards,
  multi-octave value noise, concentric rings) in muted palettes that
  avoid the scene class colors.

Determinism: every generator builds a PCG64 generator from
SeedSequence([seed, stream, index]) where stream is 0 for scenes, 1 for
noise, and 2 for textures, so the three dataset kinds never share a
stream even under equal seeds.

Persistence writes images as 8-bit RGB PNG and masks as 8-bit palette
PNG under `<root>/images/` and `<root>/masks/` with a manifest.json that
records per-file SHA-256 digests; training always consumes the
quantized, saved values, never the raw float fields.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .pngio import read_palette_png, read_rgb_png, write_palette_png, write_rgb_png

__all__ = [
    "SCENE_STREAM",
    "NOISE_STREAM",
    "TEXTURE_STREAM",
    "SHAPE_CLASS_NAMES",
    "CLASS_COLORS",
    "GenerationError",
    "DatasetError",
    "SceneSpec",
    "payload_hash",
    "gen_scene",
    "gen_noise",
    "gen_texture",
    "texture_params",
    "all_background_mask",
    "save_dataset",
    "load_dataset",
    "manifest_hash",
]

SCENE_STREAM = 0
NOISE_STREAM = 1
TEXTURE_STREAM = 2

SHAPE_CLASS_NAMES = {1: "disk", 2: "square", 3: "triangle", 4: "cross"}

# Saturated, well-separated fill colors; the background and the texture
# palettes deliberately stay far from these.
CLASS_COLORS = {
    1: (0.80, 0.20, 0.20),
    2: (0.20, 0.30, 0.85),
    3: (0.90, 0.80, 0.15),
    4: (0.60, 0.20, 0.75),
}

_BG_BASE_COLOR = np.array([0.32, 0.38, 0.33])
# Base colors keep enough distance from every fill color that the mottle
# and jitter excursions cannot make background pixels look like a shape.
_BG_COLOR_MARGIN = 0.36
_PLACEMENT_ATTEMPTS = 40
_SCENE_ATTEMPTS = 25
_BG_FRACTION_TOLERANCE = 0.15

DATASET_KINDS = ("in-distribution", "noise", "texture")


class GenerationError(RuntimeError):
    """Raised when a scene cannot satisfy its geometric constraints."""


class DatasetError(RuntimeError):
    """Raised when stored dataset files are missing, corrupt, or mismatched."""


def payload_hash(payload: Mapping) -> str:
    """SHA-256 of the canonical JSON encoding of a parameter mapping."""
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class SceneSpec:
    """Parameters of the labeled scene generator.

    num_classes counts the background, so k classes mean k-1 shape
    types; at most 4 shape types exist.  bg_fraction is the target share
    of background pixels per image.
    """

    height: int = 48
    width: int = 48
    num_classes: int = 5
    min_shapes: int = 1
    max_shapes: int = 4
    bg_fraction: float = 0.73
    color_jitter: float = 0.08
    noise_amplitude: float = 0.05
    seed: int = 0

    def __post_init__(self) -> None:
        if not (2 <= self.num_classes <= 1 + len(SHAPE_CLASS_NAMES)):
            raise ValueError(
                f"num_classes must lie in [2, {1 + len(SHAPE_CLASS_NAMES)}], "
                f"got {self.num_classes}"
            )
        if self.height < 16 or self.width < 16:
            raise ValueError(
                f"image size must be at least 16x16, got {self.height}x{self.width}"
            )
        if not (0 <= self.min_shapes <= self.max_shapes):
            raise ValueError(
                f"need 0 <= min_shapes <= max_shapes, got "
                f"{self.min_shapes}..{self.max_shapes}"
            )
        if not (0.0 < self.bg_fraction < 1.0):
            raise ValueError(f"bg_fraction must lie in (0, 1), got {self.bg_fraction}")
        if self.color_jitter < 0 or self.noise_amplitude < 0:
            raise ValueError("color_jitter and noise_amplitude must be >= 0")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")

    @property
    def spec_hash(self) -> str:
        return payload_hash(asdict(self))


def _rng(seed: int, stream: int, index: int) -> np.random.Generator:
    if seed < 0 or index < 0:
        raise ValueError("seed and index must be non-negative")
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream, index])))


def _bilinear_upsample(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Stretch a coarse 2-D grid to (height, width) with bilinear weights."""
    gh, gw = grid.shape
    ys = np.linspace(0.0, gh - 1.0, height)
    xs = np.linspace(0.0, gw - 1.0, width)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, gh - 1)
    x1 = np.minimum(x0 + 1, gw - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    top = grid[np.ix_(y0, x0)] * (1.0 - wx) + grid[np.ix_(y0, x1)] * wx
    bottom = grid[np.ix_(y1, x0)] * (1.0 - wx) + grid[np.ix_(y1, x1)] * wx
    return top * (1.0 - wy) + bottom * wy


def _pixel_grids(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    yy, xx = np.meshgrid(
        np.arange(height, dtype=np.float64),
        np.arange(width, dtype=np.float64),
        indexing="ij",
    )
    return yy, xx


def _shape_mask(
    class_id: int, cy: float, cx: float, area: float, height: int, width: int
) -> np.ndarray:
    """Boolean raster of one shape, sized so its analytic area matches."""
    yy, xx = _pixel_grids(height, width)
    dy = yy - cy
    dx = xx - cx
    if class_id == 1:
        r = math.sqrt(area / math.pi)
        return dy * dy + dx * dx <= r * r
    if class_id == 2:
        half = math.sqrt(area) / 2.0
        return (np.abs(dy) <= half) & (np.abs(dx) <= half)
    if class_id == 3:
        # Equilateral triangle pointing up; area = (3*sqrt(3)/4) R^2.
        r = math.sqrt(area * 4.0 / (3.0 * math.sqrt(3.0)))
        angles = np.deg2rad([90.0, 210.0, 330.0])
        vx = cx + r * np.cos(angles)
        vy = cy - r * np.sin(angles)
        inside = np.ones((height, width), dtype=bool)
        for a in range(3):
            b = (a + 1) % 3
            cross = (vx[b] - vx[a]) * (yy - vy[a]) - (vy[b] - vy[a]) * (xx - vx[a])
            inside &= cross <= 0.0
        return inside
    if class_id == 4:
        # Two centered bars of length L and thickness 2L/5; area = 16 L^2 / 25.
        length = math.sqrt(area * 25.0 / 16.0)
        half_l = length / 2.0
        half_t = length / 5.0
        horizontal = (np.abs(dy) <= half_t) & (np.abs(dx) <= half_l)
        vertical = (np.abs(dx) <= half_t) & (np.abs(dy) <= half_l)
        return horizontal | vertical
    raise ValueError(f"unknown shape class {class_id}")


def _shape_extent(class_id: int, area: float) -> float:
    """Distance from center to the farthest shape point, for margin checks."""
    if class_id == 1:
        return math.sqrt(area / math.pi)
    if class_id == 2:
        return math.sqrt(area) / 2.0 * math.sqrt(2.0)
    if class_id == 3:
        return math.sqrt(area * 4.0 / (3.0 * math.sqrt(3.0)))
    if class_id == 4:
        return math.sqrt(area * 25.0 / 16.0) / 2.0 * math.sqrt(1.0 + 4.0 / 25.0)
    raise ValueError(f"unknown shape class {class_id}")


def _background(spec: SceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Two-scale mottled field over a per-scene random base color.

    Background is the catch-all class, so its base color varies scene to
    scene (kept clear of every shape fill color); only the shape colors
    are stable class signatures.  Half the draws are near-gray so the
    low-saturation band is as well covered as the saturated gamut, and
    the mottle mixes a coarse and a fine grid so background texture
    spans low and high spatial frequencies.
    """
    base = _BG_BASE_COLOR
    for _ in range(16):
        if rng.uniform() < 0.5:
            candidate = rng.uniform(0.08, 0.92, size=3)
        else:
            value = rng.uniform(0.15, 0.85)
            candidate = np.clip(value + rng.uniform(-0.08, 0.08, size=3), 0.02, 0.98)
        if all(
            float(np.linalg.norm(candidate - np.asarray(color))) >= _BG_COLOR_MARGIN
            for color in CLASS_COLORS.values()
        ):
            base = candidate
            break
    coarse = rng.uniform(-1.0, 1.0, size=(3, 6, 6))
    fine = rng.uniform(-1.0, 1.0, size=(3, 16, 16))
    mottle = np.stack(
        [
            0.06 * _bilinear_upsample(coarse[c], spec.height, spec.width)
            + 0.06 * _bilinear_upsample(fine[c], spec.height, spec.width)
            for c in range(3)
        ]
    )
    return base[:, None, None] + mottle


def gen_scene(spec: SceneSpec, index: int) -> Tuple[np.ndarray, np.ndarray]:
    """One labeled scene: (image (3,H,W) in [0,1], mask (H,W) in 0..k-1).

    Shapes never overlap and always lie fully inside the image; the
    background fraction stays within 0.15 of spec.bg_fraction whenever at
    least one shape is drawn.  Deterministic in (spec.seed, index).
    """
    rng = _rng(spec.seed, SCENE_STREAM, index)
    h, w = spec.height, spec.width
    n_shapes = int(rng.integers(spec.min_shapes, spec.max_shapes + 1))

    image = _background(spec, rng)
    mask = np.zeros((h, w), dtype=np.int64)

    fg_budget = (1.0 - spec.bg_fraction) * h * w
    max_extent = min(h, w) / 2.0 - 2.0
    # Crowded draws can wedge (a later shape may fit nowhere between the
    # earlier ones), so on exhaustion the whole arrangement is redrawn.
    placed_shapes: List[Tuple[int, np.ndarray]] = []
    for _ in range(_SCENE_ATTEMPTS):
        placed_shapes.clear()
        occupied = np.zeros((h, w), dtype=bool)
        wedged = False
        for _ in range(n_shapes):
            class_id = int(rng.integers(1, spec.num_classes))
            area = fg_budget / n_shapes * rng.uniform(0.7, 1.3)
            extent = _shape_extent(class_id, area)
            if extent > max_extent:
                area *= (max_extent / extent) ** 2
                extent = max_extent
            for _ in range(_PLACEMENT_ATTEMPTS):
                cy = rng.uniform(extent + 1.0, h - extent - 2.0)
                cx = rng.uniform(extent + 1.0, w - extent - 2.0)
                shape = _shape_mask(class_id, cy, cx, area, h, w)
                if not (shape & occupied).any():
                    placed_shapes.append((class_id, shape))
                    occupied |= shape
                    break
            else:
                wedged = True
                break
        if not wedged:
            break
    else:
        raise GenerationError(
            f"could not arrange {n_shapes} non-overlapping shapes after "
            f"{_SCENE_ATTEMPTS} attempts of {_PLACEMENT_ATTEMPTS} placements each"
        )

    for class_id, shape in placed_shapes:
        color = np.array(CLASS_COLORS[class_id]) + rng.uniform(
            -spec.color_jitter, spec.color_jitter, size=3
        )
        image[:, shape] = np.clip(color, 0.0, 1.0)[:, None]
        mask[shape] = class_id

    image = image + rng.normal(0.0, spec.noise_amplitude, size=(3, h, w))
    image = np.clip(image, 0.0, 1.0)

    if n_shapes > 0:
        bg_frac = 1.0 - float(np.count_nonzero(mask)) / mask.size
        if abs(bg_frac - spec.bg_fraction) > _BG_FRACTION_TOLERANCE:
            raise GenerationError(
                f"background fraction {bg_frac:.3f} deviates from target "
                f"{spec.bg_fraction} by more than {_BG_FRACTION_TOLERANCE}"
            )
    return image, mask


def gen_noise(seed: int, index: int, height: int, width: int) -> np.ndarray:
    """Per-channel i.i.d. Gaussian image, mean 0.5, stddev 0.25, clipped."""
    if height < 1 or width < 1:
        raise ValueError(f"image size must be positive, got {height}x{width}")
    rng = _rng(seed, NOISE_STREAM, index)
    return np.clip(rng.normal(0.5, 0.25, size=(3, height, width)), 0.0, 1.0)


def _muted_palette(rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Two low-saturation colors with guaranteed luminance contrast."""
    dark = rng.uniform(0.25, 0.45) + rng.uniform(-0.08, 0.08, size=3)
    light = rng.uniform(0.55, 0.75) + rng.uniform(-0.08, 0.08, size=3)
    return np.clip(dark, 0.0, 1.0), np.clip(light, 0.0, 1.0)


def _texture(
    rng: np.random.Generator, height: int, width: int
) -> Tuple[np.ndarray, dict]:
    family = ("grating", "checker", "value_noise", "rings")[int(rng.integers(4))]
    dark, light = _muted_palette(rng)
    yy, xx = _pixel_grids(height, width)
    params: dict = {"family": family}

    if family == "grating":
        angle = float(rng.uniform(0.0, math.pi))
        period = float(rng.uniform(4.0, 16.0))
        phase = float(rng.uniform(0.0, 2.0 * math.pi))
        params.update(angle=angle, period=period, phase=phase)
        coord = xx * math.cos(angle) + yy * math.sin(angle)
        t = 0.5 + 0.5 * np.sin(2.0 * math.pi * coord / period + phase)
    elif family == "checker":
        cell = int(rng.integers(3, 11))
        oy = int(rng.integers(0, cell))
        ox = int(rng.integers(0, cell))
        params.update(cell=cell, offset=(oy, ox))
        t = (
            ((yy.astype(np.int64) + oy) // cell + (xx.astype(np.int64) + ox) // cell)
            % 2
        ).astype(np.float64)
    elif family == "value_noise":
        octaves = int(rng.integers(3, 5))
        params.update(octaves=octaves)
        t = np.zeros((height, width))
        amplitude = 1.0
        cells = 4
        for _ in range(octaves):
            grid = rng.uniform(0.0, 1.0, size=(cells, cells))
            t += amplitude * _bilinear_upsample(grid, height, width)
            amplitude *= 0.5
            cells *= 2
        t = (t - t.min()) / (t.max() - t.min())
    else:
        cy = float(rng.uniform(0.0, height))
        cx = float(rng.uniform(0.0, width))
        period = float(rng.uniform(4.0, 14.0))
        phase = float(rng.uniform(0.0, 2.0 * math.pi))
        params.update(center=(cy, cx), period=period, phase=phase)
        radius = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        t = 0.5 + 0.5 * np.sin(2.0 * math.pi * radius / period + phase)

    image = dark[:, None, None] + (light - dark)[:, None, None] * t[None, :, :]
    return np.clip(image, 0.0, 1.0), params


def gen_texture(seed: int, index: int, height: int, width: int) -> np.ndarray:
    """One structured non-semantic image from a randomly chosen family.

    Families: sinusoidal grating, checkerboard, multi-octave value
    noise, concentric rings; palettes are muted two-color ramps far from
    the scene class colors.  Deterministic in (seed, index).
    """
    if height < 8 or width < 8:
        raise ValueError(f"image size must be at least 8x8, got {height}x{width}")
    rng = _rng(seed, TEXTURE_STREAM, index)
    return _texture(rng, height, width)[0]


def texture_params(seed: int, index: int, height: int, width: int) -> dict:
    """The family and geometry parameters gen_texture uses for this item."""
    if height < 8 or width < 8:
        raise ValueError(f"image size must be at least 8x8, got {height}x{width}")
    rng = _rng(seed, TEXTURE_STREAM, index)
    return _texture(rng, height, width)[1]


def all_background_mask(height: int, width: int) -> np.ndarray:
    """The implied ground truth for noise and texture datasets."""
    return np.zeros((height, width), dtype=np.int64)


# --- persistence ---


def _file_sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def save_dataset(
    root: Union[str, Path],
    items: Sequence[Tuple[np.ndarray, Optional[np.ndarray]]],
    dataset_id: str,
    kind: str,
    seed: int,
    spec_payload: Mapping,
    text: Optional[Mapping[str, str]] = None,
    extra: Optional[Mapping[str, object]] = None,
) -> dict:
    """Write (image, mask-or-None) items plus a manifest; returns the manifest.

    Images land in `<root>/images/NNNNN.png` (8-bit RGB), masks in
    `<root>/masks/NNNNN.png` (8-bit palette).  The manifest records
    relative paths and SHA-256 digests of the written bytes, so its hash
    addresses the dataset content regardless of where the tree lives.
    """
    if kind not in DATASET_KINDS:
        raise ValueError(f"kind must be one of {DATASET_KINDS}, got {kind!r}")
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    has_masks = any(mask is not None for _, mask in items)
    if has_masks:
        (root / "masks").mkdir(parents=True, exist_ok=True)

    manifest_items: List[dict] = []
    for i, (image, mask) in enumerate(items):
        name = f"{i:05d}.png"
        image_rel = f"images/{name}"
        write_rgb_png(root / image_rel, image, text=text)
        entry: dict = {
            "image": image_rel,
            "image_sha256": _file_sha256(root / image_rel),
            "mask": None,
            "mask_sha256": None,
        }
        if mask is not None:
            mask_rel = f"masks/{name}"
            write_palette_png(root / mask_rel, mask, text=text)
            entry["mask"] = mask_rel
            entry["mask_sha256"] = _file_sha256(root / mask_rel)
        manifest_items.append(entry)

    manifest = dict(extra or {})
    manifest.update(
        {
            "dataset_id": dataset_id,
            "kind": kind,
            "seed": seed,
            "spec": dict(spec_payload),
            "spec_hash": payload_hash(spec_payload),
            "items": manifest_items,
        }
    )
    with open(root / "manifest.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    return manifest


def load_dataset(
    manifest_path: Union[str, Path]
) -> Tuple[np.ndarray, Optional[np.ndarray], dict]:
    """Read a saved dataset back into stacked arrays.

    Returns (images (N,3,H,W) float64 in [0,1], masks (N,H,W) int64 or
    None for background-only kinds, manifest).  Every file must exist
    and match its recorded digest.
    """
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise DatasetError(f"cannot read manifest {manifest_path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise DatasetError(f"manifest {manifest_path} is not valid JSON: {exc}")
    root = manifest_path.parent

    for key in ("dataset_id", "kind", "seed", "spec", "spec_hash", "items"):
        if key not in manifest:
            raise DatasetError(f"manifest {manifest_path} lacks key {key!r}")
    kind = manifest["kind"]
    if kind not in DATASET_KINDS:
        raise DatasetError(f"manifest {manifest_path} has unknown kind {kind!r}")
    labelled = kind == "in-distribution"

    images: List[np.ndarray] = []
    masks: List[np.ndarray] = []
    for entry in manifest["items"]:
        image_path = root / entry["image"]
        if not image_path.is_file():
            raise DatasetError(f"missing image file {image_path}")
        if _file_sha256(image_path) != entry["image_sha256"]:
            raise DatasetError(f"image file {image_path} does not match its digest")
        try:
            images.append(read_rgb_png(image_path))
        except Exception as exc:
            raise DatasetError(f"corrupt image file {image_path}: {exc}")
        if labelled:
            if entry["mask"] is None:
                raise DatasetError(
                    f"item {entry['image']} lacks a mask in an in-distribution set"
                )
            mask_path = root / entry["mask"]
            if not mask_path.is_file():
                raise DatasetError(f"missing mask file {mask_path}")
            if _file_sha256(mask_path) != entry["mask_sha256"]:
                raise DatasetError(f"mask file {mask_path} does not match its digest")
            try:
                masks.append(read_palette_png(mask_path))
            except Exception as exc:
                raise DatasetError(f"corrupt mask file {mask_path}: {exc}")
        elif entry["mask"] is not None:
            raise DatasetError(
                f"item {entry['image']} carries a mask in a background-only set"
            )

    if not images:
        return (
            np.zeros((0, 3, 0, 0)),
            np.zeros((0, 0, 0), dtype=np.int64) if labelled else None,
            manifest,
        )
    shapes = {img.shape for img in images}
    if len(shapes) != 1:
        raise DatasetError(f"images disagree on shape: {sorted(shapes)}")
    stacked = np.stack(images)
    if labelled:
        return stacked, np.stack(masks), manifest
    return stacked, None, manifest


def manifest_hash(manifest: Mapping) -> str:
    """Content hash of a dataset: SHA-256 over the canonical manifest JSON.

    The manifest embeds per-file digests, so this hash changes whenever
    any pixel changes and is stable under relocation of the tree.
    """
    return payload_hash(manifest)
