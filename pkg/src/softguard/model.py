"""Tiny fully-convolutional segmentation network with manual backprop.

Architecture: 3 -> 16 -> 32 -> out, where the first two layers are 3x3
same-padding convolutions with ReLU and the last is a linear 1x1
convolution.  ``out`` is the number of classes for the explicit head and
one fewer for the implicit head (the background logit is then derived,
not emitted).

Everything is float64 and fully deterministic: initialization and batch
shuffling draw from per-purpose PCG64 streams keyed on the seed, and no
operation depends on wall clock, thread count, or file paths.
"""

from __future__ import annotations

import json
import math
import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .distinct import IDSoftmaxMode, membership_field
from .heads import HeadKind, apply_head_field, implicit_backward_field
from .metrics import (
    IGNORE_LABEL,
    ConfusionMatrix,
    MetricsReport,
    ReliabilityBins,
    iou_per_class,
    miou,
)
from .numerics import log_softmax_field, softmax_field

__all__ = [
    "CHECKPOINT_FORMAT_VERSION",
    "ModelParams",
    "ParamTensors",
    "TrainConfig",
    "TrainingDivergenceError",
    "CheckpointError",
    "init_params",
    "forward",
    "forward_batch",
    "backward_batch",
    "composite_logits",
    "cross_entropy_loss",
    "sgd_step",
    "train",
    "evaluate",
    "evaluate_with_reliability",
    "save_checkpoint",
    "load_checkpoint",
    "evaluation_shards",
]

HIDDEN1 = 16
HIDDEN2 = 32
IN_CHANNELS = 3

_PARAM_FIELDS = ("w1", "b1", "w2", "b2", "w3", "b3")

# Stream tags keep the init and shuffle draws independent of the dataset
# generator streams (0..2) that share the same seed integers.
_INIT_STREAM = 3
_SHUFFLE_STREAM = 4

CHECKPOINT_FORMAT_VERSION = 1
_CHECKPOINT_MAGIC = b"SGCK"


class TrainingDivergenceError(RuntimeError):
    """Raised when a loss or gradient stops being finite."""


class CheckpointError(RuntimeError):
    """Raised when a checkpoint file cannot be parsed or validated."""


@dataclass
class ParamTensors:
    """One array per parameter tensor; doubles as a gradient/velocity bag."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def arrays(self) -> List[np.ndarray]:
        return [getattr(self, name) for name in _PARAM_FIELDS]

    def copy(self) -> "ParamTensors":
        return ParamTensors(*[a.copy() for a in self.arrays()])

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


@dataclass
class ModelParams:
    """Network parameters plus the head wiring they were built for.

    Shapes: w1 (16,3,3,3), b1 (16,), w2 (32,16,3,3), b2 (32,),
    w3 (out,32), b3 (out,) with out = head_kind.out_channels(num_classes).
    """

    tensors: ParamTensors
    num_classes: int
    head_kind: HeadKind

    def __post_init__(self) -> None:
        out = self.head_kind.out_channels(self.num_classes)
        expected = {
            "w1": (HIDDEN1, IN_CHANNELS, 3, 3),
            "b1": (HIDDEN1,),
            "w2": (HIDDEN2, HIDDEN1, 3, 3),
            "b2": (HIDDEN2,),
            "w3": (out, HIDDEN2),
            "b3": (out,),
        }
        for name, shape in expected.items():
            arr = getattr(self.tensors, name)
            if arr.shape != shape:
                raise ValueError(
                    f"parameter {name} has shape {arr.shape}, expected {shape} "
                    f"for {self.head_kind.value} head with {self.num_classes} classes"
                )

    @property
    def out_channels(self) -> int:
        return self.head_kind.out_channels(self.num_classes)

    def parameter_count(self) -> int:
        return sum(a.size for a in self.tensors.arrays())

    def copy(self) -> "ModelParams":
        return ModelParams(self.tensors.copy(), self.num_classes, self.head_kind)

    @classmethod
    def zeros(cls, num_classes: int, head_kind: HeadKind) -> "ModelParams":
        out = head_kind.out_channels(num_classes)
        tensors = ParamTensors(
            w1=np.zeros((HIDDEN1, IN_CHANNELS, 3, 3)),
            b1=np.zeros(HIDDEN1),
            w2=np.zeros((HIDDEN2, HIDDEN1, 3, 3)),
            b2=np.zeros(HIDDEN2),
            w3=np.zeros((out, HIDDEN2)),
            b3=np.zeros(out),
        )
        return cls(tensors, num_classes, head_kind)


def _zeros_like_tensors(params: ModelParams) -> ParamTensors:
    return ParamTensors(*[np.zeros_like(a) for a in params.tensors.arrays()])


def init_params(num_classes: int, head_kind: HeadKind, seed: int) -> ModelParams:
    """Fan-in-scaled uniform initialization from a dedicated seeded stream.

    The trunk (conv1, conv2) is drawn before the head layer, so explicit
    and implicit variants built from the same seed start from identical
    trunk weights and differ only in the final layer.
    """
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([seed, _INIT_STREAM]))
    )

    def draw(shape: Tuple[int, ...], fan_in: int) -> np.ndarray:
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    out = head_kind.out_channels(num_classes)
    tensors = ParamTensors(
        w1=draw((HIDDEN1, IN_CHANNELS, 3, 3), IN_CHANNELS * 9),
        b1=draw((HIDDEN1,), IN_CHANNELS * 9),
        w2=draw((HIDDEN2, HIDDEN1, 3, 3), HIDDEN1 * 9),
        b2=draw((HIDDEN2,), HIDDEN1 * 9),
        w3=draw((out, HIDDEN2), HIDDEN2),
        b3=draw((out,), HIDDEN2),
    )
    return ModelParams(tensors, num_classes, head_kind)


# --- convolution kernels (batched, channel axis second) ---


def _corr3x3(x: np.ndarray, w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Same-padding 3x3 correlation of (N,C,H,W) with kernels (F,C,3,3).

    Returns the output (N,F,H,W) and the im2col matrix (N*H*W, C*9) so
    callers can reuse it for the weight gradient.
    """
    n, c, h, wdt = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(2, 3))
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wdt, c * 9)
    out = cols @ w.reshape(w.shape[0], c * 9).T
    return out.reshape(n, h, wdt, w.shape[0]).transpose(0, 3, 1, 2), cols


def _corr3x3_input_grad(grad_out: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Gradient of a same-padding 3x3 correlation with respect to its input.

    Equals a same-padding correlation of the output gradient with the
    spatially flipped kernels, transposed to map F channels back to C.
    """
    wt = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    out, _ = _corr3x3(grad_out, np.ascontiguousarray(wt))
    return out


def _forward_batch_raw(
    params: ModelParams, images: np.ndarray
) -> Tuple[np.ndarray, dict]:
    t = params.tensors
    a1, cols1 = _corr3x3(images, t.w1)
    a1 += t.b1[None, :, None, None]
    h1 = np.maximum(a1, 0.0)
    a2, cols2 = _corr3x3(h1, t.w2)
    a2 += t.b2[None, :, None, None]
    h2 = np.maximum(a2, 0.0)
    n, _, h, wdt = images.shape
    h2f = h2.transpose(0, 2, 3, 1).reshape(n * h * wdt, HIDDEN2)
    raw = (h2f @ t.w3.T + t.b3).reshape(n, h, wdt, params.out_channels)
    raw = raw.transpose(0, 3, 1, 2)
    cache = {"a1": a1, "a2": a2, "cols1": cols1, "cols2": cols2, "h2f": h2f}
    return raw, cache


def forward_batch(
    params: ModelParams, images: np.ndarray
) -> Tuple[np.ndarray, dict]:
    """Raw logits (N, out, H, W) plus cached activations for backward.

    Images must be (N, 3, H, W) with values in [0, 1] and H, W >= 3.
    """
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim != 4 or arr.shape[1] != IN_CHANNELS:
        raise ValueError(f"expected images of shape (N, 3, H, W), got {arr.shape}")
    if arr.shape[2] < 3 or arr.shape[3] < 3:
        raise ValueError(f"spatial size must be at least 3x3, got {arr.shape[2:]}")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("image values must lie in [0, 1]")
    return _forward_batch_raw(params, arr)


def forward(params: ModelParams, image: np.ndarray) -> Tuple[np.ndarray, dict]:
    """Single-image wrapper around forward_batch; returns (out, H, W) logits."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected an image of shape (3, H, W), got {arr.shape}")
    raw, cache = forward_batch(params, arr[None])
    return raw[0], cache


def backward_batch(
    params: ModelParams, cache: dict, grad_raw: np.ndarray
) -> ParamTensors:
    """Parameter gradients for a batch, given d(loss)/d(raw logits)."""
    t = params.tensors
    n, _, h, wdt = grad_raw.shape
    gf = grad_raw.transpose(0, 2, 3, 1).reshape(n * h * wdt, params.out_channels)
    g_w3 = gf.T @ cache["h2f"]
    g_b3 = gf.sum(axis=0)
    g_h2 = (gf @ t.w3).reshape(n, h, wdt, HIDDEN2).transpose(0, 3, 1, 2)

    g_a2 = g_h2 * (cache["a2"] > 0.0)
    g2f = g_a2.transpose(0, 2, 3, 1).reshape(n * h * wdt, HIDDEN2)
    g_w2 = (g2f.T @ cache["cols2"]).reshape(t.w2.shape)
    g_b2 = g_a2.sum(axis=(0, 2, 3))
    g_h1 = _corr3x3_input_grad(g_a2, t.w2)

    g_a1 = g_h1 * (cache["a1"] > 0.0)
    g1f = g_a1.transpose(0, 2, 3, 1).reshape(n * h * wdt, HIDDEN1)
    g_w1 = (g1f.T @ cache["cols1"]).reshape(t.w1.shape)
    g_b1 = g_a1.sum(axis=(0, 2, 3))

    return ParamTensors(w1=g_w1, b1=g_b1, w2=g_w2, b2=g_b2, w3=g_w3, b3=g_b3)


def composite_logits(params: ModelParams, image: np.ndarray) -> np.ndarray:
    """Head-composed per-pixel class logits (num_classes, H, W)."""
    raw, _ = forward(params, image)
    return apply_head_field(params.head_kind, raw, axis=0)


# --- loss ---


def _cross_entropy_batch(
    composite: np.ndarray, labels: np.ndarray, ignore_label: int
) -> Tuple[float, np.ndarray, int, int]:
    """Mean per-pixel cross-entropy over scored pixels plus its gradient.

    Returns (loss, grad, n_scored, n_correct); the gradient is
    (softmax - onehot) / n_scored at scored pixels and zero elsewhere.
    """
    labels = np.asarray(labels)
    if labels.shape != (composite.shape[0],) + composite.shape[2:]:
        raise ValueError(
            f"labels of shape {labels.shape} do not match logits {composite.shape}"
        )
    k = composite.shape[1]
    scored = labels != ignore_label
    n_scored = int(np.count_nonzero(scored))
    if n_scored == 0:
        raise ValueError("no scored pixels: every label equals the ignore value")
    ls = labels[scored]
    if ls.min() < 0 or ls.max() >= k:
        raise ValueError(f"labels must lie in [0, {k - 1}] or equal {ignore_label}")

    log_p = log_softmax_field(composite, axis=1)
    bi, hi, wi = np.nonzero(scored)
    loss = float(-np.sum(log_p[bi, ls, hi, wi]) / n_scored)

    grad = softmax_field(composite, axis=1)
    grad *= scored[:, None, :, :]
    grad[bi, ls, hi, wi] -= 1.0
    grad /= n_scored

    pred = np.argmax(composite, axis=1)
    n_correct = int(np.count_nonzero(pred[scored] == ls))
    return loss, grad, n_scored, n_correct


def cross_entropy_loss(
    composite: np.ndarray, labels: np.ndarray, ignore_label: int = IGNORE_LABEL
) -> Tuple[float, np.ndarray]:
    """Cross-entropy of (k,H,W) composite logits against (H,W) labels.

    Loss is the mean over scored (non-ignored) pixels of
    -log_softmax(v)[label]; the returned gradient has the same shape as
    the logits, equals (softmax - onehot) / n_scored at scored pixels,
    and is zero at ignored pixels.
    """
    arr = np.asarray(composite, dtype=np.float64)
    if arr.ndim != 3:
        raise ValueError(f"expected logits of shape (k, H, W), got {arr.shape}")
    loss, grad, _, _ = _cross_entropy_batch(
        arr[None], np.asarray(labels)[None], ignore_label
    )
    return loss, grad[0]


# --- optimizer ---


def sgd_step(
    params: ModelParams,
    grads: ParamTensors,
    lr: float,
    momentum: float,
    velocity: ParamTensors,
) -> Tuple[ModelParams, ParamTensors]:
    """Classic momentum update: v <- momentum*v + g; p <- p - lr*v."""
    if not grads.all_finite():
        raise TrainingDivergenceError("non-finite gradient encountered")
    new_v = []
    new_p = []
    for p, g, v in zip(params.tensors.arrays(), grads.arrays(), velocity.arrays()):
        if g.shape != p.shape or v.shape != p.shape:
            raise ValueError("gradient/velocity shapes do not match parameters")
        vn = momentum * v + g
        new_v.append(vn)
        new_p.append(p - lr * vn)
    return (
        ModelParams(ParamTensors(*new_p), params.num_classes, params.head_kind),
        ParamTensors(*new_v),
    )


# --- training ---


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for one training run; identical config + seed
    reproduces a bit-identical trajectory."""

    learning_rate: float = 0.05
    momentum: float = 0.9
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    head_kind: HeadKind = HeadKind.EXPLICIT
    ece_bins: int = 15
    id_softmax: IDSoftmaxMode = IDSoftmaxMode.SUB_VECTOR

    def __post_init__(self) -> None:
        if not (self.learning_rate > 0.0):
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not (0.0 <= self.momentum < 1.0):
            raise ValueError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.seed < 0:
            raise ValueError(f"seed must be non-negative, got {self.seed}")
        if self.ece_bins < 1:
            raise ValueError(f"ece_bins must be >= 1, got {self.ece_bins}")


def train(
    config: TrainConfig,
    images: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
) -> Tuple[ModelParams, List[dict]]:
    """Train from scratch on (N,3,H,W) images and (N,H,W) labels.

    Returns the final parameters and one log record per epoch with the
    scored-pixel mean loss and pixel accuracy, both measured on the
    pre-update forward pass of each batch.
    """
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels)
    if images.ndim != 4 or labels.ndim != 3 or images.shape[0] != labels.shape[0]:
        raise ValueError(
            f"expected (N,3,H,W) images with matching (N,H,W) labels, got "
            f"{images.shape} and {labels.shape}"
        )
    if images.shape[0] == 0:
        raise ValueError("training set must not be empty")

    params = init_params(num_classes, config.head_kind, config.seed)
    velocity = _zeros_like_tensors(params)
    shuffle_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence([config.seed, _SHUFFLE_STREAM]))
    )
    implicit = config.head_kind is HeadKind.IMPLICIT

    log: List[dict] = []
    n_items = images.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = shuffle_rng.permutation(n_items)
        nll_sum = 0.0
        scored_total = 0
        correct_total = 0
        for start in range(0, n_items, config.batch_size):
            idx = order[start : start + config.batch_size]
            raw, cache = forward_batch(params, images[idx])
            composite = apply_head_field(config.head_kind, raw, axis=1)
            loss, g_comp, n_scored, n_correct = _cross_entropy_batch(
                composite, labels[idx], IGNORE_LABEL
            )
            if not math.isfinite(loss):
                raise TrainingDivergenceError(
                    f"loss became non-finite at epoch {epoch}"
                )
            grad_raw = (
                implicit_backward_field(raw, g_comp, axis=1) if implicit else g_comp
            )
            grads = backward_batch(params, cache, grad_raw)
            try:
                params, velocity = sgd_step(
                    params, grads, config.learning_rate, config.momentum, velocity
                )
            except TrainingDivergenceError as exc:
                raise TrainingDivergenceError(f"{exc} at epoch {epoch}") from None
            nll_sum += loss * n_scored
            scored_total += n_scored
            correct_total += n_correct
        log.append(
            {
                "epoch": epoch,
                "loss": nll_sum / scored_total,
                "pixel_accuracy": correct_total / scored_total,
            }
        )
    if not params.tensors.all_finite():
        raise TrainingDivergenceError("parameters non-finite after final epoch")
    return params, log


# --- evaluation ---


def evaluation_shards() -> int:
    """Worker cap for evaluation, from SOFTGUARD_THREADS (default 1)."""
    raw = os.environ.get("SOFTGUARD_THREADS", "1")
    try:
        value = int(raw)
    except ValueError:
        raise ValueError(f"SOFTGUARD_THREADS must be an integer, got {raw!r}")
    return max(1, value)


class _DatasetAccumulator:
    """Mergeable per-dataset evaluation state.

    Confusion counts are integers (exact merge); calibration sums use the
    compensated ReliabilityBins; non-distinctiveness keeps one exact
    per-image sum so the final mean is independent of sharding.
    """

    def __init__(self, num_classes: int, ece_bins: int, labelled: bool):
        self.labelled = labelled
        self.cm = ConfusionMatrix(num_classes) if labelled else None
        self.bins = ReliabilityBins(ece_bins)
        self.nd_sums: List[float] = []
        self.pixel_total = 0
        self.bg_predicted = 0

    def merge(self, other: "_DatasetAccumulator") -> None:
        if self.cm is not None:
            self.cm.merge(other.cm)
        self.bins.merge(other.bins)
        self.nd_sums.extend(other.nd_sums)
        self.pixel_total += other.pixel_total
        self.bg_predicted += other.bg_predicted

    def expected_nd_percent(self) -> float:
        if self.pixel_total == 0:
            raise ValueError("no pixels accumulated")
        return 100.0 * math.fsum(self.nd_sums) / self.pixel_total


_EVAL_CHUNK = 16


def _eval_shard(
    params: ModelParams,
    images: np.ndarray,
    masks: Optional[np.ndarray],
    indices: Sequence[int],
    ece_bins: int,
    id_softmax: IDSoftmaxMode,
) -> _DatasetAccumulator:
    acc = _DatasetAccumulator(params.num_classes, ece_bins, labelled=masks is not None)
    for start in range(0, len(indices), _EVAL_CHUNK):
        chunk = list(indices[start : start + _EVAL_CHUNK])
        raw, _ = forward_batch(params, images[chunk])
        composite = apply_head_field(params.head_kind, raw, axis=1)
        probs = softmax_field(composite, axis=1)
        conf = probs.max(axis=1)
        pred = np.argmax(composite, axis=1)
        for j, item in enumerate(chunk):
            mu = membership_field(composite[j], mode=id_softmax)
            acc.nd_sums.append(float(np.sum(mu.mu_nd, dtype=np.float64)))
            acc.pixel_total += mu.pixel_count
            acc.bg_predicted += int(np.count_nonzero(pred[j] == 0))
            if masks is not None:
                gt = masks[item]
                acc.cm.add(pred[j], gt, ignore_label=IGNORE_LABEL)
                scored = gt != IGNORE_LABEL
                acc.bins.add(conf[j][scored], pred[j][scored] == gt[scored])
            else:
                acc.bins.add(conf[j], pred[j] == 0)
    return acc


def _evaluate_dataset(
    params: ModelParams,
    images: np.ndarray,
    masks: Optional[np.ndarray],
    ece_bins: int,
    id_softmax: IDSoftmaxMode,
) -> _DatasetAccumulator:
    n = images.shape[0]
    if n == 0:
        raise ValueError("evaluation dataset must not be empty")
    workers = min(evaluation_shards(), n)
    shards = [list(range(s, n, workers)) for s in range(workers)]
    if workers == 1:
        results = [_eval_shard(params, images, masks, shards[0], ece_bins, id_softmax)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(
                    _eval_shard, params, images, masks, shard, ece_bins, id_softmax
                )
                for shard in shards
            ]
            results = [f.result() for f in futures]
    merged = results[0]
    for other in results[1:]:
        merged.merge(other)
    return merged


def evaluate_with_reliability(
    params: ModelParams,
    labelled: Mapping[str, Tuple[np.ndarray, np.ndarray]],
    background_only: Mapping[str, np.ndarray],
    ece_bins: int = 15,
    id_softmax: IDSoftmaxMode = IDSoftmaxMode.SUB_VECTOR,
    metadata: Optional[dict] = None,
) -> Tuple[MetricsReport, Dict[str, ReliabilityBins]]:
    """Score labelled and background-only datasets with one set of params.

    Labelled datasets contribute mIOU, ECE (non-void pixels), and
    expected non-distinctiveness.  Background-only datasets contribute
    background IoU (the all-background ground truth is implied), ECE over
    all pixels with "predicted background" as correctness, and expected
    non-distinctiveness.  Returns the report plus per-dataset reliability
    bins for diagram export.
    """
    if not labelled and not background_only:
        raise ValueError("need at least one dataset to evaluate")
    overlap = set(labelled) & set(background_only)
    if overlap:
        raise ValueError(f"dataset names used twice: {sorted(overlap)}")

    meta = dict(metadata or {})
    meta.setdefault("head_kind", params.head_kind.value)
    meta.setdefault("num_classes", params.num_classes)
    meta.setdefault("ece_bins", ece_bins)
    meta.setdefault("id_softmax", id_softmax.value)
    meta.setdefault(
        "ece_pixels",
        {
            **{name: "non_void" for name in labelled},
            **{name: "all" for name in background_only},
        },
    )

    report = MetricsReport(metadata=meta)
    bins_by_dataset: Dict[str, ReliabilityBins] = {}

    for name in sorted(labelled):
        images, masks = labelled[name]
        acc = _evaluate_dataset(params, images, np.asarray(masks), ece_bins, id_softmax)
        report.miou[name] = miou(acc.cm)
        report.per_class_iou[name] = iou_per_class(acc.cm)
        report.ece[name] = acc.bins.ece()
        report.expected_nd[name] = acc.expected_nd_percent()
        bins_by_dataset[name] = acc.bins

    for name in sorted(background_only):
        images = background_only[name]
        acc = _evaluate_dataset(params, images, None, ece_bins, id_softmax)
        report.bg_iou[name] = 100.0 * (acc.bg_predicted / acc.pixel_total)
        report.ece[name] = acc.bins.ece()
        report.expected_nd[name] = acc.expected_nd_percent()
        bins_by_dataset[name] = acc.bins

    return report, bins_by_dataset


def evaluate(
    params: ModelParams,
    labelled: Mapping[str, Tuple[np.ndarray, np.ndarray]],
    background_only: Mapping[str, np.ndarray],
    ece_bins: int = 15,
    id_softmax: IDSoftmaxMode = IDSoftmaxMode.SUB_VECTOR,
    metadata: Optional[dict] = None,
) -> MetricsReport:
    """evaluate_with_reliability without the reliability bins."""
    report, _ = evaluate_with_reliability(
        params, labelled, background_only, ece_bins, id_softmax, metadata
    )
    return report


# --- checkpoint I/O ---


def save_checkpoint(
    path: Union[str, Path],
    params: ModelParams,
    seed: int,
    extra: Optional[Mapping[str, object]] = None,
) -> None:
    """Write a header-plus-blob checkpoint.

    Layout: magic "SGCK", little-endian uint64 header length, JSON header
    with sorted keys, then each parameter tensor as little-endian float64
    in a fixed order.
    """
    header = dict(extra or {})
    header.update(
        {
            "format_version": CHECKPOINT_FORMAT_VERSION,
            "head_kind": params.head_kind.value,
            "num_classes": params.num_classes,
            "seed": seed,
            "arrays": [
                {"name": name, "shape": list(getattr(params.tensors, name).shape)}
                for name in _PARAM_FIELDS
            ],
        }
    )
    blob = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for a in params.tensors.arrays()
    )
    encoded = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(encoded)))
        fh.write(encoded)
        fh.write(blob)


def load_checkpoint(path: Union[str, Path]) -> Tuple[ModelParams, dict]:
    """Read a checkpoint written by save_checkpoint.

    Raises CheckpointError (naming the supported format version) on any
    structural problem: bad magic, truncated file, version mismatch, or
    shapes inconsistent with the declared head kind.
    """
    supported = f"format version {CHECKPOINT_FORMAT_VERSION}"
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint ({supported}): {exc}") from None
    if len(data) < 12 or data[:4] != _CHECKPOINT_MAGIC:
        raise CheckpointError(
            f"not a checkpoint: missing {_CHECKPOINT_MAGIC!r} magic ({supported})"
        )
    (header_len,) = struct.unpack("<Q", data[4:12])
    if len(data) < 12 + header_len:
        raise CheckpointError(f"truncated checkpoint header ({supported})")
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header ({supported}): {exc}")
    version = header.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint has format version {version}; this build supports "
            f"{CHECKPOINT_FORMAT_VERSION}"
        )
    try:
        head_kind = HeadKind.parse(header["head_kind"])
        num_classes = int(header["num_classes"])
        declared = header["arrays"]
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"invalid checkpoint header ({supported}): {exc}")

    blob = data[12 + header_len :]
    arrays = {}
    offset = 0
    for entry in declared:
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise CheckpointError(f"truncated checkpoint blob ({supported})")
        arrays[entry["name"]] = (
            np.frombuffer(blob, dtype="<f8", count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError(
            f"checkpoint blob has {len(blob) - offset} trailing bytes ({supported})"
        )
    missing = [name for name in _PARAM_FIELDS if name not in arrays]
    if missing:
        raise CheckpointError(f"checkpoint missing tensors {missing} ({supported})")
    try:
        params = ModelParams(
            ParamTensors(*[arrays[name] for name in _PARAM_FIELDS]),
            num_classes,
            head_kind,
        )
    except ValueError as exc:
        raise CheckpointError(f"inconsistent checkpoint shapes ({supported}): {exc}")
    return params, header
