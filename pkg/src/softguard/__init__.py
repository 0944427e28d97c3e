"""softguard: a desk-scale study of implicit background heads.

A segmentation model can treat "background" as an ordinary class with
its own logit (explicit head) or derive the background logit as the
negative log-sum-exp of the class logits (implicit head), which provably
restricts when background can win and how confident it can be.  This
package provides the numerics, both heads, membership/non-distinctiveness
maps, a metrics suite, a small trainable network, synthetic datasets,
and a CLI that compares the two heads end to end, deterministically.
"""

from .data import SceneSpec, gen_noise, gen_scene, gen_texture
from .distinct import IDSoftmaxMode, MembershipMaps, expected_nd, membership
from .heads import (
    BACKGROUND_INDEX,
    HeadKind,
    bg_membership_closed_form,
    implicit_backward,
    implicit_compose,
)
from .metrics import ConfusionMatrix, ReliabilityBins, ece, miou, ood_bg_iou
from .model import ModelParams, TrainConfig, evaluate, train
from .numerics import log_softmax, logsumexp, softmax

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "BACKGROUND_INDEX",
    "HeadKind",
    "IDSoftmaxMode",
    "SceneSpec",
    "MembershipMaps",
    "ModelParams",
    "TrainConfig",
    "ConfusionMatrix",
    "ReliabilityBins",
    "softmax",
    "log_softmax",
    "logsumexp",
    "implicit_compose",
    "implicit_backward",
    "bg_membership_closed_form",
    "membership",
    "expected_nd",
    "ece",
    "miou",
    "ood_bg_iou",
    "gen_scene",
    "gen_noise",
    "gen_texture",
    "train",
    "evaluate",
]
