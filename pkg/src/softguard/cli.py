"""Command line: generate data, train either head, evaluate, render maps.

Exit codes are a stable contract: 0 success, 1 usage error, 2 data or
file-format error, 3 training divergence.  Every emitted artifact embeds
the resolved config hash and the tool version (JSON fields, CSV preamble
comments, PNG text chunks), and repeated runs with an equal config hash
produce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .data import (
    DatasetError,
    GenerationError,
    gen_noise,
    gen_scene,
    gen_texture,
    load_dataset,
    manifest_hash,
    save_dataset,
)
from .distinct import IDSoftmaxMode, membership_field, render_membership_png
from .heads import HeadKind
from .metrics import write_reliability_csv
from .model import (
    CheckpointError,
    TrainingDivergenceError,
    composite_logits,
    evaluate_with_reliability,
    load_checkpoint,
    save_checkpoint,
    train,
)
from .pngio import read_rgb_png, write_palette_png

__all__ = ["main", "build_parser", "EXIT_OK", "EXIT_USAGE", "EXIT_DATA", "EXIT_DIVERGENCE"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3

COMPARE_COLUMNS = (
    "miou_val",
    "bg_iou_texture",
    "bg_iou_noise",
    "ece_val",
    "ece_texture",
    "ece_noise",
    "end_val",
    "end_texture",
    "end_noise",
)

_NOISE_MODEL_NOTE = "per-channel gaussian, mean 0.5, stddev 0.25, clipped to [0,1]"
_PRNG_NOTE = "pcg64 seeded via seed sequence [seed, stream, index]"


class _ArgumentParser(argparse.ArgumentParser):
    """argparse exits with 2 on bad usage; this project reserves 2 for
    data errors, so usage failures exit 1 instead."""

    def error(self, message: str) -> None:
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--config", type=Path, default=None, help="JSON config file (defaults when omitted)"
    )
    p.add_argument(
        "--out", type=Path, default=None, help="output root, overriding the config value"
    )


def _add_head_seed(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--head", choices=["explicit", "implicit"], required=True, help="background head kind"
    )
    p.add_argument(
        "--seed", type=int, default=None, help="training seed (default: first config seed)"
    )


def _add_metric_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--ece-bins", type=int, default=None, help="calibration bin count override")
    p.add_argument(
        "--id-softmax",
        choices=["sub", "full"],
        default=None,
        help="in-distribution membership softmax mode override",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="softguard",
        description="Synthetic study of explicit vs implicit background heads in segmentation.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("generate", help="generate train/val scenes plus noise and texture sets")
    _add_common(p)
    p.add_argument("--force", action="store_true", help="replace an existing data directory")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train one head kind on the generated training set")
    _add_common(p)
    _add_head_seed(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on val, noise, and texture sets")
    _add_common(p)
    _add_head_seed(p)
    _add_metric_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("maps", help="render membership maps and a segmentation for one image")
    _add_common(p)
    _add_head_seed(p)
    _add_metric_flags(p)
    p.add_argument("image", type=Path, help="RGB PNG to analyze")
    p.set_defaults(func=cmd_maps)

    p = sub.add_parser("compare", help="evaluate both heads over the config seed list")
    _add_common(p)
    _add_metric_flags(p)
    p.set_defaults(func=cmd_compare)

    return parser


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        cfg = ExperimentConfig.from_file(args.config)
    else:
        cfg = ExperimentConfig.defaults()
    if args.out is not None:
        resolved = json.loads(json.dumps(cfg.resolved))
        resolved["out_root"] = str(args.out)
        cfg = ExperimentConfig(resolved)
    return cfg


def _provenance(cfg: ExperimentConfig) -> Dict[str, str]:
    return {"config_hash": cfg.config_hash, "version": __version__}


def _csv_preamble(cfg: ExperimentConfig) -> str:
    return f"config_hash={cfg.config_hash} version={__version__}"


def _checkpoint_path(cfg: ExperimentConfig, head: HeadKind, seed: int) -> Path:
    return cfg.out_root / "checkpoints" / f"{head.value}_seed{seed}.ckpt"


def _resolve_seed(args: argparse.Namespace, cfg: ExperimentConfig) -> int:
    return cfg.seeds[0] if args.seed is None else args.seed


def _resolve_metric_options(args, cfg) -> "tuple[int, IDSoftmaxMode]":
    ece_bins = cfg.ece_bins if args.ece_bins is None else args.ece_bins
    if ece_bins < 1:
        raise ValueError(f"--ece-bins must be >= 1, got {ece_bins}")
    mode = cfg.id_softmax_mode() if args.id_softmax is None else IDSoftmaxMode.parse(args.id_softmax)
    return ece_bins, mode


# --- generate ---


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    data_root = cfg.out_root / "data"
    if data_root.exists() and any(data_root.iterdir()):
        if not args.force:
            raise DatasetError(
                f"{data_root} already contains files; pass --force to regenerate"
            )
        shutil.rmtree(data_root)

    spec = cfg.scene_spec()
    d = cfg.data
    text = _provenance(cfg)
    extra = _provenance(cfg)
    h, w = d["height"], d["width"]

    train_items = [gen_scene(spec, i) for i in range(d["train_items"])]
    save_dataset(
        data_root / "train", train_items, dataset_id="train", kind="in-distribution",
        seed=spec.seed, spec_payload=asdict(spec), text=text, extra=extra,
    )
    # Validation scenes continue the index range so the two splits never
    # share an item even though they share the generator seed.
    val_items = [gen_scene(spec, d["train_items"] + i) for i in range(d["val_items"])]
    save_dataset(
        data_root / "val", val_items, dataset_id="val", kind="in-distribution",
        seed=spec.seed, spec_payload=asdict(spec), text=text, extra=extra,
    )
    noise_payload = {"height": h, "width": w, "seed": d["seed"], "model": _NOISE_MODEL_NOTE}
    noise_items = [(gen_noise(d["seed"], i, h, w), None) for i in range(d["noise_items"])]
    save_dataset(
        data_root / "noise", noise_items, dataset_id="noise", kind="noise",
        seed=d["seed"], spec_payload=noise_payload, text=text, extra=extra,
    )
    texture_payload = {"height": h, "width": w, "seed": d["seed"]}
    texture_items = [(gen_texture(d["seed"], i, h, w), None) for i in range(d["texture_items"])]
    save_dataset(
        data_root / "texture", texture_items, dataset_id="texture", kind="texture",
        seed=d["seed"], spec_payload=texture_payload, text=text, extra=extra,
    )

    for name, count in (
        ("train", len(train_items)),
        ("val", len(val_items)),
        ("noise", len(noise_items)),
        ("texture", len(texture_items)),
    ):
        print(f"wrote {count} items to {data_root / name}")
    return EXIT_OK


# --- train ---


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    head = HeadKind.parse(args.head)
    seed = _resolve_seed(args, cfg)

    images, masks, manifest = load_dataset(cfg.out_root / "data" / "train" / "manifest.json")
    dataset_hash = manifest_hash(manifest)
    train_cfg = cfg.train_config(head, seed)
    params, log = train(train_cfg, images, masks, cfg.data["num_classes"])

    ckpt_path = _checkpoint_path(cfg, head, seed)
    ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        ckpt_path, params, seed,
        extra={**_provenance(cfg), "dataset_hash": dataset_hash},
    )

    log_path = cfg.out_root / "logs" / f"train_{head.value}_seed{seed}.jsonl"
    log_path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "record": "header",
        **_provenance(cfg),
        "dataset_hash": dataset_hash,
        "head_kind": head.value,
        "seed": seed,
        "config": cfg.resolved,
    }
    with open(log_path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for record in log:
            fh.write(json.dumps({"record": "epoch", **record}, sort_keys=True) + "\n")

    final = log[-1]
    print(
        f"trained {head.value} head (seed {seed}): "
        f"loss {final['loss']:.6f}, pixel accuracy {final['pixel_accuracy']:.4f}"
    )
    print(f"checkpoint: {ckpt_path}")
    print(f"log: {log_path}")
    return EXIT_OK


# --- eval ---


def _load_eval_datasets(cfg: ExperimentConfig):
    data_root = cfg.out_root / "data"
    val_images, val_masks, val_manifest = load_dataset(data_root / "val" / "manifest.json")
    noise_images, _, noise_manifest = load_dataset(data_root / "noise" / "manifest.json")
    texture_images, _, texture_manifest = load_dataset(data_root / "texture" / "manifest.json")
    hashes = {
        "val": manifest_hash(val_manifest),
        "noise": manifest_hash(noise_manifest),
        "texture": manifest_hash(texture_manifest),
    }
    return (val_images, val_masks), noise_images, texture_images, hashes


def _evaluate_checkpoint(
    cfg: ExperimentConfig,
    head: HeadKind,
    seed: int,
    ece_bins: int,
    id_mode: IDSoftmaxMode,
    datasets=None,
):
    ckpt_path = _checkpoint_path(cfg, head, seed)
    if not ckpt_path.is_file():
        raise CheckpointError(
            f"missing checkpoint for {head.value} head, seed {seed}: {ckpt_path}"
        )
    params, header = load_checkpoint(ckpt_path)
    if params.head_kind is not head:
        raise CheckpointError(
            f"checkpoint {ckpt_path} holds a {params.head_kind.value} head, expected {head.value}"
        )
    if datasets is None:
        datasets = _load_eval_datasets(cfg)
    (val_images, val_masks), noise_images, texture_images, hashes = datasets
    metadata = {
        **_provenance(cfg),
        "head_kind": head.value,
        "seed": seed,
        "checkpoint": ckpt_path.name,
        "dataset_hashes": hashes,
        "conventions": {"noise_model": _NOISE_MODEL_NOTE, "prng": _PRNG_NOTE},
        "config": cfg.resolved,
    }
    return evaluate_with_reliability(
        params,
        {"val": (val_images, val_masks)},
        {"noise": noise_images, "texture": texture_images},
        ece_bins=ece_bins,
        id_softmax=id_mode,
        metadata=metadata,
    )


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    head = HeadKind.parse(args.head)
    seed = _resolve_seed(args, cfg)
    ece_bins, id_mode = _resolve_metric_options(args, cfg)

    report, bins = _evaluate_checkpoint(cfg, head, seed, ece_bins, id_mode)

    reports_dir = cfg.out_root / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    json_path = reports_dir / f"eval_{head.value}_seed{seed}.json"
    json_path.write_text(report.to_json())
    csv_path = reports_dir / f"eval_{head.value}_seed{seed}.csv"
    report.write_csv(csv_path, preamble=_csv_preamble(cfg))
    for dataset, dataset_bins in sorted(bins.items()):
        write_reliability_csv(
            reports_dir / f"reliability_{head.value}_seed{seed}_{dataset}.csv",
            dataset_bins,
            preamble=_csv_preamble(cfg),
        )

    print(f"report: {json_path}")
    for metric, dataset, value in report.metric_rows():
        print(f"  {metric}[{dataset}] = {value:.4f}")
    return EXIT_OK


# --- maps ---


def cmd_maps(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    head = HeadKind.parse(args.head)
    seed = _resolve_seed(args, cfg)
    _, id_mode = _resolve_metric_options(args, cfg)

    ckpt_path = _checkpoint_path(cfg, head, seed)
    if not ckpt_path.is_file():
        raise CheckpointError(
            f"missing checkpoint for {head.value} head, seed {seed}: {ckpt_path}"
        )
    params, _ = load_checkpoint(ckpt_path)
    if not args.image.is_file():
        raise DatasetError(f"image file not found: {args.image}")
    image = read_rgb_png(args.image)

    composite = composite_logits(params, image)
    maps = membership_field(composite, mode=id_mode)
    seg = np.argmax(composite, axis=0)

    out_dir = cfg.out_root / "maps"
    out_dir.mkdir(parents=True, exist_ok=True)
    text = {
        **_provenance(cfg),
        "head_kind": head.value,
        "seed": str(seed),
        "id_softmax": id_mode.value,
    }
    written = render_membership_png(maps, out_dir / args.image.stem, text=text)
    seg_path = out_dir / f"{args.image.stem}_seg.png"
    write_palette_png(seg_path, seg, text=text)
    written["seg"] = seg_path

    for name in ("id", "bg", "nd", "seg"):
        print(f"wrote {written[name]}")
    return EXIT_OK


# --- compare ---


def _columns_from_report(report) -> Dict[str, float]:
    return {
        "miou_val": report.miou["val"],
        "bg_iou_texture": report.bg_iou["texture"],
        "bg_iou_noise": report.bg_iou["noise"],
        "ece_val": report.ece["val"],
        "ece_texture": report.ece["texture"],
        "ece_noise": report.ece["noise"],
        "end_val": report.expected_nd["val"],
        "end_texture": report.expected_nd["texture"],
        "end_noise": report.expected_nd["noise"],
    }


def _directional_checks(
    per_seed: Dict[str, Dict[int, Dict[str, float]]],
    mean: Dict[str, Dict[str, float]],
    seeds: List[int],
) -> Dict[str, dict]:
    n = len(seeds)
    majority = n // 2 + 1
    need_all = n if n <= 3 else majority

    miou_gap = abs(mean["implicit"]["miou_val"] - mean["explicit"]["miou_val"])

    end_ok_seeds = [
        s
        for s in seeds
        if all(
            per_seed["implicit"][s][f"end_{ds}"] < per_seed["explicit"][s][f"end_{ds}"]
            for ds in ("val", "texture", "noise")
        )
    ]
    bg_ok_seeds = [
        s
        for s in seeds
        if all(
            per_seed["implicit"][s][f"bg_iou_{ds}"] >= per_seed["explicit"][s][f"bg_iou_{ds}"]
            for ds in ("texture", "noise")
        )
    ]
    ece_ok_seeds = [
        s
        for s in seeds
        if sum(
            per_seed["implicit"][s][f"ece_{ds}"] <= per_seed["explicit"][s][f"ece_{ds}"]
            for ds in ("val", "texture", "noise")
        )
        >= 2
    ]

    return {
        "miou_gap": {
            "pass": bool(miou_gap <= 2.0),
            "gap": miou_gap,
            "threshold": 2.0,
        },
        "end_lower_implicit": {
            "pass": bool(len(end_ok_seeds) >= need_all),
            "seeds_ok": end_ok_seeds,
            "required": need_all,
        },
        "bg_iou_higher_implicit": {
            "pass": bool(len(bg_ok_seeds) >= min(majority, n)),
            "seeds_ok": bg_ok_seeds,
            "required": min(majority, n),
        },
        "ece_lower_implicit": {
            "pass": bool(len(ece_ok_seeds) >= min(majority, n)),
            "seeds_ok": ece_ok_seeds,
            "required": min(majority, n),
        },
    }


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    ece_bins, id_mode = _resolve_metric_options(args, cfg)
    seeds = cfg.seeds
    datasets = _load_eval_datasets(cfg)

    per_seed: Dict[str, Dict[int, Dict[str, float]]] = {}
    for head in (HeadKind.EXPLICIT, HeadKind.IMPLICIT):
        per_seed[head.value] = {}
        for seed in seeds:
            report, _ = _evaluate_checkpoint(cfg, head, seed, ece_bins, id_mode, datasets)
            per_seed[head.value][seed] = _columns_from_report(report)

    mean = {
        head: {
            col: sum(per_seed[head][s][col] for s in seeds) / len(seeds)
            for col in COMPARE_COLUMNS
        }
        for head in ("explicit", "implicit")
    }
    checks = _directional_checks(per_seed, mean, seeds)

    reports_dir = cfg.out_root / "reports"
    reports_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        **_provenance(cfg),
        "config": cfg.resolved,
        "seeds": seeds,
        "columns": list(COMPARE_COLUMNS),
        "per_seed": {
            head: {str(s): per_seed[head][s] for s in seeds}
            for head in ("explicit", "implicit")
        },
        "mean": mean,
        "checks": checks,
        "conventions": {"noise_model": _NOISE_MODEL_NOTE, "prng": _PRNG_NOTE},
    }
    json_path = reports_dir / "compare.json"
    with open(json_path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")

    csv_path = reports_dir / "compare.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write(f"# {_csv_preamble(cfg)}\n")
        fh.write(",".join(["head", "seed", *COMPARE_COLUMNS]) + "\n")
        for head in ("explicit", "implicit"):
            for s in seeds:
                row = per_seed[head][s]
                fh.write(
                    ",".join([head, str(s), *[repr(row[c]) for c in COMPARE_COLUMNS]]) + "\n"
                )
        for head in ("explicit", "implicit"):
            fh.write(
                ",".join([head, "mean", *[repr(mean[head][c]) for c in COMPARE_COLUMNS]]) + "\n"
            )

    print(f"comparison over seeds {seeds} (mean of per-seed values):")
    print(f"{'column':<18}{'explicit':>12}{'implicit':>12}")
    for col in COMPARE_COLUMNS:
        print(f"{col:<18}{mean['explicit'][col]:>12.4f}{mean['implicit'][col]:>12.4f}")
    for name, result in checks.items():
        status = "PASS" if result["pass"] else "FAIL"
        detail = {k: v for k, v in result.items() if k != "pass"}
        print(f"check {name}: {status} {json.dumps(detail, sort_keys=True)}")
    print(f"report: {json_path}")
    return EXIT_OK


# --- entry point ---


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TrainingDivergenceError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (ConfigError, DatasetError, GenerationError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
