"""Operator entry points: data synthesis, training, evaluation, rendering.

Every run writes a run.json echoing the fully resolved configuration so any
artifact directory is reproducible on its own. Exit codes: 0 success,
1 configuration/usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import config as config_mod
from .cameras import pose_from_angles
from .config import ConfigError, RunConfig
from .dataset_io import (
    load_checkpoint,
    load_image_png,
    read_manifest,
    save_image_png,
    write_tensor,
)
from .evaluation import (
    ablation_suite,
    build_eval_targets,
    evaluate_model,
    truncation_sweep,
)
from .models import GNeRF
from .oracle import synthesize_dataset
from .training import TripletDataset, fit

VERBS = ("synth-data", "train", "eval", "render", "sweep-truncation", "ablate")


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="gnerf", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True, parser_class=_Parser)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--config", default=None, help="flat key=value config file")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="config override (repeatable; duplicates are an error)",
        )
        p.add_argument("--seed", type=int, default=None, help="override the seed key")
        p.add_argument("--device", default=None, help="compute device string")
    return parser


def _apply_thread_cap(cfg: RunConfig) -> int:
    workers = cfg.workers
    env = os.environ.get("GNERF_THREADS")
    if env:
        cap = int(env)
        workers = min(workers, cap)
        torch.set_num_threads(cap)
    return max(workers, 1)


def _write_run_json(out_dir: Path, args, cfg: RunConfig) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "verb": args.verb,
        "config_path": args.config,
        "overrides": list(args.overrides),
        "seed": cfg.seed,
        "device": cfg.device,
        "config_hash": config_mod.config_hash(cfg),
        "resolved": config_mod.to_flat_dict(cfg),
    }
    with open(out_dir / "run.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)


def _load_model(cfg: RunConfig) -> GNeRF:
    if not cfg.checkpoint_path:
        raise ConfigError("checkpoint_path must be set")
    model = GNeRF(config_mod.model_config(cfg), seed=cfg.seed)
    expected = list(model.named_tensors())
    tensors, ckpt_hash = load_checkpoint(cfg.checkpoint_path, expected_names=expected)
    model.load_tensors(tensors)
    if ckpt_hash and ckpt_hash != config_mod.config_hash(cfg):
        print(
            f"warning: checkpoint config hash {ckpt_hash} differs from "
            f"current config {config_mod.config_hash(cfg)}",
            file=sys.stderr,
        )
    return model


def _cmd_synth_data(args, cfg: RunConfig, out_dir: Path) -> None:
    synthesize_dataset(
        out_dir,
        config_mod.oracle_from_config(cfg),
        cfg.n_triplets,
        cfg.psi,
        config_mod.pose_distribution(cfg),
        cfg.seed,
        config_mod.intrinsics(cfg),
        config_mod.render_config(cfg),
        zero_noise=cfg.zero_noise,
        workers=_apply_thread_cap(cfg),
    )
    print(f"wrote {cfg.n_triplets} triplets to {out_dir}")


def _cmd_train(args, cfg: RunConfig, out_dir: Path) -> None:
    _apply_thread_cap(cfg)
    synthetic = TripletDataset(cfg.synthetic_dir) if cfg.synthetic_dir else None
    real = TripletDataset(cfg.real_dir) if cfg.real_dir else None
    fit(
        config_mod.train_config(cfg),
        config_mod.loss_config(cfg),
        config_mod.render_config(cfg, n_samples=cfg.train_n_samples),
        config_mod.model_config(cfg),
        synthetic,
        real,
        config_mod.pose_distribution(cfg),
        out_dir,
        config_hash=config_mod.config_hash(cfg),
    )
    print(f"training complete: {out_dir}")


def _cmd_eval(args, cfg: RunConfig, out_dir: Path) -> None:
    _apply_thread_cap(cfg)
    if not cfg.test_dir:
        raise ConfigError("test_dir must be set")
    model = _load_model(cfg)
    scenes = build_eval_targets(
        read_manifest(cfg.test_dir),
        config_mod.intrinsics(cfg),
        config_mod.render_config(cfg, n_samples=cfg.eval_n_samples),
        n_scenes=cfg.eval_scenes or None,
        n_yaw=cfg.eval_yaw_count,
        side_threshold=cfg.side_yaw_threshold,
    )
    report = evaluate_model(
        model, scenes, config_mod.render_config(cfg, n_samples=cfg.eval_n_samples),
        config_hash=config_mod.config_hash(cfg),
    )
    name = f"report_{report.config_hash}_s{cfg.seed}.json"
    with open(out_dir / name, "w", encoding="utf-8") as fh:
        json.dump(
            {
                "metrics": report.metrics,
                "sample_count": report.sample_count,
                "pose_split": report.pose_split,
                "side_yaw_threshold": cfg.side_yaw_threshold,
                "config_hash": report.config_hash,
            },
            fh,
            indent=1,
        )
    print(json.dumps(report.metrics, indent=1))


def _cmd_render(args, cfg: RunConfig, out_dir: Path) -> None:
    _apply_thread_cap(cfg)
    if not cfg.input_image:
        raise ConfigError("input_image must be set")
    model = _load_model(cfg)
    image = torch.as_tensor(load_image_png(cfg.input_image))
    pose_dist = config_mod.pose_distribution(cfg)
    rcfg = config_mod.render_config(cfg, n_samples=cfg.eval_n_samples)
    yaws = np.linspace(cfg.yaw_min, cfg.yaw_max, cfg.eval_yaw_count)
    images, depths, masks = [], [], []
    with torch.no_grad():
        embedding = model.encode(image)
        for yaw in yaws:
            out = model.generate(
                pose_from_angles(float(yaw), 0.0, pose_dist), embedding, rcfg
            )
            images.append(out.image.numpy())
            depths.append(out.depth.numpy())
            masks.append(out.mask.numpy())
    strip = np.concatenate(images, axis=1)
    save_image_png(out_dir / "orbit_strip.png", strip)
    depth_stack = np.stack(depths).astype(np.float32)
    write_tensor(out_dir / "orbit_depth.gnrf", depth_stack)
    valid = np.stack(masks)
    span = depth_stack[valid]
    lo, hi = (span.min(), span.max()) if span.size else (0.0, 1.0)
    normalized = np.clip((depth_stack - lo) / max(hi - lo, 1e-6), 0.0, 1.0)
    depth_strip = np.concatenate(list(normalized), axis=1)
    save_image_png(out_dir / "depth_strip.png", np.stack([depth_strip] * 3, axis=-1))
    print(f"wrote orbit strips for {len(yaws)} views to {out_dir}")


def _cmd_sweep(args, cfg: RunConfig, out_dir: Path) -> None:
    _apply_thread_cap(cfg)
    psi_values = [float(s) for s in cfg.sweep_psi.split(",") if s.strip()]
    rows = truncation_sweep(
        config_mod.oracle_from_config(cfg),
        psi_values,
        cfg.sweep_scenes,
        cfg.seed,
        config_mod.intrinsics(cfg),
        config_mod.render_config(cfg, n_samples=cfg.eval_n_samples),
        config_mod.pose_distribution(cfg),
    )
    with open(out_dir / "truncation_sweep.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["psi", "diversity", "geometry_error"])
        writer.writeheader()
        writer.writerows(rows)
    for row in rows:
        print(row)


def _cmd_ablate(args, cfg: RunConfig, out_dir: Path) -> None:
    _apply_thread_cap(cfg)
    results = ablation_suite(cfg, out_dir)
    columns = [
        "name", "depth_mse", "depth_mse_side", "ssim", "psnr", "identity",
    ]
    with open(out_dir / "ablation.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in results:
            writer.writerow({k: row[k] for k in columns})
    with open(out_dir / "ablation.json", "w", encoding="utf-8") as fh:
        json.dump(results, fh, indent=1)
    for row in results:
        print({k: row[k] for k in columns})


_COMMANDS = {
    "synth-data": _cmd_synth_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "render": _cmd_render,
    "sweep-truncation": _cmd_sweep,
    "ablate": _cmd_ablate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if args.device is not None:
            overrides.append(f"device={args.device}")
        cfg = config_mod.resolve_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        _write_run_json(out_dir, args, cfg)
        if cfg.device not in ("", "cpu"):
            torch.set_default_device(cfg.device)
        _COMMANDS[args.verb](args, cfg, out_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
