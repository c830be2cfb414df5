"""Alternating generator/discriminator training with mixed-branch batches.

Each step draws a branch selector: synthetic branches reconstruct a second
view of a triplet from its first view, real branches self-reconstruct a
single-view image. The depth critic always takes its real samples from the
synthetic pool's ground-truth depth maps; generated depth maps at the
branch pose (plus extra random poses for real branches) form the fake side.
"""

from __future__ import annotations

import contextlib
import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .cameras import CameraPose, PoseDistribution, sample_pose
from .dataset_io import load_triplet, read_manifest, save_checkpoint
from .losses import (
    LossConfig,
    d_adversarial_loss,
    generator_adversarial_loss,
    l1_loss,
    perceptual_loss,
    r1_grad_sq_norm,
    ssim,
    default_feature_stack,
)
from .models import GNeRF, ModelConfig
from .oracle import Triplet
from .rendering import RenderConfig


class TrainingError(RuntimeError):
    """Raised when a loss goes non-finite; carries the failing step index."""


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 1
    total_steps: int = 2000
    lr_generator: float = 1e-3
    lr_discriminator: float = 8e-6
    beta1_generator: float = 0.9
    beta2_generator: float = 0.999
    beta1_discriminator: float = 0.0
    beta2_discriminator: float = 0.99
    seed: int = 0
    gamma_threshold: float = 0.5
    d_extra_pose_count: int = 2
    use_discriminator: bool = True
    checkpoint_interval: int = 1000

    def __post_init__(self):
        if self.lr_generator <= 0 or self.lr_discriminator <= 0:
            raise ValueError("learning rates must be positive")
        if not 0.0 <= self.gamma_threshold <= 1.0:
            raise ValueError("gamma_threshold must lie in [0, 1]")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class TripletDataset:
    """Triplet directory with lazy, cached record loading."""

    def __init__(self, dataset_dir):
        self.dir = Path(dataset_dir)
        self.manifest = read_manifest(self.dir)
        self._cache: dict[int, Triplet] = {}

    def __len__(self) -> int:
        return self.manifest["count"]

    def get(self, index: int) -> Triplet:
        if index not in self._cache:
            self._cache[index] = load_triplet(
                self.dir, self.manifest["records"][index]
            )
        return self._cache[index]

    def sample(self, rng: np.random.Generator) -> Triplet:
        return self.get(int(rng.integers(len(self))))


@dataclass
class BatchItem:
    reference: torch.Tensor  # (H, W, 3)
    target: torch.Tensor  # (H, W, 3)
    target_pose: CameraPose
    real_depth: torch.Tensor | None  # (H, W) ground-truth depth for the critic
    real_mask: torch.Tensor | None
    real_pose: CameraPose | None


@dataclass
class Batch:
    branch: str  # {synthetic | real}
    items: list[BatchItem]


def select_branch(gamma: float, threshold: float = 0.5) -> str:
    """Branch selection: synthetic iff the selector falls at or below threshold."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"selection factor must lie in [0, 1], got {gamma}")
    return "synthetic" if gamma <= threshold else "real"


def build_batch(
    branch: str,
    synthetic_dataset: TripletDataset | None,
    real_dataset: TripletDataset | None,
    rng: np.random.Generator,
    batch_size: int = 1,
    need_real_depth: bool = True,
) -> Batch:
    """Assemble one batch for the selected branch.

    Synthetic items pair a first view with a second view; real items
    self-reconstruct. Critic real-depth samples always come from the
    synthetic pool, never from real-branch images.
    """
    items = []
    for _ in range(batch_size):
        if branch == "synthetic":
            if synthetic_dataset is None or len(synthetic_dataset) == 0:
                raise ValueError("synthetic branch requires a non-empty dataset")
            triplet = synthetic_dataset.sample(rng)
            reference = torch.as_tensor(triplet.image_f)
            target = torch.as_tensor(triplet.image_s)
            target_pose = triplet.pose_s
        elif branch == "real":
            if real_dataset is None or len(real_dataset) == 0:
                raise ValueError("real branch requires a non-empty dataset")
            triplet = real_dataset.sample(rng)
            reference = torch.as_tensor(triplet.image_f)
            target = reference
            target_pose = triplet.pose_f
        else:
            raise ValueError(f"unknown branch {branch!r}")

        real_depth = real_mask = real_pose = None
        if need_real_depth:
            if synthetic_dataset is None or len(synthetic_dataset) == 0:
                raise ValueError("critic real depths require a synthetic dataset")
            depth_triplet = synthetic_dataset.sample(rng)
            real_depth = torch.as_tensor(depth_triplet.depth)
            real_mask = torch.as_tensor(depth_triplet.mask)
            real_pose = depth_triplet.pose_d
        items.append(
            BatchItem(reference, target, target_pose, real_depth, real_mask, real_pose)
        )
    return Batch(branch=branch, items=items)


@contextlib.contextmanager
def _frozen(*modules: torch.nn.Module):
    flags = []
    for module in modules:
        for p in module.parameters():
            flags.append((p, p.requires_grad))
            p.requires_grad_(False)
    try:
        yield
    finally:
        for p, flag in flags:
            p.requires_grad_(flag)


def generator_step(
    batch: Batch,
    model: GNeRF,
    loss_cfg: LossConfig,
    optimizer: torch.optim.Optimizer,
    render_cfg: RenderConfig,
    step: int = 0,
) -> dict:
    """One update of encoder and field; the discriminator stays untouched."""
    extractor = default_feature_stack(loss_cfg.perceptual_seed)
    l1_total = ssim_total = perc_total = torch.zeros(())
    g_adv_total = torch.zeros(())
    use_gan = loss_cfg.lambda_g > 0

    with _frozen(model.discriminator):
        optimizer.zero_grad(set_to_none=True)
        for item in batch.items:
            embedding = model.encode(item.reference)
            out = model.generate(item.target_pose, embedding, render_cfg)
            l1_total = l1_total + l1_loss(out.image, item.target)
            ssim_total = ssim_total + (
                1.0 - ssim(out.image, item.target, window=loss_cfg.ssim_window)
            )
            perc_total = perc_total + perceptual_loss(out.image, item.target, extractor)
            if use_gan:
                logit = model.discriminate(out.depth, out.mask, item.target_pose)
                g_adv_total = g_adv_total + generator_adversarial_loss(logit, loss_cfg)

        n = len(batch.items)
        recon = (
            loss_cfg.w_l1 * l1_total
            + loss_cfg.w_ssim * ssim_total
            + loss_cfg.w_perceptual * perc_total
        ) / n
        g_adv = g_adv_total / n
        total = recon + loss_cfg.lambda_g * g_adv
        if not torch.isfinite(total):
            raise TrainingError(f"non-finite generator loss at step {step}")
        total.backward()
        optimizer.step()

    return {
        "l1": l1_total.item() / n,
        "ssim_loss": ssim_total.item() / n,
        "perceptual": perc_total.item() / n,
        "g_adv": g_adv.item() if use_gan else 0.0,
        "recon": recon.item(),
        "total": total.item(),
    }


def discriminator_step(
    batch: Batch,
    model: GNeRF,
    loss_cfg: LossConfig,
    optimizer: torch.optim.Optimizer,
    render_cfg: RenderConfig,
    rng: np.random.Generator,
    pose_dist: PoseDistribution,
    d_extra_pose_count: int = 2,
    step: int = 0,
) -> dict:
    """One update of the depth critic; encoder and field stay frozen."""
    fakes: list[tuple[torch.Tensor, torch.Tensor, CameraPose]] = []
    with torch.no_grad():
        for item in batch.items:
            embedding = model.encode(item.reference)
            out = model.generate(item.target_pose, embedding, render_cfg)
            fakes.append((out.depth, out.mask, item.target_pose))
            if batch.branch == "real":
                for _ in range(d_extra_pose_count):
                    extra_pose = sample_pose(pose_dist, rng)
                    extra = model.generate(extra_pose, embedding, render_cfg)
                    fakes.append((extra.depth, extra.mask, extra_pose))

    reals = [
        (item.real_depth, item.real_mask, item.real_pose)
        for item in batch.items
        if item.real_depth is not None
    ]
    if not reals:
        raise ValueError("discriminator step requires real depth samples")

    with _frozen(model.encoder, model.field):
        optimizer.zero_grad(set_to_none=True)
        real_logits = torch.stack(
            [model.discriminate(d, m, p) for d, m, p in reals]
        )
        fake_logits = torch.stack(
            [model.discriminate(d.detach(), m, p) for d, m, p in fakes]
        )

        r1_depth, r1_mask, r1_pose = (
            fakes[0] if loss_cfg.r1_on == "fake" else reals[0]
        )
        r1 = r1_grad_sq_norm(
            lambda d: model.discriminate(d, r1_mask, r1_pose), r1_depth
        )

        d_loss = d_adversarial_loss(
            real_logits.mean(), fake_logits.mean(), r1, loss_cfg
        )
        if not torch.isfinite(d_loss):
            raise TrainingError(f"non-finite discriminator loss at step {step}")
        d_loss.backward()
        optimizer.step()

    return {
        "d_adv": d_loss.item(),
        "r1": r1.item(),
        "real_logit": real_logits.mean().item(),
        "fake_logit": fake_logits.mean().item(),
        "n_real": len(reals),
        "n_fake": len(fakes),
    }


CSV_COLUMNS = ["step", "l1", "ssim_loss", "perceptual", "g_adv", "d_adv", "r1", "total"]


def fit(
    train_cfg: TrainConfig,
    loss_cfg: LossConfig,
    render_cfg: RenderConfig,
    model_cfg: ModelConfig,
    synthetic_dataset: TripletDataset | None,
    real_dataset: TripletDataset | None,
    pose_dist: PoseDistribution,
    out_dir,
    config_hash: str = "",
    model: GNeRF | None = None,
) -> tuple[GNeRF, list[dict]]:
    """Run the alternating 1:1 training loop; write checkpoints and a metric log.

    Deterministic given the seed (jitter off): branch selection, batch
    sampling, and extra critic poses all derive from one seeded generator.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(train_cfg.seed)
    if model is None:
        model = GNeRF(model_cfg, seed=train_cfg.seed)

    opt_g = torch.optim.Adam(
        model.generator_parameters(),
        lr=train_cfg.lr_generator,
        betas=(train_cfg.beta1_generator, train_cfg.beta2_generator),
    )
    opt_d = torch.optim.Adam(
        model.discriminator.parameters(),
        lr=train_cfg.lr_discriminator,
        betas=(train_cfg.beta1_discriminator, train_cfg.beta2_discriminator),
    )

    rows: list[dict] = []
    branch_counts = {"synthetic": 0, "real": 0}
    for step in range(1, train_cfg.total_steps + 1):
        gamma = float(rng.uniform())
        branch = select_branch(gamma, train_cfg.gamma_threshold)
        branch_counts[branch] += 1
        batch = build_batch(
            branch,
            synthetic_dataset,
            real_dataset,
            rng,
            batch_size=train_cfg.batch_size,
            need_real_depth=train_cfg.use_discriminator,
        )
        record = generator_step(batch, model, loss_cfg, opt_g, render_cfg, step=step)
        if train_cfg.use_discriminator:
            d_record = discriminator_step(
                batch,
                model,
                loss_cfg,
                opt_d,
                render_cfg,
                rng,
                pose_dist,
                d_extra_pose_count=train_cfg.d_extra_pose_count,
                step=step,
            )
        else:
            d_record = {"d_adv": 0.0, "r1": 0.0}
        rows.append(
            {
                "step": step,
                "l1": record["l1"],
                "ssim_loss": record["ssim_loss"],
                "perceptual": record["perceptual"],
                "g_adv": record["g_adv"],
                "d_adv": d_record["d_adv"],
                "r1": d_record["r1"],
                "total": record["total"],
            }
        )
        if train_cfg.checkpoint_interval and step % train_cfg.checkpoint_interval == 0:
            save_checkpoint(
                out_dir / f"checkpoint_{step:06d}.gnrfckpt",
                model.named_tensors(),
                config_hash,
            )

    save_checkpoint(
        out_dir / "checkpoint_final.gnrfckpt", model.named_tensors(), config_hash
    )
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: f"{row[k]:.8g}" if k != "step" else row[k] for k in CSV_COLUMNS})
    with open(out_dir / "branches.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["branch", "count"])
        for name, count in sorted(branch_counts.items()):
            writer.writerow([name, count])
    return model, rows
