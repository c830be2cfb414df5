"""Metrics, the truncation sweep, and the four-row ablation protocol.

Depth accuracy is MSE against the oracle's exact ground truth after median
alignment, reported over all target poses and over the side-pose subset
(|yaw| at or above the side threshold). Image quality uses SSIM/PSNR
against true target views; identity agreement uses cosine similarity of
frozen random-feature embeddings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .cameras import Intrinsics, PoseDistribution, pose_from_angles
from .losses import RandomFeatureStack, default_feature_stack
from .models import GNeRF
from .oracle import OracleGAN, oracle_field
from .rendering import RenderConfig, render

SIDE_YAW_THRESHOLD = 0.45


@dataclass
class MetricReport:
    metrics: dict[str, float]
    sample_count: int
    pose_split: str  # {all | side}
    config_hash: str = ""

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        bad = [k for k, v in self.metrics.items() if not math.isfinite(v)]
        if bad:
            raise ValueError(f"non-finite metrics: {bad}")


def _to_numpy(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        return x.detach().cpu().numpy()
    return np.asarray(x)


def depth_mse(pred, gt, mask, align: bool = True) -> float:
    """Masked MSE between depth maps, median-aligned by default.

    Alignment shifts each map to zero median over the mask, making the
    metric invariant to constant offsets and symmetric in its arguments.
    """
    pred = _to_numpy(pred).astype(np.float64)
    gt = _to_numpy(gt).astype(np.float64)
    mask = _to_numpy(mask).astype(bool)
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ValueError("pred, gt, and mask must share a shape")
    if not mask.any():
        raise ValueError("depth_mse requires a non-empty mask")
    p = pred[mask]
    g = gt[mask]
    if align:
        p = p - np.median(p)
        g = g - np.median(g)
    return float(np.mean((p - g) ** 2))


def metric_psnr(a, b, cap_db: float = 99.0) -> float:
    """PSNR in dB for unit-range images; infinite values are capped."""
    a = _to_numpy(a).astype(np.float64)
    b = _to_numpy(b).astype(np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return cap_db
    return min(cap_db, -10.0 * math.log10(mse))


def metric_ssim(a, b, window: int = 11) -> float:
    from .losses import ssim

    return float(ssim(torch.as_tensor(a), torch.as_tensor(b), window=window))


def probe_embedding(
    image, extractor: RandomFeatureStack | None = None
) -> torch.Tensor:
    """Pooled deepest-scale random features, used as an identity probe."""
    if extractor is None:
        extractor = default_feature_stack()
    feats = extractor.features(torch.as_tensor(image, dtype=torch.float32))
    return feats[-1].mean(dim=(2, 3)).squeeze(0)


def identity_proxy(
    input_image, novel_image, extractor: RandomFeatureStack | None = None
) -> float:
    """Cosine similarity between probe embeddings of two views."""
    e1 = probe_embedding(input_image, extractor)
    e2 = probe_embedding(novel_image, extractor)
    return float(
        torch.dot(e1, e2) / (e1.norm() * e2.norm()).clamp(min=1e-12)
    )


def diversity_measure(images, extractor: RandomFeatureStack | None = None) -> float:
    """Mean pairwise perceptual distance over a set of images."""
    if len(images) < 2:
        raise ValueError("diversity needs at least 2 images")
    if extractor is None:
        extractor = default_feature_stack()
    per_scale: list[torch.Tensor] = []
    with torch.no_grad():
        stacks = [
            extractor.features(torch.as_tensor(img, dtype=torch.float32))
            for img in images
        ]
    n_scales = len(stacks[0])
    total = 0.0
    n = len(images)
    for s in range(n_scales):
        flat = torch.stack([stack[s].reshape(-1) for stack in stacks])
        sq = torch.cdist(flat, flat) ** 2 / flat.shape[1]
        total += sq.sum().item() / (n * (n - 1))
    return total


def truncation_sweep(
    oracle: OracleGAN,
    psi_values,
    n_per_psi: int,
    seed: int,
    intr: Intrinsics,
    render_cfg: RenderConfig,
    pose_dist: PoseDistribution | None = None,
) -> list[dict]:
    """Diversity and geometry degradation as functions of the truncation ratio.

    The same underlying latent draws are reused across psi values, so
    geometry noise scales exactly with the truncation ratio. Geometry error
    compares each scene's frontal depth against its noise-free counterpart.
    """
    if pose_dist is None:
        pose_dist = PoseDistribution()
    frontal = pose_from_angles(0.0, 0.0, pose_dist)
    rows = []
    for psi in psi_values:
        if not 0.0 <= psi <= 1.0:
            raise ValueError(f"psi must lie in [0, 1], got {psi}")
        images = []
        errors = []
        for i in range(n_per_psi):
            rng = np.random.default_rng((seed, i))
            w_prime = oracle.sample_w_prime(psi, rng)
            noisy = oracle.decode(w_prime)
            clean = oracle.decode(w_prime, zero_noise=True)
            with torch.no_grad():
                out_noisy = render(oracle_field(noisy), frontal, intr, render_cfg)
                out_clean = render(oracle_field(clean), frontal, intr, render_cfg)
            images.append(out_noisy.color)
            mask = (out_clean.weight_sum >= 0.5).numpy()
            errors.append(depth_mse(out_noisy.depth, out_clean.depth, mask))
        rows.append(
            {
                "psi": float(psi),
                "diversity": diversity_measure(images),
                "geometry_error": float(np.mean(errors)),
            }
        )
    return rows


@dataclass
class EvalTarget:
    pose: object
    yaw: float
    image: torch.Tensor
    depth: torch.Tensor
    mask: np.ndarray
    split: str  # {frontal | side}


@dataclass
class EvalScene:
    reference: torch.Tensor
    targets: list[EvalTarget]


def pose_split(yaw: float, threshold: float = SIDE_YAW_THRESHOLD) -> str:
    """Partition of target poses: each yaw lands in exactly one split.

    A small tolerance keeps grid poses that sit numerically on the
    threshold classified as side on both signs.
    """
    return "side" if abs(yaw) >= threshold - 1e-9 else "frontal"


def build_eval_targets(
    manifest: dict,
    intr: Intrinsics,
    render_cfg: RenderConfig,
    n_scenes: int | None = None,
    n_yaw: int = 9,
    side_threshold: float = SIDE_YAW_THRESHOLD,
) -> list[EvalScene]:
    """Ground-truth reference and target views for a held-out test pool.

    Scenes are rebuilt from the manifest's latent records; the reference is
    the canonical frontal view and targets sit on a fixed yaw grid spanning
    the pose distribution.
    """
    oracle = OracleGAN.from_config(manifest["oracle"])
    pd = manifest["pose_dist"]
    pose_dist = PoseDistribution(
        yaw_range=tuple(pd["yaw_range"]),
        pitch_range=tuple(pd["pitch_range"]),
        radius=pd["radius"],
        look_at=tuple(pd["look_at"]),
    )
    zero_noise = manifest.get("zero_noise", False)
    yaws = np.linspace(pose_dist.yaw_range[0], pose_dist.yaw_range[1], n_yaw)
    frontal = pose_from_angles(0.0, 0.0, pose_dist)

    records = manifest["records"]
    if n_scenes is not None:
        records = records[:n_scenes]
    scenes = []
    with torch.no_grad():
        for record in records:
            w_prime = np.asarray(record["w_prime"])
            field = oracle_field(oracle.decode(w_prime, zero_noise=zero_noise))
            ref = render(field, frontal, intr, render_cfg).color
            targets = []
            for yaw in yaws:
                pose = pose_from_angles(float(yaw), 0.0, pose_dist)
                out = render(field, pose, intr, render_cfg)
                targets.append(
                    EvalTarget(
                        pose=pose,
                        yaw=float(yaw),
                        image=out.color,
                        depth=out.depth,
                        mask=(out.weight_sum >= 0.5).numpy(),
                        split=pose_split(float(yaw), side_threshold),
                    )
                )
            scenes.append(EvalScene(reference=ref, targets=targets))
    return scenes


def evaluate_model(
    model: GNeRF,
    eval_scenes: list[EvalScene],
    render_cfg: RenderConfig,
    config_hash: str = "",
) -> MetricReport:
    """Run the model over the test pool and aggregate metrics.

    depth_mse covers every target pose; depth_mse_side restricts to the
    side split. SSIM/PSNR compare against true target views; identity is
    the probe-embedding similarity between input and predictions.
    """
    extractor = default_feature_stack()
    depth_all, depth_side = [], []
    ssim_vals, psnr_vals, id_vals = [], [], []
    with torch.no_grad():
        for scene in eval_scenes:
            embedding = model.encode(scene.reference)
            for target in scene.targets:
                out = model.generate(target.pose, embedding, render_cfg)
                err = depth_mse(out.depth, target.depth, target.mask)
                depth_all.append(err)
                if target.split == "side":
                    depth_side.append(err)
                ssim_vals.append(metric_ssim(out.image, target.image))
                psnr_vals.append(metric_psnr(out.image.numpy(), target.image.numpy()))
                id_vals.append(
                    identity_proxy(scene.reference, out.image, extractor)
                )
    metrics = {
        "depth_mse": float(np.mean(depth_all)),
        "ssim": float(np.mean(ssim_vals)),
        "psnr": float(np.mean(psnr_vals)),
        "identity": float(np.mean(id_vals)),
    }
    if depth_side:
        metrics["depth_mse_side"] = float(np.mean(depth_side))
    return MetricReport(
        metrics=metrics,
        sample_count=len(depth_all),
        pose_split="all",
        config_hash=config_hash,
    )


ABLATION_ROWS = [
    {"name": "no_synthetic", "psi": None, "use_discriminator": False},
    {"name": "psi_1.0", "psi": 1.0, "use_discriminator": False},
    {"name": "psi_0.5", "psi": 0.5, "use_discriminator": False},
    {"name": "psi_0.5_dg", "psi": 0.5, "use_discriminator": True},
]


def _dataset_matches(path, n: int, psi: float, seed: int, zero_noise: bool) -> bool:
    from .dataset_io import DatasetIOError, read_manifest

    try:
        manifest = read_manifest(path)
    except (DatasetIOError, OSError):
        return False
    return (
        manifest["count"] == n
        and manifest["psi"] == psi
        and manifest["seed"] == seed
        and manifest.get("zero_noise", False) == zero_noise
    )


def prepare_ablation_datasets(cfg, workdir) -> dict:
    """Synthesize (or reuse) the four dataset pools the ablation shares.

    Both truncation settings reuse the same per-index latent draws, so the
    psi=1.0 pool differs from psi=0.5 only in truncation. Real and test
    pools hold untruncated, noise-free scenes: they stand in for the real
    world, whose geometry carries none of the generator's artifacts.
    """
    from pathlib import Path

    from . import config as config_mod
    from .oracle import synthesize_dataset

    workdir = Path(workdir)
    oracle = config_mod.oracle_from_config(cfg)
    pose_dist = config_mod.pose_distribution(cfg)
    intr = config_mod.intrinsics(cfg)
    data_rcfg = config_mod.render_config(cfg)
    pools = {
        "synth_psi05": (cfg.n_triplets, 0.5, cfg.synth_seed, False),
        "synth_psi10": (cfg.n_triplets, 1.0, cfg.synth_seed, False),
        "real": (cfg.n_real, 1.0, cfg.real_seed, True),
        "test": (cfg.n_test, 1.0, cfg.test_seed, True),
    }
    paths = {}
    for name, (n, psi, seed, zero_noise) in pools.items():
        path = workdir / name
        if not _dataset_matches(path, n, psi, seed, zero_noise):
            synthesize_dataset(
                path, oracle, n, psi, pose_dist, seed, intr, data_rcfg,
                zero_noise=zero_noise, workers=cfg.workers,
            )
        paths[name] = path
    return paths


def ablation_suite(cfg, workdir, seeds=None, rows=None) -> list[dict]:
    """Train and evaluate the four ablation configurations across seeds.

    Rows: no synthetic data, psi=1.0, psi=0.5, and psi=0.5 with the depth
    critic. Per-row metrics are medians across training seeds on the shared
    held-out test pool, reported for all poses and the side-pose split.
    """
    import dataclasses
    from pathlib import Path

    from . import config as config_mod
    from .dataset_io import read_manifest
    from .training import TripletDataset, fit

    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if seeds is None:
        seeds = [int(s) for s in cfg.ablation_seeds.split(",") if s.strip()]
    if rows is None:
        rows = ABLATION_ROWS
    if len(seeds) < 1:
        raise ValueError("ablation needs at least one seed")

    paths = prepare_ablation_datasets(cfg, workdir)
    datasets = {name: TripletDataset(path) for name, path in paths.items()}

    intr = config_mod.intrinsics(cfg)
    eval_rcfg = config_mod.render_config(cfg, n_samples=cfg.eval_n_samples)
    train_rcfg = config_mod.render_config(cfg, n_samples=cfg.train_n_samples)
    eval_scenes = build_eval_targets(
        read_manifest(paths["test"]),
        intr,
        eval_rcfg,
        n_scenes=cfg.eval_scenes or None,
        n_yaw=cfg.eval_yaw_count,
        side_threshold=cfg.side_yaw_threshold,
    )

    results = []
    for row in rows:
        per_seed = []
        for seed in seeds:
            run_cfg = dataclasses.replace(
                cfg,
                seed=seed,
                use_discriminator=row["use_discriminator"],
                gamma_threshold=0.0 if row["psi"] is None else cfg.gamma_threshold,
            )
            if row["psi"] is None:
                synthetic = None
            elif row["psi"] == 1.0:
                synthetic = datasets["synth_psi10"]
            else:
                synthetic = datasets["synth_psi05"]
            run_dir = workdir / "runs" / f"{row['name']}_s{seed}"
            model, _ = fit(
                config_mod.train_config(run_cfg),
                config_mod.loss_config(run_cfg),
                train_rcfg,
                config_mod.model_config(run_cfg),
                synthetic,
                datasets["real"],
                config_mod.pose_distribution(run_cfg),
                run_dir,
                config_hash=config_mod.config_hash(run_cfg),
            )
            report = evaluate_model(
                model, eval_scenes, eval_rcfg,
                config_hash=config_mod.config_hash(run_cfg),
            )
            per_seed.append(report.metrics)
        medians = {
            key: float(np.median([m[key] for m in per_seed]))
            for key in per_seed[0]
        }
        results.append({"name": row["name"], **medians, "per_seed": per_seed})
    return results

