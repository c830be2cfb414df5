"""Procedural scene generator standing in for a pretrained 3D GAN.

A fixed-seed feedforward decoder maps truncated latents to analytic blob
scenes; a smooth sinusoidal displacement field, with amplitude proportional
to the latent's distance from the center of mass, degrades geometry the
further a latent strays from the center. Scenes render through the shared
volume renderer into multi-view triplets with exact ground-truth depth.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import torch

from .cameras import CameraPose, Intrinsics, PoseDistribution, sample_pose
from .latents import LatentCenter, LatentMapping, TruncationConfig, sample_z, truncate
from .rendering import RenderConfig, render

NOISE_FREQUENCY = 12.0


@dataclass(frozen=True)
class SceneParams:
    """Analytic scene: K anisotropic Gaussian blobs plus a background color."""

    centers: np.ndarray  # (K, 3)
    radii: np.ndarray  # (K, 3), positive
    orientations: np.ndarray  # (K, 3, 3) rotation matrices
    albedos: np.ndarray  # (K, 3) in [0, 1]
    amplitudes: np.ndarray  # (K,), positive
    background: np.ndarray  # (3,) in [0, 1]
    geometry_noise_amplitude: float
    noise_phases: np.ndarray  # (3,)
    noise_directions: np.ndarray  # (3, 3) unit rows

    def __post_init__(self):
        if np.any(self.radii <= 0):
            raise ValueError("blob radii must be positive")
        if np.any(self.amplitudes <= 0):
            raise ValueError("density amplitudes must be positive")
        if self.geometry_noise_amplitude < 0:
            raise ValueError("geometry noise amplitude must be non-negative")


@dataclass
class Triplet:
    """One synthesis unit: two views, a depth map with mask, and their poses."""

    image_f: np.ndarray  # (H, W, 3) float32 in [0, 1]
    image_s: np.ndarray  # (H, W, 3) float32 in [0, 1]
    depth: np.ndarray  # (H, W) float32, rendered from pose_d
    mask: np.ndarray  # (H, W) bool, weight_sum >= 0.5
    pose_f: CameraPose
    pose_s: CameraPose
    pose_d: CameraPose
    w_prime: np.ndarray


def _axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = axis / np.linalg.norm(axis)
    k = np.array(
        [
            [0, -axis[2], axis[1]],
            [axis[2], 0, -axis[0]],
            [-axis[1], axis[0], 0],
        ]
    )
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * (k @ k)


class SceneDecoder:
    """Fixed-seed two-layer map from latents to bounded blob parameters."""

    # canonical blob anchors: one central body, two offset features
    BLOB_BASES = np.array(
        [
            [0.0, 0.0, 0.05],
            [-0.32, 0.22, -0.12],
            [0.32, 0.22, -0.12],
            [0.0, -0.3, -0.05],
            [-0.2, -0.15, 0.2],
        ]
    )

    def __init__(self, latent_dim: int = 64, n_blobs: int = 3, seed: int = 2024):
        if n_blobs < 1 or n_blobs > len(self.BLOB_BASES):
            raise ValueError(f"n_blobs must be in [1, {len(self.BLOB_BASES)}]")
        self.latent_dim = latent_dim
        self.n_blobs = n_blobs
        self.seed = seed
        self.n_out = n_blobs * 14 + 6
        rng = np.random.default_rng(seed)
        hidden = 96
        self.w1 = rng.standard_normal((hidden, latent_dim)) / np.sqrt(latent_dim)
        self.b1 = 0.2 * rng.standard_normal(hidden)
        self.w2 = 1.5 * rng.standard_normal((self.n_out, hidden)) / np.sqrt(hidden)
        self.b2 = 0.2 * rng.standard_normal(self.n_out)
        dirs = rng.standard_normal((3, 3))
        self.noise_directions = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    def features(self, w_prime: np.ndarray) -> np.ndarray:
        """Raw bounded feature vector in (-1, 1)^n_out."""
        w_prime = np.asarray(w_prime, dtype=np.float64)
        if w_prime.shape != (self.latent_dim,):
            raise ValueError(
                f"latent dimension mismatch: expected ({self.latent_dim},), "
                f"got {w_prime.shape}"
            )
        h = np.tanh(self.w1 @ w_prime + self.b1)
        return np.tanh(self.w2 @ h + self.b2)


def decode_scene(
    decoder: SceneDecoder,
    w_prime: np.ndarray,
    center: LatentCenter,
    kappa: float = 0.15,
    zero_noise: bool = False,
) -> SceneParams:
    """Deterministic latent-to-scene map.

    Geometry noise amplitude is kappa times the RMS deviation of the latent
    from the center of mass, so the center decodes to clean geometry and
    amplitude grows linearly with truncation ratio.
    """
    f = decoder.features(w_prime)
    k = decoder.n_blobs
    blob = f[: k * 14].reshape(k, 14)
    unit = lambda v: 0.5 * (v + 1.0)  # noqa: E731  (-1,1) -> (0,1)

    centers = decoder.BLOB_BASES[:k] + 0.28 * blob[:, 0:3]
    radii = 0.15 + 0.2 * unit(blob[:, 3:6])
    orientations = np.stack(
        [
            _axis_angle_matrix(row[6:9] + np.array([0.0, 0.0, 1e-3]), 1.4 * row[9])
            for row in blob
        ]
    )
    albedos = unit(blob[:, 10:13])
    amplitudes = 12.0 + 14.0 * unit(blob[:, 13])
    background = unit(f[k * 14 : k * 14 + 3])
    phases = np.pi * f[k * 14 + 3 : k * 14 + 6]

    deviation = np.asarray(w_prime, dtype=np.float64) - center.values
    amplitude = 0.0 if zero_noise else kappa * float(
        np.linalg.norm(deviation) / np.sqrt(deviation.shape[0])
    )
    return SceneParams(
        centers=centers,
        radii=radii,
        orientations=orientations,
        albedos=albedos,
        amplitudes=amplitudes,
        background=background,
        geometry_noise_amplitude=amplitude,
        noise_phases=phases,
        noise_directions=decoder.noise_directions,
    )


def oracle_field(scene: SceneParams, dtype: torch.dtype = torch.float32):
    """Radiance-field evaluator for an analytic blob scene.

    Density is the sum of anisotropic Gaussian blobs, evaluated at positions
    displaced by a smooth sinusoidal field when the scene carries geometry
    noise. Color is the density-weighted blend of blob albedos, falling back
    to the background color in empty space. View direction is accepted for
    interface compatibility and ignored (Lambertian scenes).
    """
    centers = torch.as_tensor(scene.centers, dtype=dtype)
    inv_radii = torch.as_tensor(1.0 / scene.radii, dtype=dtype)
    rotations = torch.as_tensor(scene.orientations, dtype=dtype)
    albedos = torch.as_tensor(scene.albedos, dtype=dtype)
    amplitudes = torch.as_tensor(scene.amplitudes, dtype=dtype)
    background = torch.as_tensor(scene.background, dtype=dtype)
    phases = torch.as_tensor(scene.noise_phases, dtype=dtype)
    directions = torch.as_tensor(scene.noise_directions, dtype=dtype)
    noise_amp = scene.geometry_noise_amplitude
    eps = 1e-4

    def field(positions: torch.Tensor, view_dirs: torch.Tensor):
        x = positions.to(dtype)
        if noise_amp > 0:
            ripple = torch.sin(NOISE_FREQUENCY * (x @ directions.T) + phases)
            x = x + noise_amp * ripple
        # (N, K, 3) blob-local coordinates
        local = torch.einsum("kji,nkj->nki", rotations, x.unsqueeze(1) - centers)
        q = ((local * inv_radii) ** 2).sum(dim=-1)
        blob_density = amplitudes * torch.exp(-0.5 * q)
        density = blob_density.sum(dim=-1)
        color = (blob_density.unsqueeze(-1) * albedos).sum(dim=1) + eps * background
        color = color / (density + eps).unsqueeze(-1)
        return color.clamp(0.0, 1.0), density

    return field


class OracleGAN:
    """Bundled mapping, center-of-mass estimate, and scene decoder.

    Plays the role of a pretrained multi-view generator: sample a latent,
    truncate it toward the center, decode a scene, render triplets.
    """

    def __init__(
        self,
        latent_dim: int = 64,
        kappa: float = 0.15,
        n_blobs: int = 3,
        mapping_seed: int = 1234,
        decoder_seed: int = 2024,
        center_samples: int = 100_000,
        center_seed: int = 999,
    ):
        self.latent_dim = latent_dim
        self.kappa = kappa
        self.mapping = LatentMapping(latent_dim, latent_dim, seed=mapping_seed)
        self.decoder = SceneDecoder(latent_dim, n_blobs=n_blobs, seed=decoder_seed)
        self.center_samples = center_samples
        self.center_seed = center_seed
        self._center: LatentCenter | None = None

    @property
    def center(self) -> LatentCenter:
        if self._center is None:
            from .latents import estimate_center

            self._center = estimate_center(
                self.mapping,
                self.center_samples,
                np.random.default_rng(self.center_seed),
            )
        return self._center

    def sample_w_prime(self, psi: float, rng: np.random.Generator) -> np.ndarray:
        z = sample_z(self.latent_dim, rng)
        w = self.mapping(z)
        return truncate(w, self.center, TruncationConfig(psi=psi))

    def decode(self, w_prime: np.ndarray, zero_noise: bool = False) -> SceneParams:
        return decode_scene(
            self.decoder, w_prime, self.center, kappa=self.kappa, zero_noise=zero_noise
        )

    def config(self) -> dict:
        """Constructor arguments, recorded in dataset manifests."""
        return {
            "latent_dim": self.latent_dim,
            "kappa": self.kappa,
            "n_blobs": self.decoder.n_blobs,
            "mapping_seed": self.mapping.seed,
            "decoder_seed": self.decoder.seed,
            "center_samples": self.center_samples,
            "center_seed": self.center_seed,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "OracleGAN":
        return cls(**cfg)


def synthesize_triplet(
    oracle: OracleGAN,
    w_prime: np.ndarray,
    pose_f: CameraPose,
    pose_s: CameraPose,
    pose_d: CameraPose,
    intr: Intrinsics,
    render_cfg: RenderConfig,
    rng: np.random.Generator | None = None,
    zero_noise: bool = False,
) -> Triplet:
    """Render the triplet {first view, second view, depth-from-third-pose}."""
    scene = oracle.decode(w_prime, zero_noise=zero_noise)
    field = oracle_field(scene)
    with torch.no_grad():
        out_f = render(field, pose_f, intr, render_cfg, rng=rng)
        out_s = render(field, pose_s, intr, render_cfg, rng=rng)
        out_d = render(field, pose_d, intr, render_cfg, rng=rng)
    return Triplet(
        image_f=out_f.color.numpy().astype(np.float32),
        image_s=out_s.color.numpy().astype(np.float32),
        depth=out_d.depth.numpy().astype(np.float32),
        mask=(out_d.weight_sum.numpy() >= 0.5),
        pose_f=pose_f,
        pose_s=pose_s,
        pose_d=pose_d,
        w_prime=np.asarray(w_prime, dtype=np.float64),
    )


def _make_triplet(
    oracle: OracleGAN,
    index: int,
    seed: int,
    psi: float,
    pose_dist: PoseDistribution,
    intr: Intrinsics,
    render_cfg: RenderConfig,
    zero_noise: bool,
) -> Triplet:
    rng = np.random.default_rng((seed, index))
    w_prime = oracle.sample_w_prime(psi, rng)
    pose_f = sample_pose(pose_dist, rng)
    pose_s = sample_pose(pose_dist, rng)
    pose_d = sample_pose(pose_dist, rng)
    jitter_rng = np.random.default_rng((seed, index, 1)) if render_cfg.jitter else None
    return synthesize_triplet(
        oracle, w_prime, pose_f, pose_s, pose_d, intr, render_cfg,
        rng=jitter_rng, zero_noise=zero_noise,
    )


def synthesize_dataset(
    out_dir,
    oracle: OracleGAN,
    n: int,
    psi: float,
    pose_dist: PoseDistribution,
    seed: int,
    intr: Intrinsics,
    render_cfg: RenderConfig,
    zero_noise: bool = False,
    workers: int = 1,
) -> dict:
    """Write n triplets plus a manifest; byte-identical for any worker count.

    Each triplet derives its rng stream from (seed, index), so parallel and
    serial synthesis produce the same files.
    """
    from . import dataset_io

    if n < 1:
        raise ValueError(f"dataset size must be >= 1, got {n}")
    out_dir = dataset_io.prepare_dataset_dir(out_dir)

    def job(index: int) -> dict:
        try:
            triplet = _make_triplet(
                oracle, index, seed, psi, pose_dist, intr, render_cfg, zero_noise
            )
            return dataset_io.save_triplet(out_dir, index, triplet)
        except Exception as exc:
            raise RuntimeError(f"triplet {index} failed: {exc}") from exc

    if workers <= 1:
        records = [job(i) for i in range(n)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(job, range(n)))

    manifest = {
        "version": dataset_io.MANIFEST_VERSION,
        "count": n,
        "psi": psi,
        "seed": seed,
        "zero_noise": zero_noise,
        "pose_dist": {
            "yaw_range": list(pose_dist.yaw_range),
            "pitch_range": list(pose_dist.pitch_range),
            "radius": pose_dist.radius,
            "look_at": list(pose_dist.look_at),
        },
        "intrinsics": {
            "focal_px": intr.focal_px,
            "width": intr.width,
            "height": intr.height,
            "principal_point": list(intr.principal_point),
        },
        "render": {
            "t_near": render_cfg.t_near,
            "t_far": render_cfg.t_far,
            "n_samples": render_cfg.n_samples,
            "jitter": render_cfg.jitter,
            "background": list(render_cfg.background),
        },
        "oracle": oracle.config(),
        "w_bar": oracle.center.values.tolist(),
        "records": records,
    }
    dataset_io.write_manifest(out_dir, manifest)
    return manifest
