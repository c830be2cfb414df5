"""Stratified ray sampling and discrete alpha compositing.

Per-sample opacity is alpha_i = 1 - exp(-density_i * delta_i); accumulated
transmittance is the exclusive product of (1 - alpha_j). Color and depth are
the transmittance-weighted sums of sample colors and ray distances. All
tensor math runs in torch so the whole path is differentiable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .cameras import CameraPose, Intrinsics, generate_rays


@dataclass(frozen=True)
class RenderConfig:
    """Ray-marching bounds and output options."""

    t_near: float = 1.7
    t_far: float = 3.7
    n_samples: int = 96
    jitter: bool = False
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    ray_chunk: int = 65536

    def __post_init__(self):
        if self.t_far <= self.t_near:
            raise ValueError(
                f"t_far ({self.t_far}) must exceed t_near ({self.t_near})"
            )
        if self.t_near < 0:
            raise ValueError("t_near must be non-negative")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")


@dataclass
class RaySamples:
    """Ascending sample distances along one or more rays.

    t_values and deltas share a trailing sample dimension; leading
    dimensions (if any) index rays.
    """

    t_values: torch.Tensor
    deltas: torch.Tensor
    jittered: bool

    def __post_init__(self):
        if self.t_values.shape != self.deltas.shape:
            raise ValueError("t_values and deltas must have identical shapes")
        diffs = self.t_values[..., 1:] - self.t_values[..., :-1]
        if diffs.numel() and diffs.min() <= 0:
            raise ValueError("t_values must be strictly ascending")
        if self.deltas.min() <= 0:
            raise ValueError("all deltas must be positive")


def stratified_samples(
    t_near: float,
    t_far: float,
    n: int,
    rng: np.random.Generator | None = None,
    jitter: bool = False,
    dtype: torch.dtype = torch.float32,
) -> RaySamples:
    """One sample per bin over [t_near, t_far]: midpoints, or uniform if jittered.

    The final delta is t_far - t_last, capped at the mean bin width so the
    last interval stays bounded.
    """
    if t_far <= t_near:
        raise ValueError(f"t_far ({t_far}) must exceed t_near ({t_near})")
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    width = (t_far - t_near) / n
    edges = t_near + width * np.arange(n)
    if jitter:
        if rng is None:
            raise ValueError("jitter=True requires an rng")
        offsets = rng.uniform(0.0, 1.0, size=n)
    else:
        offsets = np.full(n, 0.5)
    t = edges + width * offsets

    deltas = np.empty(n)
    deltas[:-1] = np.diff(t)
    deltas[-1] = min(t_far - t[-1], width)
    if deltas[-1] <= 0:  # jittered sample landed exactly on t_far
        deltas[-1] = np.finfo(np.float64).tiny
    return RaySamples(
        t_values=torch.as_tensor(t, dtype=dtype),
        deltas=torch.as_tensor(deltas, dtype=dtype),
        jittered=jitter,
    )


def _batched_samples(
    cfg: RenderConfig,
    n_rays: int,
    rng: np.random.Generator | None,
    dtype: torch.dtype,
) -> RaySamples:
    """Sample distances for a batch of rays; shared midpoints when not jittered."""
    if not cfg.jitter:
        return stratified_samples(
            cfg.t_near, cfg.t_far, cfg.n_samples, jitter=False, dtype=dtype
        )
    if rng is None:
        raise ValueError("jitter=True requires an rng")
    width = (cfg.t_far - cfg.t_near) / cfg.n_samples
    edges = cfg.t_near + width * np.arange(cfg.n_samples)
    t = edges + width * rng.uniform(0.0, 1.0, size=(n_rays, cfg.n_samples))
    deltas = np.empty_like(t)
    deltas[:, :-1] = np.diff(t, axis=1)
    deltas[:, -1] = np.minimum(cfg.t_far - t[:, -1], width)
    deltas[:, -1] = np.maximum(deltas[:, -1], np.finfo(np.float64).tiny)
    return RaySamples(
        t_values=torch.as_tensor(t, dtype=dtype),
        deltas=torch.as_tensor(deltas, dtype=dtype),
        jittered=True,
    )


@dataclass
class RenderOutput:
    """Composited color, depth, and opacity for one or more rays."""

    color: torch.Tensor  # (..., 3)
    depth: torch.Tensor  # (...)
    weight_sum: torch.Tensor  # (...)
    weights: torch.Tensor  # (..., n_samples)


def composite(
    colors: torch.Tensor, densities: torch.Tensor, samples: RaySamples
) -> RenderOutput:
    """Front-to-back alpha compositing of per-sample colors and densities.

    colors: (..., N, 3); densities: (..., N); samples broadcast against the
    ray dimensions. Depth is the weighted sum of ray distances and is not
    background-filled; empty rays report values near zero.
    """
    if colors.shape[:-1] != densities.shape:
        raise ValueError(
            f"colors {tuple(colors.shape)} and densities "
            f"{tuple(densities.shape)} disagree"
        )
    if densities.shape[-1] != samples.t_values.shape[-1]:
        raise ValueError("sample count mismatch between densities and samples")
    if densities.numel() and densities.min() < 0:
        raise ValueError("densities must be non-negative")

    alpha = 1.0 - torch.exp(-densities * samples.deltas)
    ones = torch.ones_like(alpha[..., :1])
    transmittance = torch.cumprod(
        torch.cat([ones, 1.0 - alpha], dim=-1), dim=-1
    )[..., :-1]
    weights = transmittance * alpha

    color = (weights.unsqueeze(-1) * colors).sum(dim=-2)
    depth = (weights * samples.t_values).sum(dim=-1)
    weight_sum = weights.sum(dim=-1)
    return RenderOutput(color=color, depth=depth, weight_sum=weight_sum, weights=weights)


def render(
    field,
    pose: CameraPose,
    intr: Intrinsics,
    cfg: RenderConfig,
    rng: np.random.Generator | None = None,
    dtype: torch.dtype = torch.float32,
) -> RenderOutput:
    """Render a full image: composite every pixel ray through `field`.

    `field` maps (positions (N, 3), directions (N, 3)) to (colors (N, 3),
    densities (N,)). The background color is blended with the residual
    transmittance; depth is left raw so callers can mask by weight_sum.
    Deterministic (bitwise) for jitter=False.
    """
    origins_np, dirs_np = generate_rays(pose, intr)
    h, w = origins_np.shape[:2]
    origins = torch.as_tensor(origins_np.reshape(-1, 3), dtype=dtype)
    dirs = torch.as_tensor(dirs_np.reshape(-1, 3), dtype=dtype)
    n_rays = origins.shape[0]

    colors_out, depths_out, wsum_out, weights_out = [], [], [], []
    for start in range(0, n_rays, cfg.ray_chunk):
        o = origins[start : start + cfg.ray_chunk]
        d = dirs[start : start + cfg.ray_chunk]
        samples = _batched_samples(cfg, o.shape[0], rng, dtype)
        t = samples.t_values
        if t.dim() == 1:
            t = t.expand(o.shape[0], -1)
        points = o.unsqueeze(1) + t.unsqueeze(-1) * d.unsqueeze(1)
        view_dirs = d.unsqueeze(1).expand_as(points)
        c, sigma = field(points.reshape(-1, 3), view_dirs.reshape(-1, 3))
        c = c.reshape(o.shape[0], cfg.n_samples, 3)
        sigma = sigma.reshape(o.shape[0], cfg.n_samples)
        out = composite(c, sigma, samples)
        bg = torch.as_tensor(cfg.background, dtype=dtype)
        blended = out.color + (1.0 - out.weight_sum).unsqueeze(-1) * bg
        colors_out.append(blended)
        depths_out.append(out.depth)
        wsum_out.append(out.weight_sum)
        weights_out.append(out.weights)

    return RenderOutput(
        color=torch.cat(colors_out).reshape(h, w, 3),
        depth=torch.cat(depths_out).reshape(h, w),
        weight_sum=torch.cat(wsum_out).reshape(h, w),
        weights=torch.cat(weights_out).reshape(h, w, cfg.n_samples),
    )
