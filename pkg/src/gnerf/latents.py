"""Latent sampling, the fixed mapping to the intermediate space, and truncation.

Latent codes are plain float64 numpy vectors. The mapping that plays the
role of a generator's mapping network is a small fixed-seed feedforward
map: deterministic, smooth, and with a computable Lipschitz bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LatentCenter:
    """Monte-Carlo estimate of the intermediate-space center of mass."""

    values: np.ndarray
    n_samples: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise ValueError("center values must be finite")
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class TruncationConfig:
    """Truncation ratio: 0 collapses to the center, 1 is the identity."""

    psi: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.psi <= 1.0:
            raise ValueError(f"psi must lie in [0, 1], got {self.psi}")


def sample_z(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a latent code with i.i.d. standard-normal entries."""
    if dim < 1:
        raise ValueError(f"latent dimension must be >= 1, got {dim}")
    return rng.standard_normal(dim)


class LatentMapping:
    """Fixed-seed two-layer feedforward map from z-space to w-space.

    Weights are drawn once from `seed` and never change. Output coordinates
    have roughly unit variance and a nonzero mean, so the center of mass is
    a meaningful target for truncation.
    """

    def __init__(self, dim_in: int = 64, dim_out: int = 64, seed: int = 1234):
        if dim_in < 1 or dim_out < 1:
            raise ValueError("mapping dimensions must be >= 1")
        self.dim_in = dim_in
        self.dim_out = dim_out
        self.seed = seed
        rng = np.random.default_rng(seed)
        hidden = max(dim_in, dim_out)
        self.w1 = rng.standard_normal((hidden, dim_in)) / np.sqrt(dim_in)
        self.b1 = 0.1 * rng.standard_normal(hidden)
        # output std ~0.63 per coordinate (tanh variance), sub-unit by design
        self.w2 = rng.standard_normal((dim_out, hidden)) / np.sqrt(hidden)
        self.b2 = 0.5 * rng.standard_normal(dim_out)
        self.zero_image = self(np.zeros(dim_in))

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.dim_in:
            raise ValueError(
                f"latent dimension mismatch: expected {self.dim_in}, got {z.shape[-1]}"
            )
        h = np.tanh(z @ self.w1.T + self.b1)
        return h @ self.w2.T + self.b2

    @property
    def lipschitz_bound(self) -> float:
        """Product of layer spectral norms (tanh is 1-Lipschitz)."""
        s1 = np.linalg.norm(self.w1, ord=2)
        s2 = np.linalg.norm(self.w2, ord=2)
        return float(s1 * s2)


class IdentityMapping:
    """Pass-through map, useful for statistical checks."""

    def __init__(self, dim: int = 64):
        self.dim_in = dim
        self.dim_out = dim
        self.zero_image = np.zeros(dim)

    def __call__(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if z.shape[-1] != self.dim_in:
            raise ValueError(
                f"latent dimension mismatch: expected {self.dim_in}, got {z.shape[-1]}"
            )
        return z.copy()

    @property
    def lipschitz_bound(self) -> float:
        return 1.0


def map_latent(z: np.ndarray, mapping) -> np.ndarray:
    """Apply the fixed mapping to one latent code."""
    return mapping(z)


def estimate_center(mapping, n: int, rng: np.random.Generator) -> LatentCenter:
    """Monte-Carlo mean of the mapped latent over n fresh samples."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    total = np.zeros(mapping.dim_out)
    batch = 16384
    remaining = n
    while remaining > 0:
        k = min(batch, remaining)
        z = rng.standard_normal((k, mapping.dim_in))
        total += mapping(z).sum(axis=0)
        remaining -= k
    return LatentCenter(values=total / n, n_samples=n)


def truncate(
    w: np.ndarray, center: LatentCenter, cfg: TruncationConfig
) -> np.ndarray:
    """Pull w toward the center of mass: center + psi * (w - center).

    The endpoints return their operands exactly (no float round-trip), so
    psi=0 yields the center bitwise and psi=1 yields w bitwise.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape[-1] != center.values.shape[0]:
        raise ValueError(
            f"dimension mismatch: w has {w.shape[-1]}, center has "
            f"{center.values.shape[0]}"
        )
    if cfg.psi == 0.0:
        return np.broadcast_to(center.values, w.shape).copy()
    if cfg.psi == 1.0:
        return w.copy()
    return center.values + cfg.psi * (w - center.values)
