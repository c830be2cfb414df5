"""Learned components: scene encoder, conditioned radiance field, depth critic.

The generator is a coordinate MLP with positional encoding, feature-wise
modulated by the scene embedding (concatenation available via config). The
discriminator sees a per-map normalized depth channel plus the validity
mask, with the flattened camera matrix appended to its penultimate features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .cameras import CameraPose, Intrinsics
from .rendering import RenderConfig, RenderOutput, render


@dataclass(frozen=True)
class ModelConfig:
    resolution: int = 64
    focal_px: float = 60.0
    embedding_dim: int = 128
    hidden_dim: int = 48
    n_hidden_layers: int = 4
    pe_frequencies: int = 4
    conditioning: str = "modulation"  # {modulation | concat}
    encoder_channels: tuple[int, ...] = (16, 32, 64)
    disc_channels: tuple[int, ...] = (16, 32, 64)

    def __post_init__(self):
        if self.conditioning not in ("modulation", "concat"):
            raise ValueError(f"unknown conditioning {self.conditioning!r}")

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(
            focal_px=self.focal_px, width=self.resolution, height=self.resolution
        )


@dataclass
class GeneratorOutput:
    """Rendered novel view: image, raw depth, and per-pixel opacity."""

    image: torch.Tensor  # (H, W, 3)
    depth: torch.Tensor  # (H, W)
    weight_sum: torch.Tensor  # (H, W)

    @property
    def mask(self) -> torch.Tensor:
        return (self.weight_sum >= 0.5).detach()


class SceneEncoder(torch.nn.Module):
    """Small convolutional encoder with global pooling to a flat embedding."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.resolution = cfg.resolution
        layers = []
        c_in = 3
        for c_out in cfg.encoder_channels:
            layers.append(torch.nn.Conv2d(c_in, c_out, 3, stride=2, padding=1))
            c_in = c_out
        self.convs = torch.nn.ModuleList(layers)
        self.head = torch.nn.Linear(c_in, cfg.embedding_dim)

    def forward(self, image: torch.Tensor) -> torch.Tensor:
        if image.shape[:2] != (self.resolution, self.resolution) or image.shape[-1] != 3:
            raise ValueError(
                f"expected ({self.resolution}, {self.resolution}, 3) image, "
                f"got {tuple(image.shape)}"
            )
        x = image.permute(2, 0, 1).unsqueeze(0)
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        pooled = x.mean(dim=(2, 3)).squeeze(0)
        return self.head(pooled)


def positional_encoding(x: torch.Tensor, n_freq: int) -> torch.Tensor:
    """[x, sin(pi 2^k x), cos(pi 2^k x)] for k = 0..n_freq-1."""
    parts = [x]
    for k in range(n_freq):
        scaled = (math.pi * 2.0**k) * x
        parts.append(torch.sin(scaled))
        parts.append(torch.cos(scaled))
    return torch.cat(parts, dim=-1)


class ConditionedRadianceField(torch.nn.Module):
    """Coordinate MLP producing (color, density), conditioned on an embedding."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        pe_dim = 3 * (1 + 2 * cfg.pe_frequencies)
        width = cfg.hidden_dim
        in_dim = pe_dim
        if cfg.conditioning == "concat":
            in_dim += cfg.embedding_dim
        self.layers = torch.nn.ModuleList()
        for i in range(cfg.n_hidden_layers):
            self.layers.append(torch.nn.Linear(in_dim if i == 0 else width, width))
        if cfg.conditioning == "modulation":
            self.films = torch.nn.ModuleList(
                torch.nn.Linear(cfg.embedding_dim, 2 * width)
                for _ in range(cfg.n_hidden_layers)
            )
        self.density_head = torch.nn.Linear(width, 1)
        self.color_hidden = torch.nn.Linear(width + 3, width // 2)
        self.color_head = torch.nn.Linear(width // 2, 3)

    def forward(
        self,
        positions: torch.Tensor,
        directions: torch.Tensor,
        embedding: torch.Tensor,
    ) -> tuple[torch.Tensor, torch.Tensor]:
        h = positional_encoding(positions, self.cfg.pe_frequencies)
        if self.cfg.conditioning == "concat":
            h = torch.cat([h, embedding.expand(h.shape[0], -1)], dim=-1)
            for layer in self.layers:
                h = F.leaky_relu(layer(h), 0.2)
        else:
            for layer, film in zip(self.layers, self.films):
                mod = film(embedding)
                scale, shift = mod.chunk(2)
                h = F.leaky_relu(layer(h) * (1.0 + scale) + shift, 0.2)
        density = F.softplus(self.density_head(h).squeeze(-1))
        c = F.leaky_relu(self.color_hidden(torch.cat([h, directions], dim=-1)), 0.2)
        color = torch.sigmoid(self.color_head(c))
        return color, density

    def conditioned_field(self, embedding: torch.Tensor):
        """Bind the embedding, yielding a renderer-compatible field."""

        def field(positions: torch.Tensor, directions: torch.Tensor):
            return self(positions, directions, embedding)

        return field


class DepthDiscriminator(torch.nn.Module):
    """Pose-conditioned critic on normalized depth maps.

    Depth is normalized to zero mean / unit variance over the valid mask
    (identically for real and generated maps); the mask rides along as a
    second channel and the flattened 4x4 camera matrix joins the
    penultimate features.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.resolution = cfg.resolution
        layers = []
        c_in = 2
        for c_out in cfg.disc_channels:
            layers.append(torch.nn.Conv2d(c_in, c_out, 3, stride=2, padding=1))
            c_in = c_out
        self.convs = torch.nn.ModuleList(layers)
        spatial = cfg.resolution // (2 ** len(cfg.disc_channels))
        self.feature = torch.nn.Linear(c_in * spatial * spatial, 128)
        self.pose_fc = torch.nn.Linear(128 + 16, 64)
        self.logit = torch.nn.Linear(64, 1)

    @staticmethod
    def normalize_depth(depth: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        mask = mask.to(depth.dtype)
        count = mask.sum().clamp(min=1.0)
        mean = (depth * mask).sum() / count
        var = (((depth - mean) * mask) ** 2).sum() / count
        return (depth - mean) / torch.sqrt(var + 1e-6) * mask

    def forward(
        self, depth: torch.Tensor, mask: torch.Tensor, pose: CameraPose
    ) -> torch.Tensor:
        if depth.shape != (self.resolution, self.resolution):
            raise ValueError(
                f"expected ({self.resolution}, {self.resolution}) depth, "
                f"got {tuple(depth.shape)}"
            )
        if mask.shape != depth.shape:
            raise ValueError("mask shape must match depth shape")
        normalized = self.normalize_depth(depth, mask)
        x = torch.stack([normalized, mask.to(depth.dtype)]).unsqueeze(0)
        for conv in self.convs:
            x = F.leaky_relu(conv(x), 0.2)
        feat = F.leaky_relu(self.feature(x.reshape(1, -1)), 0.2)
        pose_flat = torch.as_tensor(
            pose.to_matrix().reshape(-1), dtype=depth.dtype, device=depth.device
        )
        joint = torch.cat([feat.squeeze(0), pose_flat])
        return self.logit(F.leaky_relu(self.pose_fc(joint), 0.2)).squeeze(-1)


class GNeRF(torch.nn.Module):
    """Bundle of encoder, conditioned field, and depth discriminator."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng():
            torch.manual_seed(seed)
            self.encoder = SceneEncoder(cfg)
            self.field = ConditionedRadianceField(cfg)
            self.discriminator = DepthDiscriminator(cfg)

    def encode(self, image: torch.Tensor) -> torch.Tensor:
        return self.encoder(image)

    def generate(
        self,
        pose: CameraPose,
        embedding: torch.Tensor,
        render_cfg: RenderConfig,
        rng: np.random.Generator | None = None,
    ) -> GeneratorOutput:
        out: RenderOutput = render(
            self.field.conditioned_field(embedding),
            pose,
            self.cfg.intrinsics(),
            render_cfg,
            rng=rng,
            dtype=next(self.field.parameters()).dtype,
        )
        return GeneratorOutput(
            image=out.color, depth=out.depth, weight_sum=out.weight_sum
        )

    def discriminate(
        self, depth: torch.Tensor, mask: torch.Tensor, pose: CameraPose
    ) -> torch.Tensor:
        return self.discriminator(depth, mask, pose)

    def generator_parameters(self):
        yield from self.encoder.parameters()
        yield from self.field.parameters()

    def named_tensors(self) -> dict[str, np.ndarray]:
        return {
            name: param.detach().cpu().numpy().astype(np.float32)
            for name, param in self.named_parameters()
        }

    def load_tensors(self, tensors: dict[str, np.ndarray]) -> None:
        state = {name: torch.as_tensor(arr) for name, arr in tensors.items()}
        self.load_state_dict(state)
