"""Reconstruction and adversarial losses.

Reconstruction is the unweighted sum of L1, SSIM loss (1 - SSIM), and a
perceptual distance computed with a fixed random-seed convolutional feature
stack (no pretrained weights). Adversarial terms use softplus with an R1
gradient penalty; the logit orientation for real data is configurable via
LossConfig.sign_convention.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass

import torch
import torch.nn.functional as F


@dataclass(frozen=True)
class LossConfig:
    lambda_g: float = 1.2
    lambda_r1: float = 1.0
    ssim_window: int = 11
    perceptual_scales: tuple[int, ...] = (1, 2, 4)
    perceptual_seed: int = 7777
    w_l1: float = 1.0
    w_ssim: float = 1.0
    w_perceptual: float = 1.0
    r1_on: str = "fake"  # which side's depth input carries the penalty
    sign_convention: str = "inverted"  # {inverted | standard}

    def __post_init__(self):
        if self.lambda_g < 0 or self.lambda_r1 < 0:
            raise ValueError("loss weights must be non-negative")
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise ValueError("ssim_window must be an odd integer >= 3")
        if self.r1_on not in ("fake", "real"):
            raise ValueError(f"r1_on must be 'fake' or 'real', got {self.r1_on!r}")
        if self.sign_convention not in ("inverted", "standard"):
            raise ValueError(
                f"sign_convention must be 'inverted' or 'standard', "
                f"got {self.sign_convention!r}"
            )


def _check_shapes(a: torch.Tensor, b: torch.Tensor) -> None:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def l1_loss(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean absolute difference over all pixels and channels."""
    _check_shapes(a, b)
    return (a - b).abs().mean()


def _gaussian_kernel(window: int, sigma: float, dtype, device) -> torch.Tensor:
    half = (window - 1) / 2.0
    coords = torch.arange(window, dtype=dtype, device=device) - half
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(
    a: torch.Tensor, b: torch.Tensor, window: int = 11, sigma: float = 1.5
) -> torch.Tensor:
    """Mean structural similarity with a Gaussian window, unit dynamic range.

    Accepts (H, W) or (H, W, C) images. Stabilizers c1 = 0.01^2, c2 = 0.03^2.
    """
    _check_shapes(a, b)
    if window < 3 or window % 2 == 0:
        raise ValueError("window must be an odd integer >= 3")
    if a.dim() == 2:
        a = a.unsqueeze(-1)
        b = b.unsqueeze(-1)
    h, w, c = a.shape
    if h < window or w < window:
        raise ValueError(f"image {h}x{w} smaller than ssim window {window}")

    x = a.permute(2, 0, 1).unsqueeze(1)  # (C, 1, H, W)
    y = b.permute(2, 0, 1).unsqueeze(1)
    kernel = _gaussian_kernel(window, sigma, x.dtype, x.device).expand(1, 1, -1, -1)

    mu_x = F.conv2d(x, kernel)
    mu_y = F.conv2d(y, kernel)
    xx = F.conv2d(x * x, kernel) - mu_x**2
    yy = F.conv2d(y * y, kernel) - mu_y**2
    xy = F.conv2d(x * y, kernel) - mu_x * mu_y

    c1, c2 = 0.01**2, 0.03**2
    score = ((2 * mu_x * mu_y + c1) * (2 * xy + c2)) / (
        (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    )
    return score.mean()


class RandomFeatureStack(torch.nn.Module):
    """Frozen random convolutional features at three scales.

    A recognized stand-in for pretrained perceptual features at small scale:
    distances in random-feature space still measure structural differences.
    """

    def __init__(self, seed: int = 7777, channels: tuple[int, ...] = (16, 32, 64)):
        super().__init__()
        self.seed = seed
        gen = torch.Generator().manual_seed(seed)
        layers = []
        c_in = 3
        for c_out in channels:
            conv = torch.nn.Conv2d(c_in, c_out, kernel_size=3, padding=1)
            torch.nn.init.kaiming_normal_(conv.weight, generator=gen)
            torch.nn.init.zeros_(conv.bias)
            layers.append(conv)
            c_in = c_out
        self.convs = torch.nn.ModuleList(layers)
        for p in self.parameters():
            p.requires_grad_(False)

    def features(self, image: torch.Tensor) -> list[torch.Tensor]:
        """Per-scale feature maps for an (H, W, 3) image in [0, 1]."""
        if image.dim() != 3 or image.shape[-1] != 3:
            raise ValueError(f"expected (H, W, 3) image, got {tuple(image.shape)}")
        x = image.permute(2, 0, 1).unsqueeze(0)
        out = []
        for i, conv in enumerate(self.convs):
            weight = conv.weight.to(x.dtype)
            bias = conv.bias.to(x.dtype)
            x = F.leaky_relu(F.conv2d(x, weight, bias, padding=1), 0.2)
            out.append(x)
            if i < len(self.convs) - 1:
                x = F.avg_pool2d(x, 2)
        return out


@functools.lru_cache(maxsize=4)
def default_feature_stack(seed: int = 7777) -> RandomFeatureStack:
    return RandomFeatureStack(seed=seed)


def perceptual_loss(
    a: torch.Tensor, b: torch.Tensor, extractor: RandomFeatureStack | None = None
) -> torch.Tensor:
    """Mean squared distance between multi-scale random-conv features."""
    _check_shapes(a, b)
    if extractor is None:
        extractor = default_feature_stack()
    fa = extractor.features(a)
    fb = extractor.features(b)
    terms = [((x - y) ** 2).mean() for x, y in zip(fa, fb)]
    return torch.stack(terms).sum()


def recon_loss(fake: torch.Tensor, ref: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """L1 + (1 - SSIM) + perceptual, each weighted (defaults: unweighted sum)."""
    _check_shapes(fake, ref)
    extractor = default_feature_stack(cfg.perceptual_seed)
    return (
        cfg.w_l1 * l1_loss(fake, ref)
        + cfg.w_ssim * (1.0 - ssim(fake, ref, window=cfg.ssim_window))
        + cfg.w_perceptual * perceptual_loss(fake, ref, extractor)
    )


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(float(x))


def d_adversarial_loss(
    real_logit, fake_logit, r1_grad_sq_norm, cfg: LossConfig
) -> torch.Tensor:
    """Discriminator objective: softplus terms plus the weighted R1 penalty.

    sign_convention='inverted' uses softplus(real) + softplus(-fake),
    driving real logits negative; 'standard' uses softplus(-real) +
    softplus(fake). The two label the real side with opposite logit signs
    but induce equivalent games.
    """
    real = _as_tensor(real_logit)
    fake = _as_tensor(fake_logit)
    r1 = _as_tensor(r1_grad_sq_norm)
    if cfg.sign_convention == "inverted":
        loss = F.softplus(real) + F.softplus(-fake)
    else:
        loss = F.softplus(-real) + F.softplus(fake)
    return loss + cfg.lambda_r1 * r1


def g_adversarial_loss(fake_logit) -> torch.Tensor:
    """Non-saturating generator loss in the standard orientation."""
    return F.softplus(-_as_tensor(fake_logit))


def generator_adversarial_loss(fake_logit, cfg: LossConfig) -> torch.Tensor:
    """Generator loss oriented consistently with the configured D convention.

    Under 'inverted' signs the discriminator labels real data with negative
    logits, so fooling it means driving the fake logit down.
    """
    fake = _as_tensor(fake_logit)
    if cfg.sign_convention == "inverted":
        return g_adversarial_loss(-fake)
    return g_adversarial_loss(fake)


def r1_grad_sq_norm(logit_fn, depth: torch.Tensor) -> torch.Tensor:
    """Squared norm of the logit's gradient w.r.t. the depth input.

    `logit_fn` maps a depth map to a scalar logit; the returned value keeps
    its graph so it can be backpropagated into discriminator parameters.
    """
    depth = depth.detach().requires_grad_(True)
    logit = logit_fn(depth)
    (grad,) = torch.autograd.grad(logit, depth, create_graph=True)
    return (grad**2).sum()


def total_loss(recon, gan, cfg: LossConfig) -> torch.Tensor:
    """Total objective: reconstruction plus weighted adversarial term."""
    return _as_tensor(recon) + cfg.lambda_g * _as_tensor(gan)
