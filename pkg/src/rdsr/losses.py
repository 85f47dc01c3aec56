"""Training objectives: Charbonnier, perceptual filter-bank loss,
forward/backward cycle consistency, least-squares adversarial terms,
degradation-representation regularization, and the weighted total.

Public entry points accept (H, W, 3) numpy images; the `_t` variants
operate on (B, 3, H, W) double tensors and stay differentiable.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .downsampler import downsample_aligned
from .imaging import to_tensor


@dataclass
class LossWeights:
    lambda_cycle_target: float = 5.0
    lambda_cycle_ref: float = 1.0
    lambda_reg: float = 20.0
    lambda_gan: float = 1.0
    charbonnier_eps: float = 1e-6
    charbonnier_weight: float = 1.0
    perceptual_weight: float = 1.0

    def __post_init__(self):
        if self.charbonnier_eps <= 0:
            raise ValueError("charbonnier_eps must be > 0")
        for name in ("lambda_cycle_target", "lambda_cycle_ref", "lambda_reg",
                     "lambda_gan", "charbonnier_weight", "perceptual_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _as_tensor(img) -> torch.Tensor:
    if isinstance(img, torch.Tensor):
        return img if img.dim() == 4 else img[None]
    return to_tensor(img)


def charbonnier_t(a: torch.Tensor, b: torch.Tensor, eps: float) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return torch.sqrt((a - b) ** 2 + eps ** 2).mean()


def charbonnier(a, b, eps: float = 1e-6) -> float:
    return float(charbonnier_t(_as_tensor(a), _as_tensor(b), eps))


class FeatureExtractor:
    """Fixed derivative/Laplacian filter bank at two dyadic scales.

    A deterministic, weight-free stand-in for a pretrained perceptual
    network: per-channel horizontal and vertical forward differences
    plus a 3x3 Laplacian, evaluated at full resolution and after one
    2x average pooling.
    """

    def __init__(self, scales: int = 2):
        self.scales = scales
        dx = torch.tensor([[1.0, -1.0]], dtype=torch.float64)
        dy = dx.T.clone()
        lap = torch.tensor([[0.0, 1.0, 0.0],
                            [1.0, -4.0, 1.0],
                            [0.0, 1.0, 0.0]], dtype=torch.float64)
        self.filters = [f[None, None] for f in (dx, dy, lap)]

    def __call__(self, x: torch.Tensor) -> list[torch.Tensor]:
        b, c, h, w = x.shape
        feats = []
        level = x.reshape(b * c, 1, h, w)
        for s in range(self.scales):
            if min(level.shape[-2:]) < 3:
                break
            for f in self.filters:
                feats.append(F.conv2d(level, f))
            level = F.avg_pool2d(level, 2)
        return feats


def perceptual_t(a: torch.Tensor, b: torch.Tensor,
                 phi: FeatureExtractor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    fa, fb = phi(a), phi(b)
    terms = [(x - y).abs().mean() for x, y in zip(fa, fb)]
    return torch.stack(terms).mean()


def perceptual(a, b, phi: FeatureExtractor | None = None) -> float:
    phi = phi or FeatureExtractor()
    return float(perceptual_t(_as_tensor(a), _as_tensor(b), phi))


def recon_loss(a: torch.Tensor, b: torch.Tensor, phi: FeatureExtractor,
               w: LossWeights) -> torch.Tensor:
    """Charbonnier + perceptual reconstruction term shared by both cycles."""
    return (w.charbonnier_weight * charbonnier_t(a, b, w.charbonnier_eps)
            + w.perceptual_weight * perceptual_t(a, b, phi))


def cycle_forward(x, g_up, g_dn, rep, phi: FeatureExtractor,
                  w: LossWeights) -> torch.Tensor:
    """Target branch LR -> up -> down, compared against the aligned LR crop."""
    x = _as_tensor(x)
    sr = g_up(x, rep) if rep is not None else g_up(x)
    lr_pred, off = downsample_aligned(g_dn, sr)
    lh, lw = lr_pred.shape[-2:]
    target = x[..., off:off + lh, off:off + lw]
    return recon_loss(lr_pred, target, phi, w)


def cycle_backward(y, g_up, g_dn, enc, phi: FeatureExtractor,
                   w: LossWeights) -> torch.Tensor:
    """Reference branch HR -> down -> up; the rep comes from the downsample."""
    y = _as_tensor(y)
    lr_pred, off = downsample_aligned(g_dn, y)
    rep = enc(lr_pred) if enc is not None else None
    hr_pred = g_up(lr_pred, rep) if rep is not None else g_up(lr_pred)
    s = g_dn.scale
    hh, hw = hr_pred.shape[-2:]
    target = y[..., off * s:off * s + hh, off * s:off * s + hw]
    return recon_loss(hr_pred, target, phi, w)


def cycle_total(fwd, bwd, w: LossWeights):
    return w.lambda_cycle_target * fwd + w.lambda_cycle_ref * bwd


def gen_adv_loss(d, fake_hr) -> torch.Tensor:
    scores = d(_as_tensor(fake_hr))
    return ((scores - 1.0) ** 2).mean()


def disc_loss(d, real_hr, fake_hr) -> torch.Tensor:
    real_scores = d(_as_tensor(real_hr))
    fake_scores = d(_as_tensor(fake_hr))
    return ((real_scores - 1.0) ** 2).mean() + (fake_scores ** 2).mean()


def reg_loss(enc, x, dn_ref) -> torch.Tensor:
    """L1 distance between the degradation reps of target and downsampled ref."""
    rep_x = enc(_as_tensor(x))
    rep_r = enc(_as_tensor(dn_ref))
    return (rep_x - rep_r).abs().mean()


def total_loss(cycle, reg, gen_adv, w: LossWeights):
    return cycle + w.lambda_reg * reg + w.lambda_gan * gen_adv
