"""Compact upscaling stack: degradation encoder, conditional upscaler,
patch discriminator, and the toy baseline pretraining loop.

The encoder maps an LR image to a 16-dim degradation representation via
global average pooling; the upscaler is an 8-layer 32-channel conv trunk
whose features are scaled and shifted per layer by a small MLP on that
representation, followed by a sub-pixel (pixel-shuffle) head added to a
nearest-neighbor upsample of the input. All parameters are float64 and
all initialization is drawn from an explicit numpy generator.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import checkpoint
from .imaging import to_image, to_tensor

REP_DIM = 16
TRUNK_LAYERS = 8
TRUNK_CHANNELS = 32


def _smooth_act(x: torch.Tensor, slope: float) -> torch.Tensor:
    """Smooth leaky rectifier: slope*x + (1-slope)*softplus(x).

    Infinitely differentiable, so finite-difference gradient checks hold
    at tight tolerance everywhere; behaves like a leaky ReLU away from 0.
    """
    return slope * x + (1.0 - slope) * F.softplus(x, beta=5.0)


def _init_conv(conv: nn.Conv2d, rng: np.random.Generator, gain: float = 1.0):
    fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
    std = gain * np.sqrt(2.0 / fan_in)
    with torch.no_grad():
        conv.weight.copy_(torch.from_numpy(
            rng.normal(0.0, std, size=tuple(conv.weight.shape))))
        if conv.bias is not None:
            conv.bias.zero_()


def _init_linear(lin: nn.Linear, rng: np.random.Generator, gain: float = 1.0):
    std = gain * np.sqrt(2.0 / lin.in_features)
    with torch.no_grad():
        lin.weight.copy_(torch.from_numpy(
            rng.normal(0.0, std, size=tuple(lin.weight.shape))))
        lin.bias.zero_()


class DegradationEncoder(nn.Module):
    """LR image -> fixed-length degradation representation."""

    def __init__(self, rng: np.random.Generator, rep_dim: int = REP_DIM):
        super().__init__()
        self.rep_dim = rep_dim
        self.conv1 = nn.Conv2d(3, 16, 3, padding=1).double()
        self.conv2 = nn.Conv2d(16, 32, 3, stride=2, padding=1).double()
        self.conv3 = nn.Conv2d(32, 32, 3, stride=2, padding=1).double()
        self.head = nn.Linear(32, rep_dim).double()
        for conv in (self.conv1, self.conv2, self.conv3):
            _init_conv(conv, rng)
        _init_linear(self.head, rng)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] < 16 or x.shape[-2] < 16:
            raise ValueError(f"encoder input {tuple(x.shape[-2:])} below 16x16")
        h = _smooth_act(self.conv1(x), 0.1)
        h = _smooth_act(self.conv2(h), 0.1)
        h = _smooth_act(self.conv3(h), 0.1)
        return self.head(h.mean(dim=(2, 3)))


class Upscaler(nn.Module):
    """Conditional SR network with per-layer feature modulation."""

    def __init__(self, scale: int, rng: np.random.Generator,
                 rep_dim: int = REP_DIM):
        super().__init__()
        if scale not in (1, 2, 4):
            raise ValueError(f"unsupported scale {scale}")
        self.scale = scale
        self.rep_dim = rep_dim
        self.stem = nn.Conv2d(3, TRUNK_CHANNELS, 3, padding=1).double()
        self.trunk = nn.ModuleList(
            nn.Conv2d(TRUNK_CHANNELS, TRUNK_CHANNELS, 3, padding=1).double()
            for _ in range(TRUNK_LAYERS))
        self.modulator = nn.Linear(rep_dim, 2 * TRUNK_CHANNELS * TRUNK_LAYERS).double()
        self.head = nn.Conv2d(TRUNK_CHANNELS, 3 * scale * scale, 3, padding=1).double()
        _init_conv(self.stem, rng)
        for conv in self.trunk:
            _init_conv(conv, rng)
        _init_linear(self.modulator, rng, gain=0.1)
        _init_conv(self.head, rng, gain=0.1)

    def forward(self, x: torch.Tensor, rep: torch.Tensor) -> torch.Tensor:
        if rep.dim() == 1:
            rep = rep[None]
        if rep.shape[-1] != self.rep_dim:
            raise ValueError(f"rep length {rep.shape[-1]}, expected {self.rep_dim}")
        mod = self.modulator(rep).reshape(-1, TRUNK_LAYERS, 2, TRUNK_CHANNELS)
        h = _smooth_act(self.stem(x), 0.1)
        for i, conv in enumerate(self.trunk):
            gamma = mod[:, i, 0][:, :, None, None]
            beta = mod[:, i, 1][:, :, None, None]
            h = _smooth_act(conv(h) * (1.0 + gamma) + beta, 0.1)
        residual = F.pixel_shuffle(self.head(h), self.scale)
        base = F.interpolate(x, scale_factor=self.scale, mode="nearest")
        return base + residual


class PatchDiscriminator(nn.Module):
    """Four strided convs, 32->64 channels, raw least-squares scores."""

    def __init__(self, rng: np.random.Generator):
        super().__init__()
        chans = [3, 32, 32, 64, 64]
        self.convs = nn.ModuleList(
            nn.Conv2d(chans[i], chans[i + 1], 4, stride=2, padding=1).double()
            for i in range(4))
        self.head = nn.Conv2d(64, 1, 3, padding=1).double()
        for conv in self.convs:
            _init_conv(conv, rng)
        # small-gain head: adversarial gradients into a freshly fine-tuned
        # generator start near zero and only grow as the critic trains
        _init_conv(self.head, rng, gain=0.01)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] < 32 or x.shape[-2] < 32:
            raise ValueError(f"discriminator input {tuple(x.shape[-2:])} below 32x32")
        h = x
        for conv in self.convs:
            h = _smooth_act(conv(h), 0.2)
        return self.head(h)


def encode_degradation(enc: DegradationEncoder, lr: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        return enc(to_tensor(lr))[0].numpy()


def upscale(up: Upscaler, lr: np.ndarray, rep: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        out = up(to_tensor(lr), torch.as_tensor(rep, dtype=torch.float64))
    return to_image(out, clamp=True)


def discriminate(d: PatchDiscriminator, img: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        return d(to_tensor(img))[0, 0].numpy()


@dataclass
class Baseline:
    """Frozen pretrained upscaler + encoder pair for one scale."""
    upscaler: Upscaler
    encoder: DegradationEncoder
    scale: int


def save_baseline(baseline: Baseline, path) -> None:
    tensors = {"scale": torch.tensor([float(baseline.scale)])}
    for name, p in baseline.upscaler.state_dict().items():
        tensors[f"up.{name}"] = p
    for name, p in baseline.encoder.state_dict().items():
        tensors[f"enc.{name}"] = p
    checkpoint.save_checkpoint(path, checkpoint.TAG_UPSCALER, tensors)


def load_baseline(path) -> Baseline:
    tensors = checkpoint.load_checkpoint(path, checkpoint.TAG_UPSCALER)
    scale = int(tensors.pop("scale").item())
    rng = np.random.default_rng(0)
    up = Upscaler(scale, rng)
    enc = DegradationEncoder(rng)
    up.load_state_dict({k[3:]: v for k, v in tensors.items() if k.startswith("up.")})
    enc.load_state_dict({k[4:]: v for k, v in tensors.items() if k.startswith("enc.")})
    return Baseline(up, enc, scale)


def pretrain_baseline_upscaler(manifest_rows: list[dict], cfg, rng: np.random.Generator,
                               log=None) -> tuple[Baseline, list[float]]:
    """Jointly train encoder + upscaler with Charbonnier loss on
    synthesized pairs until validation PSNR-Y stalls for 3 evaluations.

    `cfg` is a trainer.TrainConfig; `manifest_rows` come from
    degradation.read_manifest. The last max(2, 10%) pairs are held out
    for validation. Returns the frozen baseline and the validation
    PSNR-Y trace.
    """
    from .imaging import load_image
    from .losses import charbonnier_t
    from .metrics import psnr_y

    if len(manifest_rows) < 2:
        raise ValueError("need at least 2 LR/HR pairs to pretrain")
    scale = int(manifest_rows[0]["scale"])
    n_val = max(2, len(manifest_rows) // 10)
    train_rows = manifest_rows[:-n_val]
    val_rows = manifest_rows[-n_val:]
    pairs = [(load_image(r["path_lr"]), load_image(r["path_hr"]))
             for r in train_rows]
    val_pairs = [(load_image(r["path_lr"]), load_image(r["path_hr"]))
                 for r in val_rows]

    up = Upscaler(scale, rng)
    enc = DegradationEncoder(rng)
    opt = torch.optim.Adam(
        [{"params": up.parameters(), "lr": cfg.lr_pretrain},
         {"params": enc.parameters(), "lr": cfg.lr_pretrain}],
        betas=(cfg.adam_beta1, cfg.adam_beta2))

    def validate() -> float:
        vals = []
        for lr_img, hr_img in val_pairs:
            rep = encode_degradation(enc, lr_img)
            sr = upscale(up, lr_img, rep)
            vals.append(psnr_y(sr, hr_img))
        return float(np.mean(vals))

    patch = cfg.patch_lr
    best, stale = -np.inf, 0
    trace = []
    for step in range(cfg.iters_pretrain):
        idx = int(rng.integers(0, len(pairs)))
        lr_img, hr_img = pairs[idx]
        h, w = lr_img.shape[:2]
        i = int(rng.integers(0, h - patch + 1))
        j = int(rng.integers(0, w - patch + 1))
        lr_t = to_tensor(lr_img[i:i + patch, j:j + patch])
        hr_t = to_tensor(hr_img[i * scale:(i + patch) * scale,
                                j * scale:(j + patch) * scale])
        sr = up(lr_t, enc(lr_t))
        loss = charbonnier_t(sr, hr_t, cfg.weights.charbonnier_eps)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if (step + 1) % cfg.pretrain_eval_every == 0:
            v = validate()
            trace.append(v)
            if log:
                log(f"pretrain step {step + 1}: val PSNR-Y {v:.4f} dB")
            if v > best + 1e-6:
                best, stale = v, 0
            else:
                stale += 1
                if stale >= 3:
                    break
    for p in up.parameters():
        p.requires_grad_(False)
    for p in enc.parameters():
        p.requires_grad_(False)
    return Baseline(up, enc, scale), trace
