"""Ground-truth degradation synthesis: blur kernels, downscaling, datasets.

The degradation model is LR = subsample(conv(HR, k), s) + noise, applied
per channel with a shared 2-D kernel, reflect padding and subsampling
phase 0, clamped to [0, 1].
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage, signal

from .imaging import load_image, save_image, validate_image

KERNEL_SUM_TOL = 1e-6


@dataclass(frozen=True)
class Kernel:
    """Normalized odd-sized 2-D blur kernel."""
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"kernel must be square, got shape {w.shape}")
        if w.shape[0] % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {w.shape[0]}")
        if not np.isfinite(w).all():
            raise ValueError("kernel has non-finite weights")
        if abs(w.sum() - 1.0) > KERNEL_SUM_TOL:
            raise ValueError(f"kernel weights sum to {w.sum()}, expected 1")
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]


def delta_kernel(size: int = 1) -> Kernel:
    w = np.zeros((size, size))
    w[size // 2, size // 2] = 1.0
    return Kernel(w)


@dataclass(frozen=True)
class GaussianSpec:
    """Anisotropic Gaussian parameters: axis sigmas, rotation, support."""
    sigma_major: float
    sigma_minor: float
    theta: float
    size: int = 11

    def __post_init__(self):
        if self.sigma_minor <= 0 or self.sigma_major < self.sigma_minor:
            raise ValueError("need sigma_major >= sigma_minor > 0")
        if self.size % 2 == 0:
            raise ValueError("kernel size must be odd")


@dataclass
class DegradationConfig:
    scale: int
    kernel: Kernel
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.scale not in (1, 2, 4):
            raise ValueError(f"unsupported scale {self.scale}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")


def make_anisotropic_gaussian(spec: GaussianSpec) -> Kernel:
    """Discretize a rotated bivariate Gaussian on the integer grid."""
    c, s = math.cos(spec.theta), math.sin(spec.theta)
    rot = np.array([[c, -s], [s, c]])
    cov = rot @ np.diag([spec.sigma_major ** 2, spec.sigma_minor ** 2]) @ rot.T
    inv = np.linalg.inv(cov)
    r = spec.size // 2
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    quad = inv[0, 0] * xx ** 2 + 2 * inv[0, 1] * xx * yy + inv[1, 1] * yy ** 2
    w = np.exp(-0.5 * quad)
    return Kernel(w / w.sum())


def degrade(hr: np.ndarray, cfg: DegradationConfig,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Blur with the config kernel, phase-0 subsample, add noise, clamp."""
    hr = validate_image(hr)
    h, w = hr.shape[:2]
    if h % cfg.scale or w % cfg.scale:
        raise ValueError(f"image {h}x{w} not divisible by scale {cfg.scale}")
    out = np.empty_like(hr)
    for ch in range(3):
        out[..., ch] = ndimage.convolve(hr[..., ch], cfg.kernel.weights,
                                        mode="reflect")
    lr = out[::cfg.scale, ::cfg.scale]
    if cfg.noise_sigma > 0:
        if rng is None:
            raise ValueError("noise_sigma > 0 requires an rng")
        lr = lr + rng.normal(0.0, cfg.noise_sigma, size=lr.shape)
    return np.clip(lr, 0.0, 1.0)


def compose_kernels(a: Kernel, b: Kernel) -> Kernel:
    """Full 2-D convolution of two kernels; mass stays 1."""
    return Kernel(signal.convolve2d(a.weights, b.weights, mode="full"))


def save_kernel(kernel_weights: np.ndarray, path) -> None:
    """Write the plain-text kernel format: 'size s' header then rows."""
    w = np.asarray(kernel_weights, dtype=np.float64)
    lines = [f"size {w.shape[0]}"]
    for row in w:
        lines.append(" ".join(f"{v:.17g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def load_kernel(path) -> Kernel:
    lines = Path(path).read_text().strip().splitlines()
    tag, size_s = lines[0].split()
    if tag != "size":
        raise ValueError(f"{path}: bad kernel header {lines[0]!r}")
    size = int(size_s)
    rows = [[float(v) for v in line.split()] for line in lines[1:size + 1]]
    return Kernel(np.array(rows))


@dataclass
class KernelRanges:
    """Sampling ranges for random anisotropic Gaussian synthesis kernels."""
    scale: int = 2
    sigma_min: float = 0.6
    sigma_max: float = 2.5
    theta_max: float = math.pi
    size: int = 11
    noise_sigma: float = 0.0
    isotropic: bool = False
    fixed_sigma: float | None = None   # forces an isotropic kernel of this width


MANIFEST_COLUMNS = ["path_lr", "path_hr", "scale", "sigma_major",
                    "sigma_minor", "theta", "kernel_path", "seed"]


def sample_gaussian_spec(ranges: KernelRanges, rng: np.random.Generator) -> GaussianSpec:
    if ranges.fixed_sigma is not None:
        return GaussianSpec(ranges.fixed_sigma, ranges.fixed_sigma, 0.0, ranges.size)
    if ranges.isotropic:
        sig = float(rng.uniform(ranges.sigma_min, ranges.sigma_max))
        return GaussianSpec(sig, sig, 0.0, ranges.size)
    a, b = rng.uniform(ranges.sigma_min, ranges.sigma_max, size=2)
    theta = float(rng.uniform(0.0, ranges.theta_max))
    return GaussianSpec(float(max(a, b)), float(min(a, b)), theta, ranges.size)


def synthesize_dataset(hr_dir, n_images: int, ranges: KernelRanges,
                       rng: np.random.Generator, out_dir) -> Path:
    """Degrade the first n_images PNGs of hr_dir with random kernels.

    Writes lr/, hr/, kernels/ subdirectories plus manifest.csv and
    returns the manifest path. Emitted LR images are the 8-bit
    quantization of degrade(HR, kernel); the stored kernel text is
    full-precision so the pair can be recomputed exactly.
    """
    hr_dir, out_dir = Path(hr_dir), Path(out_dir)
    paths = sorted(hr_dir.glob("*.png"))
    if len(paths) < n_images:
        raise ValueError(f"{hr_dir} has {len(paths)} PNGs, need {n_images}")
    for sub in ("lr", "hr", "kernels"):
        (out_dir / sub).mkdir(parents=True, exist_ok=True)
    rows = []
    for idx, src in enumerate(paths[:n_images]):
        spec = sample_gaussian_spec(ranges, rng)
        kernel = make_anisotropic_gaussian(spec)
        pair_seed = int(rng.integers(0, 2 ** 31))
        hr = load_image(src)
        cfg = DegradationConfig(ranges.scale, kernel, ranges.noise_sigma)
        lr = degrade(hr, cfg, np.random.default_rng(pair_seed))
        name = f"{idx:04d}"
        lr_path = out_dir / "lr" / f"{name}.png"
        hr_path = out_dir / "hr" / f"{name}.png"
        kernel_path = out_dir / "kernels" / f"{name}.txt"
        save_image(lr, lr_path)
        save_image(hr, hr_path)
        save_kernel(kernel.weights, kernel_path)
        rows.append([str(lr_path), str(hr_path), ranges.scale,
                     spec.sigma_major, spec.sigma_minor, spec.theta,
                     str(kernel_path), pair_seed])
    manifest = out_dir / "manifest.csv"
    with open(manifest, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_COLUMNS)
        writer.writerows(rows)
    return manifest


def read_manifest(path) -> list[dict]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
