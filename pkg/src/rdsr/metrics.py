"""Evaluation metrics: luma PSNR, SSIM, bicubic resizing and a
no-reference naturalness score built on MSCN coefficient statistics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .imaging import rgb_to_luma, validate_image

PSNR_INF = math.inf


@dataclass
class MetricReport:
    psnr_y: float
    ssim: float
    nr_score: float
    psnr_rgb: float = math.nan


def psnr_y(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio on the luma plane, peak 1.0."""
    ya, yb = rgb_to_luma(a), rgb_to_luma(b)
    if ya.shape != yb.shape:
        raise ValueError(f"shape mismatch {ya.shape} vs {yb.shape}")
    mse = float(np.mean((ya - yb) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / mse)


def psnr_rgb(a: np.ndarray, b: np.ndarray) -> float:
    a, b = validate_image(a), validate_image(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_INF
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = size // 2
    g = np.exp(-0.5 * (np.arange(-r, r + 1) / sigma) ** 2)
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: np.ndarray, b: np.ndarray, window_size: int = 11,
         sigma: float = 1.5, c1: float = 0.01 ** 2, c2: float = 0.03 ** 2) -> float:
    """Mean local SSIM on luma with an 11x11 Gaussian window (valid region)."""
    ya, yb = rgb_to_luma(a), rgb_to_luma(b)
    if ya.shape != yb.shape:
        raise ValueError(f"shape mismatch {ya.shape} vs {yb.shape}")
    if min(ya.shape) < window_size:
        raise ValueError(f"image {ya.shape} smaller than SSIM window {window_size}")
    from scipy.signal import convolve2d
    win = _gaussian_window(window_size, sigma)

    def filt(x):
        return convolve2d(x, win, mode="valid")

    mu1, mu2 = filt(ya), filt(yb)
    s11 = filt(ya * ya) - mu1 * mu1
    s22 = filt(yb * yb) - mu2 * mu2
    s12 = filt(ya * yb) - mu1 * mu2
    num = (2 * mu1 * mu2 + c1) * (2 * s12 + c2)
    den = (mu1 * mu1 + mu2 * mu2 + c1) * (s11 + s22 + c2)
    return float(np.mean(num / den))


def _cubic_weight(t: np.ndarray, a: float = -0.5) -> np.ndarray:
    """Catmull-Rom cubic interpolation kernel."""
    t = np.abs(t)
    w = np.zeros_like(t)
    near = t <= 1.0
    far = (t > 1.0) & (t < 2.0)
    w[near] = (a + 2) * t[near] ** 3 - (a + 3) * t[near] ** 2 + 1.0
    w[far] = a * t[far] ** 3 - 5 * a * t[far] ** 2 + 8 * a * t[far] - 4 * a
    return w


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Symmetric reflection (a b c | c b a), valid for any overshoot."""
    period = 2 * n
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - 1 - idx, idx)


def _resize_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row-stochastic cubic interpolation matrix for one axis."""
    dst = np.arange(n_out)
    src = (dst + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(int)
    mat = np.zeros((n_out, n_in))
    for k in range(-1, 3):
        idx = base + k
        w = _cubic_weight(src - idx)
        np.add.at(mat, (dst, _reflect_index(idx, n_in)), w)
    return mat


def bicubic_resize(img: np.ndarray, factor: float) -> np.ndarray:
    """Separable Catmull-Rom resize with reflect boundary handling."""
    img = validate_image(img)
    if factor <= 0:
        raise ValueError("factor must be > 0")
    h, w = img.shape[:2]
    oh, ow = round(h * factor), round(w * factor)
    if oh < 1 or ow < 1:
        raise ValueError(f"degenerate output size {oh}x{ow}")
    mr = _resize_matrix(h, oh)
    mc = _resize_matrix(w, ow)
    out = np.einsum("oi,ijc->ojc", mr, img)
    out = np.einsum("pj,ojc->opc", mc, out)
    return np.clip(out, 0.0, 1.0)


# MSCN statistic anchors: (variance, kurtosis) of the normalized
# coefficients of sharp natural-looking images at full and half
# resolution, calibrated on the toolkit's synthetic scene corpus. Blur
# collapses the variance; heavy noise inflates it far past the anchor,
# so log-distance from the anchors ranks both corruptions as less
# natural.
NR_ANCHORS = ((0.51, 2.40), (0.56, 2.14))
NR_KURT_WEIGHT = 0.5
_MSCN_STABILIZER = 1.0 / 255.0


def _mscn(plane: np.ndarray, window: np.ndarray) -> np.ndarray:
    mu = ndimage.convolve(plane, window, mode="reflect")
    ex2 = ndimage.convolve(plane * plane, window, mode="reflect")
    sigma = np.sqrt(np.abs(ex2 - mu * mu))
    return (plane - mu) / (sigma + _MSCN_STABILIZER)


def _kurtosis(x: np.ndarray) -> float:
    x = x - x.mean()
    m2 = float(np.mean(x * x))
    if m2 == 0.0:
        return 0.0
    return float(np.mean(x ** 4)) / (m2 * m2)


def nr_quality(img: np.ndarray) -> float:
    """No-reference naturalness score from MSCN statistics; lower is better."""
    img = validate_image(img)
    if min(img.shape[:2]) < 32:
        raise ValueError(f"image {img.shape[:2]} below 32x32 minimum")
    luma = rgb_to_luma(img)
    window = _gaussian_window(7, 7.0 / 6.0)
    score = 0.0
    plane = luma
    for var_anchor, kurt_anchor in NR_ANCHORS:
        coeffs = _mscn(plane, window)
        var = float(np.var(coeffs)) + 1e-6
        kurt = _kurtosis(coeffs) + 1e-6
        score += abs(math.log(var / var_anchor))
        score += NR_KURT_WEIGHT * abs(math.log(kurt / kurt_anchor))
        h, w = plane.shape
        plane = plane[:h - h % 2, :w - w % 2].reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))
    return score


def metric_report(sr: np.ndarray, gt: np.ndarray) -> MetricReport:
    return MetricReport(psnr_y=psnr_y(sr, gt), ssim=ssim(sr, gt),
                        nr_score=nr_quality(sr), psnr_rgb=psnr_rgb(sr, gt))
