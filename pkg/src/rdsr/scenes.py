"""Synthetic textured scene generator.

Used to build self-contained demo and benchmark corpora: a smooth color
gradient, randomly placed rotated ellipses with sharp boundaries,
oriented sinusoid gratings and fine texture noise. The high-frequency
content matters: blur kernels are only identifiable from images that
actually contain fine detail. No external image data is required
anywhere in the toolkit.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .imaging import save_image


def make_scene(rng: np.random.Generator, size: int = 128) -> np.ndarray:
    h = w = size
    yy, xx = np.mgrid[0:h, 0:w] / size
    img = np.zeros((h, w, 3))
    gx, gy = rng.uniform(-1, 1, 2)
    img += rng.uniform(0.2, 0.8, 3) + \
        0.3 * (gx * xx + gy * yy)[..., None] * rng.uniform(0.5, 1, 3)
    for _ in range(int(rng.integers(8, 16))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(4, h / 3, 2)
        ang = rng.uniform(0, np.pi)
        color = rng.uniform(0, 1, 3)
        ca, sa = np.cos(ang), np.sin(ang)
        u = ((xx * w - cx) * ca + (yy * h - cy) * sa) / rx
        v = (-(xx * w - cx) * sa + (yy * h - cy) * ca) / ry
        mask = (u * u + v * v) < 1
        alpha = rng.uniform(0.4, 1.0)
        img[mask] = (1 - alpha) * img[mask] + alpha * color
    # Oriented sinusoid gratings confined to random discs: strong,
    # localized high-frequency structure at a mix of spatial frequencies.
    for _ in range(int(rng.integers(4, 8))):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        rad = rng.uniform(h / 8, h / 3)
        freq = rng.uniform(0.08, 0.45) * np.pi
        ang = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        u = (xx * w - cx) * np.cos(ang) + (yy * h - cy) * np.sin(ang)
        wave = np.sin(freq * u + phase)
        mask = ((xx * w - cx) ** 2 + (yy * h - cy) ** 2) < rad * rad
        amp = rng.uniform(0.15, 0.4)
        img[mask] += amp * wave[mask, None] * rng.uniform(0.5, 1, 3)
    # Fine unsmoothed texture plus a little smoothed mottle.
    img += 0.06 * rng.normal(0, 1, (h, w))[..., None]
    img += 0.05 * ndimage.gaussian_filter(rng.normal(0, 1, (h, w)), 1.0)[..., None]
    return np.clip(img, 0, 1)


def write_scene_corpus(out_dir, count: int, rng: np.random.Generator,
                       size: int = 128) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        path = out_dir / f"scene_{i:04d}.png"
        save_image(make_scene(rng, size), path)
        paths.append(path)
    return paths
