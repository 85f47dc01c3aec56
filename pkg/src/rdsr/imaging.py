"""Image container, PNG I/O, color conversion and patch sampling.

An image is a float64 numpy array of shape (H, W, 3) with samples in
[0, 1]. Quantization to 8-bit happens only at save time; everything in
the training and metric paths stays in the float domain.
"""
from __future__ import annotations

import numpy as np
import torch
from PIL import Image as PILImage

# Full-range BT.601 luma coefficients.
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114], dtype=np.float64)

MIN_TRAIN_EXTENT = 16


def validate_image(img: np.ndarray) -> np.ndarray:
    """Check shape/range of an (H, W, 3) image and return it as float64."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got shape {img.shape}")
    if not np.isfinite(img).all():
        raise ValueError("image contains non-finite samples")
    return img


def load_image(path) -> np.ndarray:
    """Load an 8-bit RGB PNG as a float image in [0, 1]."""
    with PILImage.open(path) as im:
        if im.format != "PNG":
            raise ValueError(f"{path}: unsupported format {im.format!r}, need PNG")
        if im.mode != "RGB":
            raise ValueError(f"{path}: expected RGB, got mode {im.mode!r}")
        arr = np.asarray(im, dtype=np.float64)
    return arr / 255.0


def save_image(img: np.ndarray, path) -> None:
    """Quantize to 8 bits (round-to-nearest, clamped) and write a PNG."""
    img = validate_image(img)
    byte = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(byte, mode="RGB").save(path, format="PNG")


def rgb_to_luma(img: np.ndarray) -> np.ndarray:
    """Full-range BT.601 luma plane: Y = 0.299 R + 0.587 G + 0.114 B."""
    img = validate_image(img)
    return img @ LUMA_WEIGHTS


def extract_patches(img: np.ndarray, size: int, count: int,
                    rng: np.random.Generator) -> list[np.ndarray]:
    """Draw `count` square patches with offsets uniform over valid positions."""
    img = validate_image(img)
    h, w = img.shape[:2]
    if size > min(h, w):
        raise ValueError(f"patch size {size} exceeds image extent {h}x{w}")
    patches = []
    for _ in range(count):
        i = int(rng.integers(0, h - size + 1))
        j = int(rng.integers(0, w - size + 1))
        patches.append(img[i:i + size, j:j + size].copy())
    return patches


def mean_rgb(img: np.ndarray) -> np.ndarray:
    """Per-channel arithmetic mean, as a length-3 vector."""
    img = validate_image(img)
    return img.mean(axis=(0, 1))


def to_tensor(img: np.ndarray) -> torch.Tensor:
    """(H, W, 3) float image -> (1, 3, H, W) double tensor."""
    img = validate_image(img)
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None]


def to_image(t: torch.Tensor, clamp: bool = True) -> np.ndarray:
    """(1, 3, H, W) or (3, H, W) tensor -> (H, W, 3) float image."""
    if t.dim() == 4:
        t = t[0]
    arr = t.detach().cpu().double().numpy().transpose(1, 2, 0)
    if clamp:
        arr = np.clip(arr, 0.0, 1.0)
    return arr
