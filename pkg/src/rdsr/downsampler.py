"""Deep linear downsampling network that collapses to one explicit kernel.

Five bias-free linear convolutions (sizes 7, 5, 3, 1, 1) with the
downscaling stride on the final layer. Because there are no
nonlinearities, the whole stack equals a single valid convolution with
the 13x13 full convolution of the layer kernels, followed by phase-0
subsampling; the explicit kernel is extracted directly from the weights.
"""
from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from . import checkpoint
from .degradation import Kernel

LAYER_SIZES = (7, 5, 3, 1, 1)
RECEPTIVE_FIELD = sum(LAYER_SIZES) - len(LAYER_SIZES) + 1   # 13
MARGIN = (RECEPTIVE_FIELD - 1) // 2                         # 6 each side


class LinearDownsampler(nn.Module):
    """Single shared-across-RGB kernel stack; stride s on the last layer."""

    def __init__(self, scale: int):
        super().__init__()
        if scale not in (1, 2, 4):
            raise ValueError(f"unsupported scale {scale}")
        self.scale = scale
        self.margin = MARGIN
        layers = []
        for i, k in enumerate(LAYER_SIZES):
            stride = scale if i == len(LAYER_SIZES) - 1 else 1
            layers.append(nn.Conv2d(1, 1, k, stride=stride, bias=False).double())
        self.layers = nn.ModuleList(layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        if h < RECEPTIVE_FIELD or w < RECEPTIVE_FIELD:
            raise ValueError(f"input {h}x{w} smaller than receptive field "
                             f"{RECEPTIVE_FIELD}")
        y = x.reshape(b * c, 1, h, w)
        for layer in self.layers:
            y = layer(y)
        return y.reshape(b, c, y.shape[-2], y.shape[-1])

    def composed_kernel(self) -> torch.Tensor:
        """Differentiable 13x13 full convolution of all layer kernels."""
        k = self.layers[0].weight
        for layer in self.layers[1:]:
            # conv_transpose2d is the full (un-flipped) 2-D convolution,
            # which is exactly how sequential cross-correlations compose.
            k = F.conv_transpose2d(k, layer.weight.transpose(0, 1))
        return k[0, 0]


def init_downsampler(scale: int, rng: np.random.Generator,
                     init_std: float = 0.05) -> LinearDownsampler:
    """Delta plus small Gaussian perturbation, so the stack starts near-identity."""
    net = LinearDownsampler(scale)
    with torch.no_grad():
        for layer in net.layers:
            k = layer.weight.shape[-1]
            w = rng.normal(0.0, init_std, size=(k, k))
            w[k // 2, k // 2] += 1.0
            layer.weight.copy_(torch.from_numpy(w)[None, None])
    return net


def apply_downsampler(net: LinearDownsampler, img: np.ndarray) -> np.ndarray:
    """Run the stack on an (H, W, 3) image; output is not clamped."""
    from .imaging import to_tensor
    with torch.no_grad():
        out = net(to_tensor(img))
    return out[0].numpy().transpose(1, 2, 0)


def extract_kernel(net: LinearDownsampler) -> tuple[Kernel, np.ndarray]:
    """Return the normalized explicit kernel plus the raw composed weights."""
    raw = net.composed_kernel().detach().numpy()
    return Kernel(raw / raw.sum()), raw


def kernel_penalties(net: LinearDownsampler,
                     w_sum: float = 0.5, w_boundary: float = 0.5,
                     w_centroid: float = 1.0) -> torch.Tensor:
    """Structural regularization on the raw composed kernel.

    Penalizes mass drift from 1, mass on the outer two rings, and
    squared centroid offset from the center tap.
    """
    k = net.composed_kernel()
    size = k.shape[0]
    total = k.sum()
    sum_term = (total - 1.0) ** 2

    mask = torch.ones(size, size, dtype=k.dtype)
    mask[2:-2, 2:-2] = 0.0
    boundary_term = (k.abs() * mask).sum()

    mag = k.abs()
    mass = mag.sum() + 1e-12
    coords = torch.arange(size, dtype=k.dtype) - (size - 1) / 2.0
    cy = (mag.sum(dim=1) * coords).sum() / mass
    cx = (mag.sum(dim=0) * coords).sum() / mass
    centroid_term = cy ** 2 + cx ** 2

    return w_sum * sum_term + w_boundary * boundary_term + w_centroid * centroid_term


class FixedKernelDownsampler(nn.Module):
    """Known-kernel downsampler used by the ground-truth-kernel ablation.

    Same valid-convolution geometry as LinearDownsampler (kernels
    smaller than 13x13 are zero-embedded at the center) but with frozen
    weights and no structural penalties.
    """

    def __init__(self, kernel: Kernel, scale: int):
        super().__init__()
        size = max(kernel.size, RECEPTIVE_FIELD)
        w = np.zeros((size, size))
        off = (size - kernel.size) // 2
        w[off:off + kernel.size, off:off + kernel.size] = kernel.weights
        self.register_buffer("weight", torch.from_numpy(w)[None, None])
        self.scale = scale
        self.margin = (size - 1) // 2

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        y = F.conv2d(x.reshape(b * c, 1, h, w), self.weight, stride=self.scale)
        return y.reshape(b, c, y.shape[-2], y.shape[-1])


def downsample_aligned(net, hr: torch.Tensor) -> tuple[torch.Tensor, int]:
    """Downsample so output pixel m maps to LR grid index m + offset.

    `hr` is assumed to sit on the s-times-upsampled grid of some LR
    image under the phase-0 convention (LR pixel n covers HR rows/cols
    [n*s, n*s + s)). The valid convolution shifts centers by `margin`
    HR pixels, so the input is pre-shifted to land the strided samples
    back on exact LR positions. Returns (lr_pred, offset) with
    lr_pred[..., m, m'] aligned to LR index (m + offset, m' + offset).
    """
    s, margin = net.scale, net.margin
    q = (-margin) % s
    out = net(hr[..., q:, q:])
    return out, (q + margin) // s


def save_downsampler(net: LinearDownsampler, path) -> None:
    tensors = {f"layer{i}": layer.weight for i, layer in enumerate(net.layers)}
    tensors["scale"] = torch.tensor([float(net.scale)])
    checkpoint.save_checkpoint(path, checkpoint.TAG_DOWNSAMPLER, tensors)


def load_downsampler(path) -> LinearDownsampler:
    tensors = checkpoint.load_checkpoint(path, checkpoint.TAG_DOWNSAMPLER)
    net = LinearDownsampler(int(tensors["scale"].item()))
    with torch.no_grad():
        for i, layer in enumerate(net.layers):
            layer.weight.copy_(tensors[f"layer{i}"])
    return net
