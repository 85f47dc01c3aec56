"""Deep linear downsampler: kernel collapse, penalties, alignment, I/O."""
import numpy as np
import pytest
import torch
from scipy import signal

from rdsr.degradation import (GaussianSpec, Kernel, delta_kernel,
                              make_anisotropic_gaussian)
from rdsr.downsampler import (LAYER_SIZES, MARGIN, RECEPTIVE_FIELD,
                              FixedKernelDownsampler, LinearDownsampler,
                              apply_downsampler, downsample_aligned,
                              extract_kernel, init_downsampler,
                              kernel_penalties, load_downsampler,
                              save_downsampler)
from rdsr.imaging import to_tensor


def oracle_downsample(img, raw_kernel, scale):
    """Brute-force reference: per-channel valid convolution + stride."""
    out = np.stack([signal.convolve2d(img[..., c], raw_kernel[::-1, ::-1],
                                      mode="valid")
                    for c in range(3)], axis=-1)
    return out[::scale, ::scale]


def test_architecture_constants():
    assert LAYER_SIZES == (7, 5, 3, 1, 1)
    assert RECEPTIVE_FIELD == 13
    assert MARGIN == 6
    net = LinearDownsampler(2)
    assert len(net.layers) == 5
    assert net.layers[-1].stride == (2, 2)
    for layer in net.layers[:-1]:
        assert layer.stride == (1, 1)


def test_unsupported_scale_rejected():
    with pytest.raises(ValueError):
        LinearDownsampler(3)


def test_zero_perturbation_gives_exact_delta():
    net = init_downsampler(2, np.random.default_rng(0), init_std=0.0)
    kernel, raw = extract_kernel(net)
    want = np.zeros((13, 13))
    want[6, 6] = 1.0
    assert np.abs(raw - want).max() < 1e-15
    assert np.abs(kernel.weights - want).max() < 1e-15


def test_init_deterministic_per_seed():
    a = init_downsampler(2, np.random.default_rng(4))
    b = init_downsampler(2, np.random.default_rng(4))
    for la, lb in zip(a.layers, b.layers):
        assert torch.equal(la.weight, lb.weight)


def test_init_kernel_center_dominates():
    net = init_downsampler(2, np.random.default_rng(1), init_std=0.05)
    kernel, _ = extract_kernel(net)
    assert kernel.weights[6, 6] > 0.5


def test_delta_network_subsamples(rng):
    net = init_downsampler(2, rng, init_std=0.0)
    img = rng.uniform(0, 1, (32, 32, 3))
    out = apply_downsampler(net, img)
    assert np.abs(out - img[6:-6:2, 6:-6:2]).max() < 1e-12


def test_network_is_linear(rng):
    net = init_downsampler(2, rng)
    a = rng.uniform(0, 1, (26, 26, 3))
    b = rng.uniform(0, 1, (26, 26, 3))
    lhs = apply_downsampler(net, 0.3 * a + 0.7 * b)
    rhs = 0.3 * apply_downsampler(net, a) + 0.7 * apply_downsampler(net, b)
    assert np.abs(lhs - rhs).max() < 1e-6


@pytest.mark.parametrize("scale", [1, 2, 4])
def test_collapse_equivalence(scale, rng):
    net = init_downsampler(scale, rng)
    _, raw = extract_kernel(net)
    img = rng.uniform(0, 1, (64, 64, 3))
    got = apply_downsampler(net, img)
    want = oracle_downsample(img, raw, scale)
    rms = np.sqrt(np.mean((got - want) ** 2))
    assert rms < 1e-5


def test_extracted_kernel_size_fixed(rng):
    for scale in (1, 2, 4):
        kernel, raw = extract_kernel(init_downsampler(scale, rng))
        assert raw.shape == (13, 13)
        assert kernel.size == 13


def test_single_nontrivial_layer_pads_to_13():
    net = init_downsampler(2, np.random.default_rng(0), init_std=0.0)
    box = torch.ones(1, 1, 7, 7, dtype=torch.float64) / 49.0
    with torch.no_grad():
        net.layers[0].weight.copy_(box)
    _, raw = extract_kernel(net)
    want = np.zeros((13, 13))
    want[3:10, 3:10] = 1.0 / 49.0
    assert np.abs(raw - want).max() < 1e-15


def test_input_below_receptive_field_rejected(rng):
    net = init_downsampler(2, rng)
    with pytest.raises(ValueError):
        apply_downsampler(net, rng.uniform(0, 1, (12, 12, 3)))


def test_penalty_zero_for_centered_delta():
    net = init_downsampler(2, np.random.default_rng(0), init_std=0.0)
    assert kernel_penalties(net).item() == 0.0


def test_penalty_sum_term():
    net = init_downsampler(2, np.random.default_rng(0), init_std=0.0)
    with torch.no_grad():
        net.layers[3].weight.mul_(2.0)   # kernel mass becomes 2
    pen = kernel_penalties(net, w_sum=0.5, w_boundary=0.0,
                                 w_centroid=0.0).item()
    assert abs(pen - 0.5 * (2.0 - 1.0) ** 2) < 1e-12


def test_penalty_centroid_term_for_shifted_kernel():
    net = init_downsampler(2, np.random.default_rng(0), init_std=0.0)
    with torch.no_grad():
        w = torch.zeros(1, 1, 7, 7, dtype=torch.float64)
        w[0, 0, 3, 4] = 1.0   # one tap to the right of center
        net.layers[0].weight.copy_(w)
    pen = kernel_penalties(net, w_sum=0.0, w_boundary=0.0,
                                 w_centroid=1.0).item()
    assert pen > 0.0


def test_penalty_boundary_term():
    net = init_downsampler(2, np.random.default_rng(0), init_std=0.0)
    pen0 = kernel_penalties(net, w_sum=0.0, w_boundary=1.0,
                                  w_centroid=0.0).item()
    assert pen0 == 0.0
    # a wide uniform layer pushes mass onto the outer rings
    with torch.no_grad():
        net.layers[0].weight.copy_(torch.ones(1, 1, 7, 7,
                                              dtype=torch.float64) / 49.0)
        net.layers[1].weight.copy_(torch.ones(1, 1, 5, 5,
                                              dtype=torch.float64) / 25.0)
    pen1 = kernel_penalties(net, w_sum=0.0, w_boundary=1.0,
                                  w_centroid=0.0).item()
    assert pen1 > 0.0


def test_layer_gradients_match_finite_differences(rng):
    net = init_downsampler(2, rng)
    img = to_tensor(rng.uniform(0, 1, (16, 16, 3)))
    loss = net(img).square().mean()
    loss.backward()
    h = 1e-4
    for layer in net.layers:
        w = layer.weight
        idx = tuple(int(v) for v in
                    rng.integers(0, np.array(w.shape)))
        with torch.no_grad():
            w[idx] += h
            up = float(net(img).square().mean())
            w[idx] -= 2 * h
            dn = float(net(img).square().mean())
            w[idx] += h
        fd = (up - dn) / (2 * h)
        an = float(w.grad[idx])
        assert abs(an - fd) <= 1e-3 * max(abs(fd), 1e-8)


def test_fixed_kernel_downsampler_matches_oracle(rng):
    k = make_anisotropic_gaussian(GaussianSpec(1.5, 0.8, 0.4))
    net = FixedKernelDownsampler(k, 2)
    img = rng.uniform(0, 1, (40, 40, 3))
    out = net(to_tensor(img))[0].numpy().transpose(1, 2, 0)
    raw = np.zeros((13, 13))
    raw[1:12, 1:12] = k.weights
    want = oracle_downsample(img, raw, 2)
    assert np.abs(out - want).max() < 1e-12
    assert not any(p.requires_grad for p in net.parameters())


@pytest.mark.parametrize("scale", [1, 2, 4])
def test_aligned_downsampling_lands_on_lr_grid(scale, rng):
    """A ground-truth downsampler applied via the aligned path must
    reproduce the true LR image shifted by the returned offset."""
    from rdsr.degradation import DegradationConfig, degrade
    k = make_anisotropic_gaussian(GaussianSpec(1.2, 0.9, 0.3))
    hr = rng.uniform(0, 1, (64, 64, 3))
    lr = degrade(hr, DegradationConfig(scale, k))
    net = FixedKernelDownsampler(k, scale)
    pred, off = downsample_aligned(net, to_tensor(hr))
    pred = pred[0].numpy().transpose(1, 2, 0)
    ph, pw = pred.shape[:2]
    target = lr[off:off + ph, off:off + pw]
    # interior pixels agree exactly (borders differ by reflect padding)
    assert np.abs(pred[2:-2, 2:-2] - target[2:-2, 2:-2]).max() < 1e-10


def test_downsampler_checkpoint_round_trip(tmp_path, rng):
    net = init_downsampler(4, rng)
    save_downsampler(net, tmp_path / "g.ckpt")
    back = load_downsampler(tmp_path / "g.ckpt")
    assert back.scale == 4
    for la, lb in zip(net.layers, back.layers):
        assert torch.equal(la.weight, lb.weight)
