"""Trainer-level tests: config handling, run bookkeeping, determinism,
checkpoint acceptance logic, and report directory layout."""
import csv
from dataclasses import replace

import numpy as np
import pytest
import torch

from rdsr.degradation import GaussianSpec, make_anisotropic_gaussian
from rdsr.downsampler import LinearDownsampler
from rdsr.losses import LossWeights
from rdsr.networks import Baseline, DegradationEncoder, Upscaler
from rdsr.trainer import (PROFILES, RunReport, TrainConfig, config_items,
                          evaluate_checkpoint, initial_phase, make_config,
                          run_rdsr, run_with_gt_kernel)


def tiny_config(**overrides):
    kwargs = dict(iters_initial=4, iters_per_ref=2, eval_every=2, n_refs=1)
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


@pytest.fixture(scope="module")
def baseline():
    rng = np.random.default_rng(5)
    up = Upscaler(2, rng)
    enc = DegradationEncoder(rng)
    return Baseline(up, enc, 2)


@pytest.fixture(scope="module")
def lr_image():
    return np.random.default_rng(11).uniform(0, 1, (48, 48, 3))


@pytest.fixture(scope="module")
def ref_image():
    return np.random.default_rng(12).uniform(0, 1, (96, 96, 3))


# ---------------------------------------------------------------- config

def test_profiles_paper_and_desk():
    assert PROFILES["paper"] == dict(iters_initial=3000, iters_per_ref=500,
                                     eval_every=50)
    assert PROFILES["desk"] == dict(iters_initial=300, iters_per_ref=100,
                                    eval_every=50)


def test_make_config_applies_profile_and_overrides():
    cfg = make_config("desk", seed=7, n_refs=5)
    assert cfg.iters_initial == 300 and cfg.iters_per_ref == 100
    assert cfg.seed == 7 and cfg.n_refs == 5
    assert make_config("paper").iters_initial == 3000


def test_make_config_rejects_unknown_profile():
    with pytest.raises(ValueError):
        make_config("nope")


@pytest.mark.parametrize("name", ["lr_gdn", "lr_gup", "lr_enc", "lr_disc",
                                  "lr_pretrain"])
def test_config_rejects_nonpositive_learning_rates(name):
    with pytest.raises(ValueError):
        TrainConfig(**{name: 0.0})


def test_config_requires_eval_divides_iters_per_ref():
    with pytest.raises(ValueError):
        TrainConfig(iters_per_ref=70, eval_every=50)
    TrainConfig(iters_per_ref=0, eval_every=50)  # zero fine-tune is allowed


def test_config_items_flatten_weights():
    items = dict(config_items(TrainConfig()))
    assert items["scale"] == "2"
    assert "weights.lambda_gan" in items
    assert "weights" not in items
    # every value is a parseable repr
    for v in items.values():
        eval(v)


# ---------------------------------------------------------------- initial phase

def test_initial_phase_rejects_small_images(baseline):
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="48x48"):
        initial_phase(np.zeros((32, 48, 3)), baseline, tiny_config(), rng)


def test_initial_phase_bookkeeping(baseline, lr_image):
    cfg = tiny_config()
    state = initial_phase(lr_image, baseline, cfg, np.random.default_rng(3))
    assert state.iteration == cfg.iters_initial
    assert len(state.trace) == cfg.iters_initial
    assert state.trace[0]["phase"] == "initial"
    # snapshots: one at iteration 0, one after fitting
    assert [it for it, _ in state.kernel_snapshots] == [0, cfg.iters_initial]
    assert state.initial_sr.shape == (96, 96, 3)
    assert np.array_equal(state.best_output, state.initial_sr)
    assert not state.best_changed
    assert np.isfinite(state.initial_nr)


def test_initial_phase_with_gt_kernel_skips_fitting(baseline, lr_image):
    k = make_anisotropic_gaussian(GaussianSpec(1.0, 0.7, 0.3))
    state = initial_phase(lr_image, baseline, tiny_config(),
                          np.random.default_rng(3), gt_kernel=k)
    assert state.iteration == 0
    assert state.trace == []
    snap = state.current_kernel()
    pad = (snap.shape[0] - 11) // 2
    np.testing.assert_allclose(snap[pad:pad + 11, pad:pad + 11], k.weights)
    assert abs(snap.sum() - 1.0) < 1e-12


# ---------------------------------------------------------------- checkpoint gate

def test_checkpoint_rejected_when_nr_bar_unreachable(baseline, lr_image):
    state = initial_phase(lr_image, baseline, tiny_config(),
                          np.random.default_rng(3))
    state.initial_nr = -np.inf          # nothing can beat the initial output
    before = state.best_output.copy()
    evaluate_checkpoint(state, lr_image, tiny_config())
    assert not state.best_changed
    assert np.array_equal(state.best_output, before)
    assert state.criteria_history[-1][3] is False or state.criteria_history[-1][3] == 0


def test_checkpoint_accepted_when_both_criteria_improve(baseline, lr_image):
    state = initial_phase(lr_image, baseline, tiny_config(),
                          np.random.default_rng(3))
    state.initial_nr = np.inf
    state.best_criteria = (np.inf, np.inf)
    evaluate_checkpoint(state, lr_image, tiny_config())
    it, cyc, nr, acc = state.criteria_history[-1]
    assert acc and state.best_changed
    assert state.best_criteria == (cyc, nr)


# ---------------------------------------------------------------- full runs

def test_run_requires_matching_scale(baseline, lr_image, ref_image):
    cfg = tiny_config(scale=4)
    with pytest.raises(ValueError, match="scale"):
        run_rdsr(lr_image, None, cfg, baseline, ref_paths=[ref_image])


def test_run_requires_references(baseline, lr_image):
    with pytest.raises(ValueError, match="empty reference"):
        run_rdsr(lr_image, None, tiny_config(), baseline, ref_paths=[])


def test_run_iteration_counts(baseline, lr_image, ref_image):
    cfg = tiny_config()
    sr, report = run_rdsr(lr_image, None, cfg, baseline,
                          ref_paths=[ref_image, ref_image])
    assert report.iterations == cfg.iters_initial + 2 * cfg.iters_per_ref
    assert sr.shape == (96, 96, 3)
    n_evals = 2 * cfg.iters_per_ref // cfg.eval_every
    # +1 for the post-initial-phase baseline entry
    assert len(report.criteria_history) == n_evals + 1
    phases = {row["phase"] for row in report.trace}
    assert phases == {"initial", "finetune"}


def test_run_zero_finetune_returns_initial_sr(baseline, lr_image, ref_image):
    cfg = tiny_config(iters_per_ref=0)
    sr, report = run_rdsr(lr_image, None, cfg, baseline, ref_paths=[ref_image])
    assert np.array_equal(sr, report.initial_sr)
    assert not report.output_changed
    assert report.iterations == cfg.iters_initial


def test_run_is_deterministic(baseline, lr_image, ref_image):
    cfg = tiny_config(seed=21)
    sr1, rep1 = run_rdsr(lr_image, None, cfg, baseline, ref_paths=[ref_image])
    sr2, rep2 = run_rdsr(lr_image, None, cfg, baseline, ref_paths=[ref_image])
    assert np.array_equal(sr1, sr2)
    assert rep1.trace == rep2.trace
    assert rep1.criteria_history == rep2.criteria_history
    for (i1, k1), (i2, k2) in zip(rep1.kernel_snapshots, rep2.kernel_snapshots):
        assert i1 == i2 and np.array_equal(k1, k2)


def test_run_seed_changes_trace(baseline, lr_image, ref_image):
    _, rep1 = run_rdsr(lr_image, None, tiny_config(seed=1), baseline,
                       ref_paths=[ref_image])
    _, rep2 = run_rdsr(lr_image, None, tiny_config(seed=2), baseline,
                       ref_paths=[ref_image])
    assert rep1.trace != rep2.trace


def test_gt_kernel_run_uses_fixed_downsampler(baseline, lr_image, ref_image):
    k = make_anisotropic_gaussian(GaussianSpec(1.2, 0.8, 0.5))
    cfg = tiny_config()
    sr, report = run_rdsr(lr_image, None, cfg, baseline,
                          ref_paths=[ref_image], gt_kernel=k)
    assert report.iterations == cfg.iters_per_ref
    for _, snap in report.kernel_snapshots:
        pad = (snap.shape[0] - 11) // 2
        np.testing.assert_allclose(snap[pad:pad + 11, pad:pad + 11], k.weights)


# ---------------------------------------------------------------- report layout

def test_write_report_layout(baseline, lr_image, ref_image, tmp_path):
    cfg = tiny_config(seed=3)
    out = tmp_path / "rep"
    sr, report = run_rdsr(lr_image, None, cfg, baseline,
                          ref_paths=[ref_image], report_dir=out)
    for name in ("report.csv", "output.png", "initial_sr.png", "config.txt",
                 "timing.txt", "criteria.csv"):
        assert (out / name).is_file(), name
    assert (out / "checkpoints" / "g_dn.ckpt").is_file()
    assert (out / "checkpoints" / "g_up.ckpt").is_file()

    with open(out / "report.csv", newline="") as f:
        rows = list(csv.DictReader(f))
    assert len(rows) == report.iterations
    assert rows[0]["phase"] == "initial" and rows[-1]["phase"] == "finetune"
    assert float(rows[0]["charb_dn"]) == report.trace[0]["charb_dn"]

    snaps = sorted((out / "kernels").glob("iter_*.txt"))
    assert len(snaps) == len(report.kernel_snapshots)
    k_last = np.loadtxt(snaps[-1], skiprows=1)
    np.testing.assert_allclose(k_last, report.kernel_snapshots[-1][1],
                               atol=1e-15)

    config_text = (out / "config.txt").read_text()
    assert "seed=3" in config_text
    assert "weights.lambda_gan=" in config_text

    with open(out / "criteria.csv", newline="") as f:
        crit = list(csv.DictReader(f))
    assert len(crit) == len(report.criteria_history)
    assert crit[0]["accepted"] == "0"
