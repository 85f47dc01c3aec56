"""Command-line entry point: dataset synthesis, baseline pretraining,
per-image runs, metric evaluation, ablation sweeps and report plotting.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .degradation import (KernelRanges, load_kernel, read_manifest,
                          synthesize_dataset)
from .imaging import load_image
from .losses import LossWeights
from .metrics import metric_report
from .networks import load_baseline, pretrain_baseline_upscaler, save_baseline
from .trainer import config_items, make_config, run_rdsr, run_with_gt_kernel

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class DataError(Exception):
    pass


class NumericalError(Exception):
    pass


def _resolve_seed(args) -> int:
    env = os.environ.get("RDSR_SEED")
    return int(env) if env else args.seed


def _write_run_manifest(out_dir: Path, command: str, args, cfg=None) -> None:
    """Flat key=value manifest, written before any computation starts."""
    out_dir.mkdir(parents=True, exist_ok=True)
    lines = [f"command={command}", f"toolkit_version={__version__}"]
    for key, value in sorted(vars(args).items()):
        if key in ("func", "seed"):
            continue
        lines.append(f"arg.{key}={value}")
    lines.append(f"seed={_resolve_seed(args)}")
    if cfg is not None:
        lines.extend(f"config.{k}={v}" for k, v in config_items(cfg))
    (out_dir / "run_manifest.txt").write_text("\n".join(lines) + "\n")


def _config_from_args(args, **extra):
    overrides = dict(seed=_resolve_seed(args), **extra)
    for name in ("scale", "n_refs", "policy", "iters_initial", "iters_per_ref",
                 "eval_every", "patch_lr"):
        v = getattr(args, name, None)
        if v is not None:
            overrides[name] = v
    return make_config(args.profile, **overrides)


def cmd_synth(args) -> int:
    out_dir = Path(args.out)
    _write_run_manifest(out_dir, "synth", args)
    ranges = KernelRanges(scale=args.scale, sigma_min=args.sigma_min,
                          sigma_max=args.sigma_max, noise_sigma=args.noise_sigma,
                          isotropic=args.isotropic, fixed_sigma=args.fixed_sigma)
    rng = np.random.default_rng(_resolve_seed(args))
    manifest = synthesize_dataset(args.hr_dir, args.n, ranges, rng, out_dir)
    print(f"wrote {manifest}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    out_dir = Path(args.out)
    cfg = _config_from_args(args, iters_pretrain=args.iters)
    _write_run_manifest(out_dir, "pretrain", args, cfg)
    rows = read_manifest(args.manifest)
    if not rows:
        raise DataError(f"empty manifest {args.manifest}")
    rng = np.random.default_rng(_resolve_seed(args))
    baseline, trace = pretrain_baseline_upscaler(rows, cfg, rng, log=print)
    ckpt = out_dir / "baseline.ckpt"
    save_baseline(baseline, ckpt)
    with open(out_dir / "pretrain_trace.csv", "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["evaluation", "val_psnr_y"])
        writer.writerows((i, repr(v)) for i, v in enumerate(trace))
    print(f"wrote {ckpt} (final val PSNR-Y "
          f"{trace[-1]:.4f} dB)" if trace else f"wrote {ckpt}")
    return EXIT_OK


def cmd_run(args) -> int:
    out_dir = Path(args.out)
    cfg = _config_from_args(args)
    _write_run_manifest(out_dir, "run", args, cfg)
    x_lr = load_image(args.lr)
    baseline = load_baseline(args.baseline)
    if args.gt_kernel:
        kernel = load_kernel(args.gt_kernel)
        sr, report = run_with_gt_kernel(x_lr, kernel, args.refs_dir, cfg,
                                        baseline, report_dir=out_dir)
    else:
        sr, report = run_rdsr(x_lr, args.refs_dir, cfg, baseline,
                              report_dir=out_dir)
    if not np.isfinite(sr).all():
        raise NumericalError("non-finite samples in the final output")
    from .plots import render_report_figures
    render_report_figures(out_dir)
    print(f"iterations={report.iterations} changed={report.output_changed} "
          f"wall_time={report.wall_time:.1f}s")
    print(f"wrote {out_dir / 'output.png'}")
    return EXIT_OK


def _format_metric(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.4f}"


def cmd_eval(args) -> int:
    out_dir = Path(args.out)
    _write_run_manifest(out_dir, "eval", args)
    with open(args.pairs, newline="") as f:
        rows = list(csv.DictReader(f))
    results = []
    for row in rows:
        sr = load_image(row["path_sr"])
        gt = load_image(row["path_gt"])
        rep = metric_report(sr, gt)
        results.append({"image_id": row.get("image_id", row["path_sr"]),
                        "method": row.get("method", "rdsr"),
                        "scale": row.get("scale", ""),
                        "psnr_y": rep.psnr_y, "ssim": rep.ssim,
                        "nr_score": rep.nr_score})
    metrics_csv = out_dir / "metrics.csv"
    with open(metrics_csv, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["image_id", "psnr_y", "ssim", "nr_score"])
        for r in results:
            writer.writerow([r["image_id"], _format_metric(r["psnr_y"]),
                             _format_metric(r["ssim"]),
                             _format_metric(r["nr_score"])])
    # summary table, one row per (method, scale)
    groups: dict[tuple, list] = {}
    for r in results:
        groups.setdefault((r["method"], r["scale"]), []).append(r)
    lines = [f"{'method':<24} {'scale':<6} {'PSNR-Y':>8} {'SSIM':>8}"]
    for (method, scale), rs in sorted(groups.items()):
        mean_psnr = float(np.mean([x["psnr_y"] for x in rs]))
        mean_ssim = float(np.mean([x["ssim"] for x in rs]))
        lines.append(f"{method:<24} {str(scale):<6} "
                     f"{_format_metric(mean_psnr):>8} {mean_ssim:>8.4f}")
    summary = "\n".join(lines)
    (out_dir / "summary.txt").write_text(summary + "\n")
    print(summary)
    return EXIT_OK


ABLATION_CELLS = {
    "policy": [("policy", p) for p in ("auto", "random", "reverse")],
    "nrefs": [("n_refs", n) for n in (1, 3, 5)],
    "losses": [("losses", t) for t in ("full", "no_gan", "no_reg")],
}


def cmd_ablate(args) -> int:
    out_dir = Path(args.out)
    cfg0 = _config_from_args(args)
    _write_run_manifest(out_dir, "ablate", args, cfg0)
    x_lr = load_image(args.lr)
    gt = load_image(args.gt) if args.gt else None
    baseline = load_baseline(args.baseline)
    cells = ABLATION_CELLS[args.sweep]
    rows = []
    for i, (knob, value) in enumerate(cells):
        if knob == "policy":
            cfg = _config_from_args(args)
            cfg.policy = value
        elif knob == "n_refs":
            cfg = _config_from_args(args, n_refs=value)
        else:
            w = LossWeights(lambda_gan=0.0 if value == "no_gan" else 1.0,
                            lambda_reg=0.0 if value == "no_reg" else 20.0)
            cfg = _config_from_args(args, weights=w)
        sr, report = run_rdsr(x_lr, args.refs_dir, cfg, baseline,
                              report_dir=out_dir / f"cell_{i:02d}")
        row = {"cell": f"{knob}={value}", "iterations": report.iterations,
               "changed": int(report.output_changed)}
        if gt is not None:
            rep = metric_report(sr, gt)
            row["psnr_y"] = _format_metric(rep.psnr_y)
            row["ssim"] = _format_metric(rep.ssim)
        rows.append(row)
        print(row)
    fieldnames = ["cell", "iterations", "changed"] + (
        ["psnr_y", "ssim"] if gt is not None else [])
    with open(out_dir / "ablation.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    return EXIT_OK


def cmd_plot(args) -> int:
    from .plots import render_report_figures
    report_dir = Path(args.report)
    if not (report_dir / "report.csv").exists():
        raise DataError(f"no report.csv in {report_dir}")
    for path in render_report_figures(report_dir):
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rdsr")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, out_required=True):
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--seed", type=int, default=0,
                       help="base seed (env RDSR_SEED overrides)")

    p = sub.add_parser("synth", help="synthesize a degraded LR/HR dataset")
    p.add_argument("--hr-dir", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--scale", type=int, default=2, choices=(1, 2, 4))
    p.add_argument("--sigma-min", type=float, default=0.6)
    p.add_argument("--sigma-max", type=float, default=2.5)
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--isotropic", action="store_true")
    p.add_argument("--fixed-sigma", type=float, default=None)
    add_common(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("pretrain", help="pretrain the toy baseline upscaler")
    p.add_argument("--manifest", required=True)
    p.add_argument("--profile", default="desk", choices=("paper", "desk"))
    p.add_argument("--scale", type=int, default=None)
    p.add_argument("--iters", type=int, default=4000)
    add_common(p)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("run", help="run the per-image procedure on one LR image")
    p.add_argument("--lr", required=True)
    p.add_argument("--refs-dir", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--n-refs", dest="n_refs", type=int, default=3)
    p.add_argument("--policy", default="auto",
                   choices=("auto", "random", "reverse"))
    p.add_argument("--profile", default="desk", choices=("paper", "desk"))
    p.add_argument("--scale", type=int, default=None)
    p.add_argument("--gt-kernel", default=None,
                   help="kernel text file; replaces the learned downsampler")
    add_common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="compute metrics for SR/GT pairs")
    p.add_argument("--pairs", required=True,
                   help="CSV with path_sr, path_gt[, image_id, method, scale]")
    add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep a single ablation axis")
    p.add_argument("--lr", required=True)
    p.add_argument("--gt", default=None)
    p.add_argument("--refs-dir", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--sweep", required=True, choices=tuple(ABLATION_CELLS))
    p.add_argument("--profile", default="desk", choices=("paper", "desk"))
    p.add_argument("--scale", type=int, default=None)
    add_common(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="render figures for an existing report")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, FileNotFoundError, NotADirectoryError, PermissionError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
