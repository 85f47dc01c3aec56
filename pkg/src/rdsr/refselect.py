"""Reference ranking: order an HR collection by RGB-mean MSE against the
target LR image, with auto / random / reverse selection policies.
"""
from __future__ import annotations

import csv
import hashlib
import logging
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imaging import load_image, mean_rgb

log = logging.getLogger(__name__)

POLICIES = ("auto", "random", "reverse")


@dataclass(frozen=True)
class RefCandidate:
    path: Path
    mean_rgb: tuple[float, float, float]
    mse: float


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _load_cache(cache_path: Path) -> dict[str, tuple[str, np.ndarray]]:
    cache = {}
    if cache_path.exists():
        with open(cache_path, newline="") as f:
            for row in csv.DictReader(f):
                cache[row["path"]] = (row["sha256"], np.array(
                    [float(row["mean_r"]), float(row["mean_g"]), float(row["mean_b"])]))
    return cache


def collection_means(collection, cache_path=None) -> list[tuple[Path, np.ndarray]]:
    """Per-candidate channel means, optionally cached by file hash."""
    paths = sorted(Path(collection).glob("*.png"))
    cache = _load_cache(Path(cache_path)) if cache_path else {}
    out, rows = [], []
    for p in paths:
        digest = _sha256(p) if cache_path else None
        hit = cache.get(str(p))
        if hit and hit[0] == digest:
            mean = hit[1]
        else:
            try:
                mean = mean_rgb(load_image(p))
            except Exception as exc:
                warnings.warn(f"skipping undecodable reference {p}: {exc}")
                continue
        out.append((p, mean))
        if cache_path:
            rows.append([str(p), digest, *(f"{v:.17g}" for v in mean)])
    if cache_path and rows:
        with open(cache_path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["path", "sha256", "mean_r", "mean_g", "mean_b"])
            writer.writerows(rows)
    return out


def rank_references(x_lr: np.ndarray, collection, cache_path=None) -> list[RefCandidate]:
    """Sort the collection by squared distance of channel means, ascending.

    Ties break on lexicographic path so the ranking is reproducible.
    """
    target = mean_rgb(x_lr)
    means = collection_means(collection, cache_path)
    if not means:
        raise ValueError(f"no decodable PNG references in {collection}")
    candidates = [
        RefCandidate(path=p, mean_rgb=tuple(m), mse=float(np.sum((target - m) ** 2)))
        for p, m in means
    ]
    candidates.sort(key=lambda c: (c.mse, str(c.path)))
    return candidates


def select_references(x_lr: np.ndarray, collection, n: int, policy: str,
                      rng: np.random.Generator | None = None,
                      cache_path=None) -> list[Path]:
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}, expected one of {POLICIES}")
    ranked = rank_references(x_lr, collection, cache_path)
    if n > len(ranked):
        raise ValueError(f"requested {n} references, collection has {len(ranked)}")
    if policy == "auto":
        chosen = ranked[:n]
    elif policy == "reverse":
        chosen = ranked[-n:][::-1]
    else:
        if rng is None:
            raise ValueError("random policy requires an rng")
        idx = rng.choice(len(ranked), size=n, replace=False)
        chosen = [ranked[int(i)] for i in idx]
    return [c.path for c in chosen]
