"""Distribution-gap metrics between point sets and feature matrices.

All four estimators take ``(n, D)`` arrays:

* :func:`chamfer` - mean nearest-neighbour distance, summed over both directions
* :func:`mmd_rbf` - biased (V-statistic) squared MMD with an RBF kernel
* :func:`emd` - optimal-assignment transport cost, or entropic OT when sizes differ
* :func:`frechet` - Frechet distance between Gaussian fits
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist
from scipy.special import logsumexp

from .errors import ValidationError

EXACT_EMD_MAX = 2048
SINKHORN_MAX_ITER = 1000
SINKHORN_TOL = 1e-6
SINKHORN_EPS_FRACTION = 0.05
MEDIAN_MAX_POINTS = 4096
PROJECTION_POINTS = 256
_KDTREE_MAX_DIM = 16


def as_point_set(x, name: str = "points") -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValidationError(f"{name}: expected a non-empty (n, D) array")
    if not np.all(np.isfinite(a)):
        raise ValidationError(f"{name}: values must be finite")
    return a


def _pair(x, y):
    x = as_point_set(x, "x")
    y = as_point_set(y, "y")
    if x.shape[1] != y.shape[1]:
        raise ValidationError(f"dimension mismatch: {x.shape[1]} vs {y.shape[1]}")
    return x, y


def _nn_distances(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    if src.shape[1] <= _KDTREE_MAX_DIM:
        return cKDTree(dst).query(src, k=1)[0]
    out = np.empty(len(src))
    step = max(1, 2**22 // max(1, len(dst)))
    for i in range(0, len(src), step):
        out[i:i + step] = cdist(src[i:i + step], dst).min(axis=1)
    return out


def chamfer(a, b) -> float:
    a, b = _pair(a, b)
    return float(_nn_distances(a, b).mean() + _nn_distances(b, a).mean())


def median_heuristic(x, y) -> float:
    """Median pairwise Euclidean distance over the pooled sample.

    Pools larger than ``MEDIAN_MAX_POINTS`` are thinned to evenly spaced rows.
    """
    pooled = np.concatenate([x, y])
    if len(pooled) > MEDIAN_MAX_POINTS:
        pooled = pooled[np.linspace(0, len(pooled) - 1, MEDIAN_MAX_POINTS).astype(np.int64)]
    if len(pooled) < 2:
        return 0.0
    return float(np.median(pdist(pooled)))


def _rbf_sum(a, b, gamma) -> float:
    return float(np.exp(-gamma * cdist(a, b, "sqeuclidean")).sum())


def mmd_rbf(x, y, bandwidth: Union[float, str, None] = "auto") -> float:
    """Squared MMD (biased V-statistic) with ``k(u, v) = exp(-|u-v|^2 / 2 sigma^2)``.

    ``bandwidth`` is sigma, or ``"auto"``/None for the median heuristic. With
    the heuristic, a zero median (every point identical) yields 0.
    """
    value, _ = mmd_rbf_with_bandwidth(x, y, bandwidth)
    return value


def mmd_rbf_with_bandwidth(x, y, bandwidth: Union[float, str, None] = "auto"):
    x, y = _pair(x, y)
    if bandwidth is None or bandwidth == "auto":
        sigma = median_heuristic(x, y)
        if sigma == 0.0:
            return 0.0, 0.0
    else:
        sigma = float(bandwidth)
        if not sigma > 0:
            raise ValidationError("bandwidth must be positive")
    gamma = 1.0 / (2.0 * sigma * sigma)
    n, m = len(x), len(y)
    value = (_rbf_sum(x, x, gamma) / (n * n) + _rbf_sum(y, y, gamma) / (m * m)
             - 2.0 * _rbf_sum(x, y, gamma) / (n * m))
    return max(value, 0.0), sigma


def sinkhorn_cost(x, y, reg: Optional[float] = None, max_iter: int = SINKHORN_MAX_ITER,
                  tol: float = SINKHORN_TOL):
    """Transport cost of the entropic OT plan between uniform weights.

    Runs log-domain Sinkhorn; ``reg`` defaults to 5% of the median cross
    distance. Returns ``(cost, iterations, marginal_violation)``. The cost is
    an upper bound on the exact transport cost.
    """
    x, y = _pair(x, y)
    cost = cdist(x, y)
    if not cost.any():
        return 0.0, 0, 0.0
    if reg is None:
        reg = SINKHORN_EPS_FRACTION * float(np.median(cost))
        if reg <= 0.0:
            reg = SINKHORN_EPS_FRACTION * float(cost[cost > 0].min())
    n, m = cost.shape
    log_a = np.full(n, -math.log(n))
    log_b = np.full(m, -math.log(m))
    f = np.zeros(n)
    g = np.zeros(m)
    violation = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        f = reg * (log_a - logsumexp((g[None, :] - cost) / reg, axis=1))
        g = reg * (log_b - logsumexp((f[:, None] - cost) / reg, axis=0))
        # Column marginals are exact after the g update; check the rows.
        row = np.exp(logsumexp((f[:, None] + g[None, :] - cost) / reg, axis=1))
        violation = float(np.abs(row - 1.0 / n).sum())
        if violation < tol:
            break
    plan = np.exp((f[:, None] + g[None, :] - cost) / reg)
    return float((plan * cost).sum()), it, violation


def emd(x, y, mode: str = "exact") -> float:
    """Earth mover's distance with Euclidean ground cost, uniform weights.

    ``exact`` solves the optimal assignment (equal sizes, at most
    ``EXACT_EMD_MAX`` points); ``approx`` uses entropic OT.
    """
    x, y = _pair(x, y)
    if mode == "exact":
        if len(x) != len(y):
            raise ValidationError(
                f"exact EMD needs equal set sizes ({len(x)} vs {len(y)}); use mode='approx'")
        if len(x) > EXACT_EMD_MAX:
            raise ValidationError(
                f"exact EMD limited to {EXACT_EMD_MAX} points; use mode='approx'")
        cost = cdist(x, y)
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].mean())
    if mode == "approx":
        return sinkhorn_cost(x, y)[0]
    raise ValidationError(f"unknown EMD mode {mode!r}")


def _covariance(x: np.ndarray) -> np.ndarray:
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    eps = 1e-6 * float(np.mean(np.diag(cov)))
    return cov + eps * np.eye(cov.shape[0])


def _sym_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def frechet(x, y) -> float:
    """``|mu_x - mu_y|^2 + tr(S_x + S_y - 2 (S_x S_y)^(1/2))``.

    Covariances use ``n - 1`` normalisation plus a ridge of 1e-6 times their
    mean diagonal. The trace of ``(S_x S_y)^(1/2)`` is taken from the
    symmetric matrix ``S_x^(1/2) S_y S_x^(1/2)``, which has the same spectrum.
    """
    x, y = _pair(x, y)
    if len(x) < 2 or len(y) < 2:
        raise ValidationError("Frechet distance needs at least 2 samples per set")
    diff = x.mean(axis=0) - y.mean(axis=0)
    sx = _covariance(x)
    sy = _covariance(y)
    root = _sym_sqrt(sx)
    inner = root @ sy @ root
    w = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    tr_sqrt = float(np.sqrt(np.clip(w, 0.0, None)).sum())
    value = float(diff @ diff) + float(np.trace(sx) + np.trace(sy)) - 2.0 * tr_sqrt
    return max(value, 0.0)


# -- dataset-level comparison -------------------------------------------------

@dataclass
class GapConfig:
    bandwidth: Union[float, str] = "auto"
    points_per_frame: int = 4096
    frame_pairs: int = 100
    samples: int = 2048
    emd_mode: str = "exact"
    seed: int = 0
    view: Optional[str] = None

    def validate(self) -> "GapConfig":
        if self.bandwidth != "auto" and not (isinstance(self.bandwidth, (int, float))
                                             and self.bandwidth > 0):
            raise ValidationError("bandwidth must be 'auto' or a positive number")
        for name in ("points_per_frame", "frame_pairs", "samples"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.emd_mode not in ("exact", "approx"):
            raise ValidationError("emd_mode must be 'exact' or 'approx'")
        if self.emd_mode == "exact" and self.samples > EXACT_EMD_MAX:
            raise ValidationError(f"exact EMD supports at most {EXACT_EMD_MAX} samples")
        return self


@dataclass
class GapReport:
    cd: float
    mmd: float
    emd: float
    fd: float
    space: str
    config: dict = field(default_factory=dict)
    projection: Optional[dict] = None

    def to_dict(self) -> dict:
        return asdict(self)


def _rng(seed: int, *keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed) % 2**64, *keys]))


def _subsample(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if len(points) <= k:
        return points
    return points[np.sort(rng.choice(len(points), size=k, replace=False))]


def _side(dataset, config: GapConfig):
    """Per-frame subsampled clouds for one dataset.

    Both sides of a comparison draw from identically seeded streams, so a
    dataset compared with itself sees identical samples.
    """
    view = dataset.resolve_view(config.view)
    clouds = []
    for i, (_, frame, _) in enumerate(dataset.frames(view)):
        clouds.append(_subsample(frame.xyz, config.points_per_frame, _rng(config.seed, 1, i)))
    return view, clouds


def _pick_frames(clouds, count: int, rng) -> np.ndarray:
    nonempty = np.array([i for i, c in enumerate(clouds) if len(c)], dtype=np.int64)
    if not len(nonempty):
        raise ValidationError("dataset has no points to compare")
    replace = len(nonempty) < count
    return nonempty[rng.choice(len(nonempty), size=count, replace=replace)]


def pca_projection(x, y, k: int = PROJECTION_POINTS, seed: int = 0) -> dict:
    """Project up to ``k`` rows per side onto the top two principal axes of both.

    Axis signs are fixed so the largest loading of each axis is positive.
    Intended for plotting only.
    """
    x, y = _pair(x, y)
    xs = _subsample(x, k, _rng(seed, 5))
    ys = _subsample(y, k, _rng(seed, 5))
    pooled = np.concatenate([xs, ys])
    mean = pooled.mean(axis=0)
    _, sv, vt = np.linalg.svd(pooled - mean, full_matrices=False)
    axes = np.zeros((2, x.shape[1]))
    axes[:min(2, len(vt))] = vt[:2]
    lead = axes[np.arange(2), np.abs(axes).argmax(axis=1)]
    axes *= np.where(lead < 0, -1.0, 1.0)[:, None]
    var = np.zeros(2)
    var[:min(2, len(sv))] = sv[:2] ** 2
    total = float((sv ** 2).sum())
    return {
        "a": ((xs - mean) @ axes.T).tolist(),
        "b": ((ys - mean) @ axes.T).tolist(),
        "explained_variance_ratio": (var / total if total > 0 else var).tolist(),
    }


def _distribution_metrics(x, y, config: GapConfig, stream: int):
    m = min(len(x), len(y), config.samples)
    xs = _subsample(x, m, _rng(config.seed, stream))
    ys = _subsample(y, m, _rng(config.seed, stream))
    mmd, sigma = mmd_rbf_with_bandwidth(xs, ys, config.bandwidth)
    values = {"mmd": mmd, "emd": emd(xs, ys, config.emd_mode), "fd": frechet(x, y)}
    meta = {"bandwidth_used": sigma, "samples_used": m}
    return values, meta, xs, ys


def _base_config(config: GapConfig) -> dict:
    return {
        "bandwidth": config.bandwidth,
        "seed": config.seed,
        "samples": config.samples,
        "emd_mode": config.emd_mode,
        "cd_variant": "symmetric sum of mean nearest-neighbour Euclidean distances",
        "mmd_estimator": "biased V-statistic, RBF kernel, median-heuristic bandwidth"
        if config.bandwidth == "auto" else "biased V-statistic, RBF kernel",
        "fd_regularization": "1e-6 x mean covariance diagonal",
    }


def raw_gap(a, b, config: Optional[GapConfig] = None) -> GapReport:
    config = (config or GapConfig()).validate()
    view_a, clouds_a = _side(a, config)
    view_b, clouds_b = _side(b, config)
    frames_a = _pick_frames(clouds_a, config.frame_pairs, _rng(config.seed, 2))
    frames_b = _pick_frames(clouds_b, config.frame_pairs, _rng(config.seed, 2))
    cd = float(np.mean([chamfer(clouds_a[i], clouds_b[j])
                        for i, j in zip(frames_a, frames_b)]))
    pooled_a = np.concatenate([c for c in clouds_a if len(c)])
    pooled_b = np.concatenate([c for c in clouds_b if len(c)])
    if len(pooled_a) < 2 or len(pooled_b) < 2:
        raise ValidationError("raw comparison needs at least 2 points per dataset")
    values, meta, xs, ys = _distribution_metrics(pooled_a, pooled_b, config, 3)
    cfg = _base_config(config)
    cfg.update(meta)
    cfg.update({
        "points_per_frame": config.points_per_frame,
        "frame_pairs": config.frame_pairs,
        "views": [view_a, view_b],
        "pooled_points": [int(len(pooled_a)), int(len(pooled_b))],
    })
    return GapReport(cd, values["mmd"], values["emd"], values["fd"], "raw", cfg,
                     pca_projection(xs, ys, seed=config.seed))


def latent_gap(features_a, features_b, config: Optional[GapConfig] = None) -> GapReport:
    config = (config or GapConfig()).validate()
    fa = as_point_set(features_a, "features_a")
    fb = as_point_set(features_b, "features_b")
    if fa.shape[1] != fb.shape[1]:
        raise ValidationError(
            f"feature dimensionality mismatch: {fa.shape[1]} vs {fb.shape[1]}")
    if len(fa) < 2 or len(fb) < 2:
        raise ValidationError("latent comparison needs at least 2 feature rows per side")
    values, meta, xs, ys = _distribution_metrics(fa, fb, config, 4)
    cfg = _base_config(config)
    cfg.update(meta)
    cfg["rows"] = [int(len(fa)), int(len(fb))]
    return GapReport(chamfer(xs, ys), values["mmd"], values["emd"], values["fd"],
                     "latent", cfg, pca_projection(xs, ys, seed=config.seed))


def dataset_gap(a, b, features_a=None, features_b=None,
                config: Optional[GapConfig] = None) -> dict:
    """Raw-space report, plus a latent-space one when both feature sets are given."""
    if (features_a is None) != (features_b is None):
        raise ValidationError("latent comparison needs features for both datasets")
    reports = {"raw": raw_gap(a, b, config)}
    if features_a is not None:
        reports["latent"] = latent_gap(features_a, features_b, config)
    return reports
