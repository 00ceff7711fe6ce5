"""Correlation-function estimators and clustering diagnostics for ensembles.

All estimators take a list of snapshots at a *single* time point, one per
replica.  Standard errors are always across replicas; snapshots from the
same replica are correlated and never pooled for uncertainty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .simulator import Snapshot

__all__ = [
    "CorrelationEstimate",
    "estimate_k1",
    "estimate_k2_radial",
    "cluster_index",
    "dobrushin_moment",
    "pair_distance_counts",
    "group_by_time",
]


def group_by_time(snapshots, atol: float = 1e-9) -> dict[float, list[Snapshot]]:
    """Bucket snapshots by their time stamp."""
    groups: dict[float, list[Snapshot]] = {}
    for s in snapshots:
        for t in groups:
            if abs(t - s.t) <= atol:
                groups[t].append(s)
                break
        else:
            groups[s.t] = [s]
    return groups


@dataclass
class CorrelationEstimate:
    """Density and radial pair-correlation estimate with replica standard errors."""

    k1: float
    k1_stderr: float
    edges: np.ndarray
    k2: np.ndarray
    k2_stderr: np.ndarray
    replicas: int
    L: float
    d: int
    per_replica_counts: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]
    per_replica_n: np.ndarray = field(repr=False, default=None)  # type: ignore[assignment]


def _shell_measure(edges: np.ndarray, d: int) -> np.ndarray:
    lo, hi = edges[:-1], edges[1:]
    if d == 1:
        return 2.0 * (hi - lo)
    return math.pi * (hi**2 - lo**2)


def pair_distance_counts(snap: Snapshot, edges: np.ndarray) -> np.ndarray:
    """Ordered-pair counts of minimum-image distances per bin."""
    pts = snap.points
    n = len(pts)
    if n < 2:
        return np.zeros(len(edges) - 1)
    diff = pts[:, None, :] - pts[None, :, :]
    diff -= snap.L * np.round(diff / snap.L)
    r = np.linalg.norm(diff, axis=-1)
    iu = ~np.eye(n, dtype=bool)
    counts, _ = np.histogram(r[iu], bins=edges)
    return counts.astype(float)


def estimate_k1(snapshots: list[Snapshot]) -> tuple[float, float]:
    """Mean density N / L^d with across-replica standard error.

    The standard error is NaN for a single replica (flagged, not guessed).
    """
    if not snapshots:
        raise ValueError("empty ensemble")
    vals = np.array([s.n / s.L**s.d for s in snapshots])
    mean = float(vals.mean())
    stderr = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.nan
    return mean, stderr


def estimate_k2_radial(snapshots: list[Snapshot], edges) -> CorrelationEstimate:
    """Radial second correlation function from ordered pair counts.

    k2(bin) = <ordered pairs with distance in bin> / (L^d * shell measure);
    the ordered-pair convention makes the Poisson baseline exactly the
    squared intensity.
    """
    if not snapshots:
        raise ValueError("empty ensemble")
    edges = np.asarray(edges, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0.0):
        raise ValueError("bin edges must be strictly increasing")
    L, d = snapshots[0].L, snapshots[0].d
    if edges[-1] > L / 2.0 + 1e-12:
        raise ValueError(f"bins extend beyond L/2 = {L / 2:g}")
    shell = _shell_measure(edges, d)
    norm = L**d * shell
    counts = np.array([pair_distance_counts(s, edges) for s in snapshots])
    per_rep = counts / norm
    k2 = per_rep.mean(axis=0)
    R = len(snapshots)
    k2_err = per_rep.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full(len(shell), np.nan)
    k1, k1_err = estimate_k1(snapshots)
    return CorrelationEstimate(
        k1, k1_err, edges, k2, k2_err, R, L, d,
        per_replica_counts=counts,
        per_replica_n=np.array([s.n for s in snapshots], dtype=float),
    )


def cluster_index(est: CorrelationEstimate, r0: float) -> tuple[float, float]:
    """Short-range k2 averaged over bins below r0, divided by k1 squared.

    Equal to 1 for Poisson ensembles; growth over time signals clustering.
    The standard error is a leave-one-replica-out jackknife.
    """
    lo, hi = est.edges[:-1], est.edges[1:]
    mask = hi <= r0 + 1e-12
    if est.edges[0] > 1e-12 or not np.any(mask) or hi[mask].max() < r0 - 1e-12:
        raise ValueError(f"bins do not cover [0, {r0:g})")
    if est.k1 <= 0.0 or not math.isfinite(est.k1):
        return math.nan, math.nan
    norm = est.L**est.d * _shell_measure(est.edges, est.d)
    counts = est.per_replica_counts
    ns = est.per_replica_n
    R = len(ns)

    def index_of(count_rows, n_rows):
        k2bar = float((count_rows / norm).mean(axis=0)[mask].mean())
        k1 = float(n_rows.mean() / est.L**est.d)
        return k2bar / k1**2 if k1 > 0 else math.nan

    value = index_of(counts, ns)
    if R < 2:
        return value, math.nan
    keep = np.arange(R)
    jk = np.array([index_of(counts[keep != r], ns[keep != r]) for r in range(R)])
    jk = jk[np.isfinite(jk)]
    stderr = math.sqrt((len(jk) - 1) / len(jk) * ((jk - jk.mean()) ** 2).sum()) if len(jk) > 1 else math.nan
    return value, stderr


def dobrushin_moment(snapshots: list[Snapshot], alpha: float, window) -> float:
    """Empirical exponential moment exp(alpha * count in window), overflow-guarded.

    ``window`` is an axis-aligned box given as (lower corner, upper corner).
    """
    if alpha < 0.0:
        raise ValueError("alpha must be nonnegative")
    if not snapshots:
        return 1.0
    lo = np.atleast_1d(np.asarray(window[0], dtype=float))
    hi = np.atleast_1d(np.asarray(window[1], dtype=float))
    counts = []
    for s in snapshots:
        if s.n == 0:
            counts.append(0)
            continue
        inside = np.all((s.points >= lo) & (s.points < hi), axis=1)
        counts.append(int(inside.sum()))
    x = alpha * np.asarray(counts, dtype=float)
    m = float(x.max())
    log_mean = m + math.log(float(np.mean(np.exp(x - m))))
    return math.exp(log_mean) if log_mean < 700.0 else math.inf
