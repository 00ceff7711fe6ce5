"""Translation-invariant truncated moment hierarchy on a radial grid.

State is the density ``u`` and the radial pair function ``w(r)``; the
third-order correlation entering the pair equation is closed by one of
{poisson, kirkwood, zero}.  Kernel integrals use trapezoid weights
normalized so the discrete kernel mass equals the truncated kernel mass
exactly; with the pair function slaved to ``u**2`` the density equation
then reduces *exactly* to the homogeneous logistic law, and the full pair
dynamics is cross-validated against the lattice correlation generator.

Beyond the grid edge the pair function is extended by its uncorrelated
far-field value ``u**2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import Kernel, ModelParams

__all__ = [
    "RadialGrid",
    "HierarchyState",
    "HierarchyTrajectory",
    "HierarchySolver",
    "hierarchy_rhs",
    "integrate_hierarchy",
    "ClosureSingularityError",
    "DivergenceError",
]

_CLOSURES = ("poisson", "kirkwood", "zero")
_DENSITY_FLOOR = 1e-12
_BLOWUP = 1e12


class ClosureSingularityError(RuntimeError):
    """Kirkwood closure evaluated at a vanishing density."""


class DivergenceError(RuntimeError):
    def __init__(self, message: str, t: float):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class RadialGrid:
    dr: float
    r_max: float

    def __post_init__(self):
        if self.dr <= 0.0 or self.r_max <= self.dr:
            raise ValueError("need 0 < dr < r_max")

    @property
    def radii(self) -> np.ndarray:
        n = int(round(self.r_max / self.dr))
        return np.arange(n + 1) * self.dr

    @classmethod
    def for_params(cls, p: ModelParams, dr: float | None = None, r_max: float | None = None):
        """Default grid: spacing cutoff/64, extent four cutoffs."""
        rc = max(p.a_plus.support_radius, p.a_minus.support_radius)
        if rc <= 0.0:
            rc = 1.0
        return cls(rc / 64.0 if dr is None else dr, 4.0 * rc if r_max is None else r_max)


@dataclass
class HierarchyState:
    u: float
    w: np.ndarray
    grid: RadialGrid
    closure: str = "kirkwood"
    t: float = 0.0

    def __post_init__(self):
        if self.closure not in _CLOSURES:
            raise ValueError(f"closure must be one of {_CLOSURES}")
        self.w = np.asarray(self.w, dtype=float)
        if self.w.shape != self.grid.radii.shape:
            raise ValueError("w must be sampled on the grid radii")
        if self.u < 0.0 or np.any(self.w < 0.0):
            raise ValueError("density and pair function must be nonnegative")

    @classmethod
    def uncorrelated(cls, u0: float, grid: RadialGrid, closure: str = "kirkwood"):
        return cls(u0, np.full(grid.radii.shape, u0**2), grid, closure)


@dataclass
class HierarchyTrajectory:
    times: list[float] = field(default_factory=list)
    u: list[float] = field(default_factory=list)
    w: list[np.ndarray] = field(default_factory=list)
    clip_events: int = 0
    grid: RadialGrid | None = None
    closure: str = ""

    def final(self) -> tuple[float, np.ndarray]:
        return self.u[-1], self.w[-1]


def _kernel_weights(kernel: Kernel, grid: RadialGrid, d: int) -> np.ndarray:
    """Per-node kernel quadrature weights, normalized to the truncated mass."""
    r = grid.radii
    vals = np.asarray(kernel.eval_radius(r))
    if d == 1:
        trap = np.full(r.shape, 2.0 * grid.dr)
        trap[0] = trap[-1] = grid.dr
    else:
        trap = 2.0 * math.pi * r * grid.dr
        trap[0] = 0.0
        trap[-1] *= 0.5
    raw = trap * vals
    total = raw.sum()
    mass = kernel.total_mass()
    if total > 0.0 and mass > 0.0:
        raw *= mass / total
    return raw


class HierarchySolver:
    """Precomputed quadrature tables for one (params, grid, dimension) triple."""

    def __init__(self, p: ModelParams, grid: RadialGrid, n_phi: int = 64):
        rc = max(p.a_plus.support_radius, p.a_minus.support_radius)
        if grid.r_max < rc - 1e-12:
            raise ValueError("grid r_max must cover the kernel cutoffs")
        self.p = p
        self.grid = grid
        self.radii = grid.radii
        self.J = len(self.radii) - 1
        self.wa_plus = _kernel_weights(p.a_plus, grid, p.d)
        self.wa_minus = _kernel_weights(p.a_minus, grid, p.d)
        self.ap_point = np.asarray(p.a_plus.eval_radius(self.radii))
        self.am_point = np.asarray(p.a_minus.eval_radius(self.radii))
        self.mass_plus = p.a_plus.total_mass()
        self.mass_minus = p.a_minus.total_mass()
        self.support = np.nonzero(self.wa_plus + self.wa_minus)[0]
        if p.d == 2:
            self._angles = (np.arange(n_phi) + 0.5) * (2.0 * math.pi / n_phi)
            self._dist = {}
            ri = self.radii[:, None]
            for j in self.support:
                s = self.radii[j]
                self._dist[j] = np.sqrt(
                    np.maximum(ri**2 + s**2 - 2.0 * ri * s * np.cos(self._angles)[None, :], 0.0)
                )

    # -- pair-function gathers ------------------------------------------------

    def _w_at_index_distance(self, w: np.ndarray, j: int, u2: float):
        """(w(|r_i - r_j|), w(r_i + r_j)) along the grid, far field u^2 (d=1)."""
        idx = np.arange(self.J + 1)
        near = w[np.abs(idx - j)]
        far_idx = idx + j
        far = np.where(far_idx <= self.J, w[np.minimum(far_idx, self.J)], u2)
        return near, far

    def _w_angular(self, w: np.ndarray, j: int, u2: float) -> np.ndarray:
        """Angular average of w at distance |r_i e1 - z|, |z| = r_j (d=2)."""
        dist = self._dist[j]
        vals = np.interp(dist, self.radii, w)
        vals = np.where(dist <= self.grid.r_max, vals, u2)
        return vals.mean(axis=1)

    # -- right-hand side ----------------------------------------------------------

    def rhs(self, u: float, w: np.ndarray, closure: str) -> tuple[float, np.ndarray]:
        """Time derivatives (du, dw) of the order-2 truncated hierarchy."""
        p = self.p
        u2 = u * u
        du = (self.mass_plus - p.m) * u - float(np.dot(self.wa_minus, w))
        k3 = self._closure_fn(u, closure)
        conv = np.zeros(self.J + 1)
        kterm = np.zeros(self.J + 1)
        for j in self.support:
            if p.d == 1:
                near, far = self._w_at_index_distance(w, j, u2)
                pair_avg = 0.5 * (near + far)
            else:
                pair_avg = self._w_angular(w, j, u2)
            if self.wa_plus[j] != 0.0:
                conv += self.wa_plus[j] * pair_avg
            if self.wa_minus[j] != 0.0:
                kterm += self.wa_minus[j] * k3(w, j, pair_avg)
        dw = -2.0 * (p.m + self.am_point) * w + 2.0 * self.ap_point * u + 2.0 * conv - 2.0 * kterm
        return du, dw

    def _closure_fn(self, u: float, name: str):
        if name == "zero":
            return lambda w, j, pair_avg: 0.0
        if name == "poisson":
            u3 = u**3
            return lambda w, j, pair_avg: u3
        if u < _DENSITY_FLOOR:
            raise ClosureSingularityError(f"kirkwood closure at u = {u:g}")
        inv = 1.0 / u**3
        return lambda w, j, pair_avg: w * w[j] * pair_avg * inv


def hierarchy_rhs(state: HierarchyState, p: ModelParams, solver: HierarchySolver | None = None):
    """Derivatives (du/dt, dw/dt) of a state under its closure; see class docs."""
    solver = solver or HierarchySolver(p, state.grid)
    return solver.rhs(state.u, state.w, state.closure)


def integrate_hierarchy(
    state: HierarchyState,
    p: ModelParams,
    dt: float,
    t_max: float,
    pair_dynamics: bool = True,
    snapshot_every: int = 0,
    solver: HierarchySolver | None = None,
) -> HierarchyTrajectory:
    """Classical RK4 integration of the truncated hierarchy.

    With ``pair_dynamics=False`` only the density is evolved and the pair
    function is slaved to ``u**2``: the mean-field (first-order) reduction,
    identical to the homogeneous kinetic law.  Negative values produced by
    a step are clipped to zero and counted, never silently.  Densities
    beyond 1e12 raise :class:`DivergenceError`.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    solver = solver or HierarchySolver(p, state.grid)
    steps = int(round(t_max / dt))
    traj = HierarchyTrajectory(grid=state.grid, closure=state.closure)
    u, w, t = state.u, state.w.copy(), state.t
    mass_p, mass_m = solver.mass_plus, solver.mass_minus

    def record():
        traj.times.append(t)
        traj.u.append(u)
        traj.w.append(w.copy())

    record()
    for step in range(steps):
        if pair_dynamics:
            def f(uu, ww):
                return solver.rhs(uu, ww, state.closure)

            k1u, k1w = f(u, w)
            k2u, k2w = f(u + 0.5 * dt * k1u, w + 0.5 * dt * k1w)
            k3u, k3w = f(u + 0.5 * dt * k2u, w + 0.5 * dt * k2w)
            k4u, k4w = f(u + dt * k3u, w + dt * k3w)
            u = u + dt / 6.0 * (k1u + 2.0 * k2u + 2.0 * k3u + k4u)
            w = w + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        else:
            def g(uu):
                return (mass_p - p.m) * uu - mass_m * uu * uu

            k1 = g(u)
            k2 = g(u + 0.5 * dt * k1)
            k3 = g(u + 0.5 * dt * k2)
            k4 = g(u + dt * k3)
            u = u + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            w = np.full_like(w, u * u)
        t = state.t + (step + 1) * dt
        if abs(u) > _BLOWUP or np.any(np.abs(w) > _BLOWUP**2):
            raise DivergenceError(f"hierarchy diverged at t = {t:g}", t)
        if u < 0.0:
            traj.clip_events += 1
            u = 0.0
        neg = w < 0.0
        if np.any(neg):
            traj.clip_events += int(neg.sum())
            w = np.where(neg, 0.0, w)
        if snapshot_every and (step + 1) % snapshot_every == 0 and step + 1 < steps:
            record()
    record()
    return traj
