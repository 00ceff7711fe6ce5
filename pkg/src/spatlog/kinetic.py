"""Nonlocal kinetic (mesoscopic density) equation on a periodic grid.

d rho/dt = -m rho + a_plus * rho - rho (a_minus * rho), with the
convolutions taken as direct truncated-kernel periodic sums whose weights
are normalized to the truncated kernel mass.  Uniform fields therefore
reduce *exactly* to the homogeneous logistic law, and shifting the initial
field by one cell shifts the solution by one cell exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from .hierarchy import DivergenceError
from .kernels import Kernel, ModelParams

__all__ = [
    "DensityField",
    "KineticTrajectory",
    "FrontSpeedResult",
    "kinetic_rhs",
    "integrate_kinetic",
    "front_speed",
    "linear_spreading_speed",
    "logistic_solution",
]

_BLOWUP = 1e12


@dataclass
class DensityField:
    """Nonnegative density on a uniform periodic grid over [0, L)^d."""

    rho: np.ndarray
    L: float
    d: int = 1
    t: float = 0.0

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        if self.rho.ndim != self.d:
            raise ValueError(f"rho must be a {self.d}-dimensional grid array")
        if np.any(self.rho < 0.0):
            raise ValueError("density must be nonnegative")

    @property
    def dx(self) -> float:
        return self.L / self.rho.shape[0]

    @property
    def x(self) -> np.ndarray:
        n = self.rho.shape[0]
        return (np.arange(n) + 0.5) * self.dx

    @classmethod
    def uniform(cls, value: float, L: float, cells: int, d: int = 1):
        shape = (cells,) * d
        return cls(np.full(shape, float(value)), L, d)

    @classmethod
    def block(cls, height: float, width: float, center: float, L: float, cells: int):
        """1-d localized block initial condition."""
        f = cls.uniform(0.0, L, cells, 1)
        x = f.x
        dist = np.abs(x - center)
        dist = np.minimum(dist, L - dist)
        f.rho[dist <= width / 2.0] = height
        return f


class _Stencil:
    """Periodic convolution weights for one kernel on one grid."""

    def __init__(self, kernel: Kernel, L: float, cells: int, d: int):
        dx = L / cells
        rc = kernel.support_radius
        K = int(math.floor(rc / dx + 1e-12)) if rc > 0.0 else 0
        if d == 1:
            offs = np.arange(-K, K + 1)
            w = np.asarray(kernel.eval_radius(np.abs(offs) * dx)) * dx
        else:
            grid = np.arange(-K, K + 1)
            ox, oy = np.meshgrid(grid, grid, indexing="ij")
            r = np.sqrt((ox * dx) ** 2 + (oy * dx) ** 2)
            keep = r <= rc + 1e-12
            offs = np.column_stack([ox[keep], oy[keep]])
            w = np.asarray(kernel.eval_radius(r[keep])) * dx**2
        mass = kernel.total_mass()
        total = w.sum()
        if total > 0.0 and mass > 0.0:
            w *= mass / total
        self.offsets = offs
        self.weights = w
        self.mass = mass
        self.d = d

    def convolve(self, rho: np.ndarray) -> np.ndarray:
        out = np.zeros_like(rho)
        if self.d == 1:
            for k, wt in zip(self.offsets, self.weights):
                if wt != 0.0:
                    out += wt * np.roll(rho, int(k))
        else:
            for (kx, ky), wt in zip(self.offsets, self.weights):
                if wt != 0.0:
                    out += wt * np.roll(np.roll(rho, int(kx), axis=0), int(ky), axis=1)
        return out


class KineticModel:
    """Cached stencils for one (params, grid) pair."""

    def __init__(self, p: ModelParams, cells: int):
        rc = max(p.a_plus.support_radius, p.a_minus.support_radius)
        dx = p.L / cells
        if rc > 0.0 and dx > rc / 8.0 + 1e-12:
            raise ValueError(
                f"grid spacing {dx:g} too coarse: must be <= cutoff/8 = {rc / 8:g}"
            )
        self.p = p
        self.cells = cells
        self.plus = _Stencil(p.a_plus, p.L, cells, p.d)
        self.minus = _Stencil(p.a_minus, p.L, cells, p.d)

    def rhs(self, rho: np.ndarray) -> np.ndarray:
        return -self.p.m * rho + self.plus.convolve(rho) - rho * self.minus.convolve(rho)


def kinetic_rhs(field: DensityField, p: ModelParams, model: KineticModel | None = None) -> np.ndarray:
    """Growth rate of the density field under the nonlocal logistic law."""
    model = model or KineticModel(p, field.rho.shape[0])
    return model.rhs(field.rho)


@dataclass
class KineticTrajectory:
    times: list[float] = field(default_factory=list)
    fields: list[np.ndarray] = field(default_factory=list)
    clip_events: int = 0
    L: float = 0.0
    d: int = 1

    def final(self) -> np.ndarray:
        return self.fields[-1]


def integrate_kinetic(
    field: DensityField,
    p: ModelParams,
    dt: float,
    t_max: float,
    snapshot_every: int = 0,
    model: KineticModel | None = None,
) -> KineticTrajectory:
    """RK4 time stepping; negative values are clipped to zero and counted."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if abs(field.L - p.L) > 1e-12 or field.d != p.d:
        raise ValueError("density field box does not match the model box")
    model = model or KineticModel(p, field.rho.shape[0])
    steps = int(round(t_max / dt))
    traj = KineticTrajectory(L=field.L, d=field.d)
    rho = field.rho.copy()
    t = field.t

    def record():
        traj.times.append(t)
        traj.fields.append(rho.copy())

    record()
    for step in range(steps):
        k1 = model.rhs(rho)
        k2 = model.rhs(rho + 0.5 * dt * k1)
        k3 = model.rhs(rho + 0.5 * dt * k2)
        k4 = model.rhs(rho + dt * k3)
        rho = rho + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = field.t + (step + 1) * dt
        if np.any(np.abs(rho) > _BLOWUP):
            raise DivergenceError(f"kinetic solution diverged at t = {t:g}", t)
        neg = rho < 0.0
        if np.any(neg):
            traj.clip_events += int(neg.sum())
            rho = np.where(neg, 0.0, rho)
        if snapshot_every and (step + 1) % snapshot_every == 0 and step + 1 < steps:
            record()
    record()
    return traj


def logistic_solution(rho0: float, rate: float, capacity: float, t) -> np.ndarray:
    """Closed-form homogeneous solution rho' = rate*rho*(1 - rho/capacity)."""
    t = np.asarray(t, dtype=float)
    if rate == 0.0:
        return np.full_like(t, rho0)
    return capacity / (1.0 + (capacity / rho0 - 1.0) * np.exp(-rate * t))


@dataclass
class FrontSpeedResult:
    speed: float
    fit_residual: float
    window: tuple[float, float]
    positions: np.ndarray
    times: np.ndarray
    flags: list[str]


def front_speed(traj: KineticTrajectory, level: float) -> FrontSpeedResult:
    """Rightmost level-crossing position, fitted over the second half in time.

    Linear interpolation between grid points; decaying solutions are
    returned with a "decay" flag and NaN speed, and fronts that run into
    the right domain edge get a "truncated-window" warning flag.
    """
    if traj.d != 1:
        raise ValueError("front tracking is one-dimensional")
    if level <= 0.0:
        raise ValueError("level must be positive")
    n = len(traj.fields[0])
    dx = traj.L / n
    x = (np.arange(n) + 0.5) * dx
    flags: list[str] = []
    positions = []
    for rho in traj.fields:
        above = rho >= level
        if not above.any():
            positions.append(math.nan)
            continue
        if above.all():
            positions.append(x[-1])
            flags.append("saturated")
            continue
        i = int(np.max(np.nonzero(above)))
        if i == n - 1:
            positions.append(x[-1])
        else:
            frac = (rho[i] - level) / (rho[i] - rho[i + 1])
            positions.append(x[i] + frac * dx)
    positions = np.asarray(positions)
    times = np.asarray(traj.times)
    if np.isnan(positions[-1]):
        flags.append("decay")
        return FrontSpeedResult(math.nan, math.nan, (times[0], times[-1]), positions, times, flags)
    half = times >= 0.5 * (times[0] + times[-1])
    tt, pp = times[half], positions[half]
    ok = np.isfinite(pp)
    if ok.sum() < 2:
        flags.append("too-few-points")
        return FrontSpeedResult(math.nan, math.nan, (times[0], times[-1]), positions, times, flags)
    if np.any(pp[ok] > traj.L - 2.0 * dx):
        flags.append("truncated-window")
    coef = np.polyfit(tt[ok], pp[ok], 1)
    resid = float(np.sqrt(np.mean((np.polyval(coef, tt[ok]) - pp[ok]) ** 2)))
    return FrontSpeedResult(
        float(coef[0]), resid, (float(tt[0]), float(tt[-1])), positions, times, flags
    )


def linear_spreading_speed(kernel: Kernel, m: float) -> float:
    """Pulled-front speed from the linearization about zero density.

    c* = inf over lam > 0 of (int kernel(x) exp(lam x) dx - m) / lam,
    computed by one-dimensional minimization of the exact tilted mass.
    """
    if kernel.d != 1:
        raise ValueError("linear spreading speed implemented for d=1")

    rc = kernel.support_radius
    grid = np.linspace(-rc, rc, 8193)
    vals = np.asarray(kernel.eval_radius(np.abs(grid)))

    def tilted_mass(lam: float) -> float:
        return float(np.trapezoid(vals * np.exp(lam * grid), grid))

    def objective(lam: float) -> float:
        if lam <= 0.0:
            return math.inf
        return (tilted_mass(lam) - m) / lam

    res = minimize_scalar(objective, bounds=(1e-6, 60.0 / max(rc, 1e-9)), method="bounded")
    return float(res.fun)
