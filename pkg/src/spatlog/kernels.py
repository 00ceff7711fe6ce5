"""Dispersal and competition kernels with hard truncation radii.

Every kernel is an even, nonnegative radial profile on R^d (d = 1 or 2)
that vanishes identically beyond a cutoff ``r_cut``.  All downstream
components (simulator, lattice operators, hierarchy, kinetic solver) use
the truncated kernel and its truncated mass, so they all solve the same
model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from functools import cached_property

import numpy as np
from scipy.special import erf

__all__ = [
    "Kernel",
    "ModelParams",
    "InvalidKernelError",
    "NoFiniteTheta",
    "gaussian_kernel",
    "tophat_kernel",
    "exponential_kernel",
    "tabulated_kernel",
    "zero_kernel",
    "domination_theta",
    "check_theta_condition",
]

# Default cutoff: radius where the profile drops below this fraction of its peak.
_TAIL_FRACTION = 1e-8
_TAIL_LOG = math.log(1.0 / _TAIL_FRACTION)


class InvalidKernelError(ValueError):
    """Kernel parameters are degenerate or malformed."""


class NoFiniteTheta(ValueError):
    """No finite pointwise domination constant exists for the kernel pair."""


@dataclass(frozen=True)
class Kernel:
    """Radial interaction profile, truncated at ``r_cut``.

    Use the factory functions (:func:`gaussian_kernel`, ...) rather than the
    constructor; they validate parameters and fill in default cutoffs.
    ``auto_cut`` records whether ``r_cut`` came from the tail-decay default
    (such cutoffs may be tightened to L/2 by :class:`ModelParams`).
    """

    shape: str
    d: int
    r_cut: float
    sigma: float = 0.0
    h: float = 0.0
    R: float = 0.0
    c: float = 0.0
    beta: float = 0.0
    table_r: tuple[float, ...] = ()
    table_v: tuple[float, ...] = ()
    auto_cut: bool = False

    # -- evaluation ---------------------------------------------------------

    def eval_radius(self, r):
        """Profile value at radius ``r`` (scalar or array); 0 beyond r_cut."""
        r = np.asarray(r, dtype=float)
        if self.shape == "zero":
            return np.zeros_like(r)
        if self.shape == "gaussian":
            norm = (2.0 * math.pi * self.sigma**2) ** (-0.5 * self.d)
            val = norm * np.exp(-0.5 * (r / self.sigma) ** 2)
        elif self.shape == "tophat":
            val = np.where(r <= self.R, self.h, 0.0)
        elif self.shape == "exponential":
            val = self.c * np.exp(-self.beta * r)
        elif self.shape == "tabulated":
            rt = np.asarray(self.table_r)
            vt = np.asarray(self.table_v)
            val = np.interp(r, rt, vt, left=vt[0], right=0.0)
        else:  # pragma: no cover - factories prevent this
            raise InvalidKernelError(f"unknown kernel shape {self.shape!r}")
        return np.where(r > self.r_cut, 0.0, val)

    def evaluate(self, x):
        """Value at displacement vector(s) ``x`` with shape (..., d) or scalar in d=1."""
        x = np.asarray(x, dtype=float)
        if self.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            r = np.abs(x)
        else:
            r = np.linalg.norm(x, axis=-1)
        return self.eval_radius(r)

    @property
    def is_zero(self) -> bool:
        return self.shape == "zero" or self.sup_norm() == 0.0

    @property
    def support_radius(self) -> float:
        """Radius beyond which the kernel is identically zero."""
        if self.shape == "zero":
            return 0.0
        if self.shape == "tophat":
            return min(self.R, self.r_cut)
        if self.shape == "tabulated":
            return min(self.table_r[-1], self.r_cut)
        return self.r_cut

    # -- scalar summaries ----------------------------------------------------

    def total_mass(self) -> float:
        """Integral of the truncated kernel over R^d."""
        rc = self.r_cut
        if self.shape == "zero":
            return 0.0
        if self.shape == "gaussian":
            if self.d == 1:
                return float(erf(rc / (self.sigma * math.sqrt(2.0))))
            return 1.0 - math.exp(-0.5 * (rc / self.sigma) ** 2)
        if self.shape == "tophat":
            rt = min(self.R, rc)
            return 2.0 * self.h * rt if self.d == 1 else self.h * math.pi * rt**2
        if self.shape == "exponential":
            b = self.beta
            if self.d == 1:
                return 2.0 * self.c * (1.0 - math.exp(-b * rc)) / b
            return 2.0 * math.pi * self.c * (1.0 - math.exp(-b * rc) * (1.0 + b * rc)) / b**2
        # tabulated: trapezoid on the table grid, clipped at r_cut
        r, v = self._clipped_table()
        shell = 2.0 * np.ones_like(r) if self.d == 1 else 2.0 * math.pi * r
        return float(np.trapezoid(v * shell, r))

    def sup_norm(self) -> float:
        """Essential sup of the truncated kernel."""
        if self.shape == "zero":
            return 0.0
        if self.shape == "gaussian":
            return (2.0 * math.pi * self.sigma**2) ** (-0.5 * self.d)
        if self.shape == "tophat":
            return self.h
        if self.shape == "exponential":
            return self.c
        r, v = self._clipped_table()
        return float(np.max(v))

    def _clipped_table(self):
        r = np.asarray(self.table_r, dtype=float)
        v = np.asarray(self.table_v, dtype=float)
        if self.r_cut < r[-1]:
            keep = r <= self.r_cut
            r_edge = self.r_cut
            v_edge = float(np.interp(r_edge, r, v))
            r = np.append(r[keep], r_edge)
            v = np.append(v[keep], v_edge)
        return r, v

    # -- radial law and sampling ---------------------------------------------

    def cdf_radius(self, r):
        """CDF of |X| for X distributed with density eval/total_mass."""
        r = np.clip(np.asarray(r, dtype=float), 0.0, self.r_cut)
        rc = self.r_cut
        if self.shape == "gaussian":
            s2 = self.sigma * math.sqrt(2.0)
            if self.d == 1:
                return erf(r / s2) / erf(rc / s2)
            return (1.0 - np.exp(-0.5 * (r / self.sigma) ** 2)) / (
                1.0 - math.exp(-0.5 * (rc / self.sigma) ** 2)
            )
        if self.shape == "tophat":
            rt = min(self.R, rc)
            x = np.clip(r / rt, 0.0, 1.0)
            return x if self.d == 1 else x**2
        if self.shape == "exponential" and self.d == 1:
            b = self.beta
            return (1.0 - np.exp(-b * r)) / (1.0 - math.exp(-b * rc))
        if self.shape == "exponential":
            b = self.beta
            num = 1.0 - np.exp(-b * r) * (1.0 + b * r)
            return num / (1.0 - math.exp(-b * rc) * (1.0 + b * rc))
        grid, cdf = self._radial_cdf_grid
        return np.interp(r, grid, cdf)

    @cached_property
    def _radial_cdf_grid(self):
        grid = np.linspace(0.0, self.support_radius, 8193)
        pdf = self.eval_radius(grid)
        if self.d == 2:
            pdf = pdf * 2.0 * math.pi * grid
        cdf = np.concatenate([[0.0], np.cumsum((pdf[1:] + pdf[:-1]) * 0.5 * np.diff(grid))])
        if cdf[-1] <= 0.0:
            raise InvalidKernelError("cannot sample from a zero kernel")
        return grid, cdf / cdf[-1]

    def sample_displacement(self, rng: np.random.Generator, size: int | None = None):
        """Random displacement(s) with density eval/total_mass.

        Returns shape (d,) for ``size=None``, else (size, d).  Gaussian uses
        the direct normal transform (with tail resampling beyond r_cut),
        tophat is uniform in the ball, the rest go through the radial
        inverse CDF.
        """
        if self.is_zero:
            raise InvalidKernelError("cannot sample from a zero kernel")
        n = 1 if size is None else int(size)
        if self.shape == "gaussian":
            out = rng.normal(0.0, self.sigma, size=(n, self.d))
            bad = np.linalg.norm(out, axis=1) > self.r_cut
            while np.any(bad):
                out[bad] = rng.normal(0.0, self.sigma, size=(int(bad.sum()), self.d))
                bad = np.linalg.norm(out, axis=1) > self.r_cut
        else:
            if self.shape == "tophat":
                rt = min(self.R, self.r_cut)
                u = rng.random(n)
                radius = rt * (u if self.d == 1 else np.sqrt(u))
            elif self.shape == "exponential" and self.d == 1:
                b = self.beta
                u = rng.random(n)
                radius = -np.log1p(-u * (1.0 - math.exp(-b * self.r_cut))) / b
            else:
                grid, cdf = self._radial_cdf_grid
                radius = np.interp(rng.random(n), cdf, grid)
            if self.d == 1:
                sign = np.where(rng.random(n) < 0.5, -1.0, 1.0)
                out = (radius * sign)[:, None]
            else:
                phi = rng.random(n) * 2.0 * math.pi
                out = np.column_stack([radius * np.cos(phi), radius * np.sin(phi)])
        return out[0] if size is None else out


# -- factories ----------------------------------------------------------------


def _check_dim(d: int) -> int:
    if d not in (1, 2):
        raise InvalidKernelError(f"dimension must be 1 or 2, got {d}")
    return d


def gaussian_kernel(sigma: float, d: int = 1, r_cut: float | None = None) -> Kernel:
    """Normalized Gaussian profile with scale ``sigma``."""
    _check_dim(d)
    if not (sigma > 0.0 and math.isfinite(sigma)):
        raise InvalidKernelError(f"gaussian sigma must be positive, got {sigma}")
    auto = r_cut is None
    rc = sigma * math.sqrt(2.0 * _TAIL_LOG) if auto else float(r_cut)
    if rc <= 0.0:
        raise InvalidKernelError("r_cut must be positive")
    return Kernel("gaussian", d, rc, sigma=sigma, auto_cut=auto)


def tophat_kernel(h: float, R: float, d: int = 1, r_cut: float | None = None) -> Kernel:
    """Indicator profile of height ``h`` on the ball of radius ``R``."""
    _check_dim(d)
    if not (R > 0.0 and math.isfinite(R)):
        raise InvalidKernelError(f"tophat radius must be positive, got {R}")
    if h < 0.0 or not math.isfinite(h):
        raise InvalidKernelError(f"tophat height must be nonnegative, got {h}")
    rc = R if r_cut is None else float(r_cut)
    if h == 0.0:
        return zero_kernel(d)
    return Kernel("tophat", d, rc, h=h, R=R, auto_cut=False)


def exponential_kernel(c: float, beta: float, d: int = 1, r_cut: float | None = None) -> Kernel:
    """Profile c * exp(-beta r)."""
    _check_dim(d)
    if not (beta > 0.0 and math.isfinite(beta)):
        raise InvalidKernelError(f"exponential rate must be positive, got {beta}")
    if c < 0.0 or not math.isfinite(c):
        raise InvalidKernelError(f"exponential amplitude must be nonnegative, got {c}")
    auto = r_cut is None
    rc = _TAIL_LOG / beta if auto else float(r_cut)
    if c == 0.0:
        return zero_kernel(d)
    return Kernel("exponential", d, rc, c=c, beta=beta, auto_cut=auto)


def tabulated_kernel(r, values, d: int = 1, r_cut: float | None = None) -> Kernel:
    """Piecewise-linear radial profile through (r, values) samples."""
    _check_dim(d)
    r = np.asarray(r, dtype=float)
    v = np.asarray(values, dtype=float)
    if r.ndim != 1 or r.shape != v.shape or r.size < 2:
        raise InvalidKernelError("tabulated kernel needs matching 1-d r/value arrays")
    if r[0] != 0.0 or np.any(np.diff(r) <= 0.0):
        raise InvalidKernelError("tabulated radii must be strictly increasing and start at 0")
    if np.any(v < 0.0) or not np.all(np.isfinite(v)):
        raise InvalidKernelError("tabulated values must be finite and nonnegative")
    rc = float(r[-1]) if r_cut is None else float(r_cut)
    if np.max(v) == 0.0:
        return zero_kernel(d)
    return Kernel("tabulated", d, rc, table_r=tuple(r), table_v=tuple(v), auto_cut=False)


def zero_kernel(d: int = 1) -> Kernel:
    """Identically vanishing kernel (contact model / pure death limits)."""
    _check_dim(d)
    return Kernel("zero", d, 0.0, auto_cut=False)


# -- domination ----------------------------------------------------------------


def domination_theta(a_plus: Kernel, a_minus: Kernel) -> float:
    """Least theta with a_plus(x) <= theta * a_minus(x) everywhere.

    Analytic for tophat pairs and gaussian pairs; otherwise a dense radial
    grid ratio with divergence detection.  Raises :class:`NoFiniteTheta` when
    a_plus has support where a_minus vanishes or the ratio is unbounded.
    """
    if a_plus.d != a_minus.d:
        raise InvalidKernelError("kernels must share a dimension")
    if a_plus.is_zero:
        return 0.0
    if a_minus.is_zero:
        raise NoFiniteTheta("competition kernel vanishes identically")
    sp, sm = a_plus.support_radius, a_minus.support_radius
    if sp > sm * (1.0 + 1e-12) + 1e-15:
        raise NoFiniteTheta(
            f"dispersal support {sp:g} extends beyond competition support {sm:g}"
        )
    if a_plus.shape == "tophat" and a_minus.shape == "tophat":
        return a_plus.h / a_minus.h
    if a_plus.shape == "gaussian" and a_minus.shape == "gaussian":
        if a_plus.sigma > a_minus.sigma * (1.0 + 1e-12):
            raise NoFiniteTheta("wider gaussian in the numerator: tail ratio diverges")
        return (a_minus.sigma / a_plus.sigma) ** a_plus.d
    rs = np.linspace(0.0, sp, 4097)
    vp = a_plus.eval_radius(rs)
    vm = a_minus.eval_radius(rs)
    mask = vp > a_plus.sup_norm() * 1e-14
    if np.any(vm[mask] <= a_minus.sup_norm() * 1e-14):
        raise NoFiniteTheta("dispersal kernel positive where competition vanishes")
    return float(np.max(vp[mask] / vm[mask]))


def check_theta_condition(theta: float, alpha_star: float) -> bool:
    """Strict smallness condition exp(alpha_star) * theta < 1."""
    if theta <= 0.0:
        raise ValueError("theta must be positive")
    return math.exp(alpha_star) * theta < 1.0


# -- model parameters ----------------------------------------------------------


@dataclass(frozen=True)
class ModelParams:
    """Mortality, kernel pair and periodic box for one model instance.

    Auto-derived kernel cutoffs are tightened to L/2 so the minimum-image
    convention is valid; explicitly requested cutoffs (and tophat radii)
    beyond L/2 are an error.
    """

    m: float
    a_plus: Kernel
    a_minus: Kernel
    L: float
    d: int = 1

    def __post_init__(self):
        if not (self.m >= 0.0 and math.isfinite(self.m)):
            raise ValueError(f"mortality must be finite and nonnegative, got {self.m}")
        if not (self.L > 0.0 and math.isfinite(self.L)):
            raise ValueError(f"box side must be finite and positive, got {self.L}")
        if self.d not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.d}")
        for name in ("a_plus", "a_minus"):
            k = getattr(self, name)
            if k.shape != "zero" and k.d != self.d:
                raise ValueError(f"{name} dimension {k.d} does not match model d={self.d}")
            if k.r_cut > self.L / 2.0 + 1e-12:
                if not k.auto_cut:
                    raise ValueError(
                        f"{name}: r_cut {k.r_cut:g} exceeds L/2 = {self.L / 2:g} "
                        "(minimum-image violation)"
                    )
                object.__setattr__(self, name, replace(k, r_cut=self.L / 2.0))

    @property
    def theta(self) -> float:
        return domination_theta(self.a_plus, self.a_minus)
