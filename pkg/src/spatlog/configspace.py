"""Finite configurations and the discrete truncated configuration space.

A :class:`SiteLattice` partitions the periodic box into M cells; the
discrete configuration space is the collection of site subsets with at
most ``cap`` elements, encoded as bitmasks (single occupancy per cell).
Functions on that space (:class:`TruncatedFunction`) carry both
quasi-observable coefficients and correlation vectors; this module provides
the discrete Lebesgue-Poisson integral, the zeta/Moebius (sub-configuration
sum) transform pair, the duality pairing, and the energy functionals.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .kernels import Kernel, ModelParams

__all__ = [
    "Configuration",
    "SiteLattice",
    "SubsetSpace",
    "TruncatedFunction",
    "torus_displacement",
    "torus_distance",
    "energy_minus",
    "energy_plus",
    "energy_total",
    "lp_integral",
    "zeta_transform",
    "moebius_inverse",
    "pairing",
    "coefficient_norm",
    "correlation_norm",
    "correlation_of_density",
    "density_of_correlation",
]


# -- torus geometry -------------------------------------------------------------


def torus_displacement(x, y, L: float):
    """Minimum-image displacement x - y on the torus of side L."""
    diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    return diff - L * np.round(diff / L)


def torus_distance(x, y, L: float):
    d = torus_displacement(x, y, L)
    if d.ndim == 0:
        return np.abs(d)
    return np.linalg.norm(d, axis=-1)


@dataclass(frozen=True)
class Configuration:
    """Finite set of pairwise-distinct points in the periodic box [0, L)^d."""

    points: np.ndarray
    L: float
    d: int = 1

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.size == 0:
            pts = pts.reshape(0, self.d)
        if pts.shape[1] != self.d:
            raise ValueError(f"points must have shape (n, {self.d})")
        if np.any(pts < 0.0) or np.any(pts >= self.L):
            raise ValueError("all coordinates must lie in [0, L)")
        if len(pts) > 1:
            diffs = pts[:, None, :] - pts[None, :, :]
            same = np.all(diffs == 0.0, axis=-1)
            np.fill_diagonal(same, False)
            if np.any(same):
                raise ValueError("configuration contains duplicate points")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


def _as_points(eta, d: int) -> np.ndarray:
    if isinstance(eta, Configuration):
        return eta.points
    pts = np.asarray(eta, dtype=float)
    if pts.size == 0:
        return pts.reshape(0, d)
    if pts.ndim == 1:
        if d != 1:
            raise ValueError(f"expected points with {d} coordinates")
        pts = pts[:, None]
    if pts.shape[1] != d:
        raise ValueError(f"expected points with {d} coordinates")
    return pts


# -- energy functionals ----------------------------------------------------------


def energy_minus(x, eta, p: ModelParams) -> float:
    """Competition field at x from configuration eta (torus metric)."""
    return _energy(x, eta, p.a_minus, p)


def energy_plus(x, eta, p: ModelParams) -> float:
    """Dispersal field at x from configuration eta (torus metric)."""
    return _energy(x, eta, p.a_plus, p)


def _energy(x, eta, kernel: Kernel, p: ModelParams) -> float:
    pts = _as_points(eta, p.d)
    if len(pts) == 0:
        return 0.0
    r = torus_distance(np.asarray(x, dtype=float).reshape(1, p.d), pts, p.L)
    return float(np.sum(kernel.eval_radius(r)))


def energy_total(eta, p: ModelParams) -> tuple[float, float, float]:
    """Pair competition energy, total death weight, and total event weight.

    Returns ``(E_minus, E, Xi)`` with ``E = m|eta| + E_minus`` and
    ``Xi = E + <a_plus>|eta|`` (continuum birth mass; the lattice operators
    use their own cell-sum birth mass instead).
    """
    pts = _as_points(eta, p.d)
    n = len(pts)
    if n == 0:
        return 0.0, 0.0, 0.0
    em = 0.0
    for i in range(n):
        r = torus_distance(pts[i].reshape(1, p.d), np.delete(pts, i, axis=0), p.L)
        em += float(np.sum(p.a_minus.eval_radius(r)))
    e = p.m * n + em
    return em, e, e + p.a_plus.total_mass() * n


# -- lattice and subset space ----------------------------------------------------


@dataclass(frozen=True)
class SiteLattice:
    """Uniform partition of [0, L)^d into cells, one site per cell center."""

    L: float
    d: int = 1
    cells_per_side: int = 4

    def __post_init__(self):
        if self.cells_per_side < 1:
            raise ValueError("cells_per_side must be >= 1")
        if self.d not in (1, 2):
            raise ValueError("lattice dimension must be 1 or 2")

    @property
    def M(self) -> int:
        return self.cells_per_side**self.d

    @property
    def v(self) -> float:
        return (self.L / self.cells_per_side) ** self.d

    @property
    def positions(self) -> np.ndarray:
        step = self.L / self.cells_per_side
        axis = (np.arange(self.cells_per_side) + 0.5) * step
        if self.d == 1:
            return axis[:, None]
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        return np.column_stack([xx.ravel(), yy.ravel()])

    def pair_values(self, kernel: Kernel) -> np.ndarray:
        """M x M matrix of kernel values at minimum-image site distances."""
        pos = self.positions
        r = torus_distance(pos[:, None, :], pos[None, :, :], self.L)
        return np.asarray(kernel.eval_radius(r))

    def lattice_mass(self, kernel: Kernel) -> float:
        """Cell-sum quadrature of the kernel over the lattice (row sum times v)."""
        return float(self.v * np.sum(self.pair_values(kernel)[0]))


class SubsetSpace:
    """Enumeration of site subsets with at most ``cap`` elements."""

    def __init__(self, lattice: SiteLattice, cap: int | None = None):
        M = lattice.M
        cap = M if cap is None else int(cap)
        if cap > M:
            raise ValueError(f"invalid truncation: cap {cap} exceeds site count {M}")
        if cap < 0:
            raise ValueError("cap must be nonnegative")
        self.lattice = lattice
        self.M = M
        self.cap = cap
        if cap == M:
            masks = list(range(1 << M))
        else:
            masks = [m for m in range(1 << M) if m.bit_count() <= cap]
        self.masks = masks
        self.index = {m: i for i, m in enumerate(masks)}
        self.sizes = np.array([m.bit_count() for m in masks], dtype=np.int64)
        self.lp_weights = lattice.v ** self.sizes.astype(float)

    @property
    def dim(self) -> int:
        return len(self.masks)

    def sites_of(self, mask: int) -> list[int]:
        out = []
        while mask:
            low = mask & -mask
            out.append(low.bit_length() - 1)
            mask ^= low
        return out

    def mask_of(self, sites) -> int:
        m = 0
        for s in sites:
            m |= 1 << int(s)
        return m


@dataclass
class TruncatedFunction:
    """Real-valued map on the subsets of a :class:`SubsetSpace`.

    Entries for subsets above the cap implicitly read as zero.
    """

    space: SubsetSpace
    values: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.values is None:
            self.values = np.zeros(self.space.dim)
        else:
            self.values = np.asarray(self.values, dtype=float)
            if self.values.shape != (self.space.dim,):
                raise ValueError("values length must match the subset enumeration")

    def __getitem__(self, mask: int) -> float:
        idx = self.space.index.get(mask)
        return 0.0 if idx is None else float(self.values[idx])

    def __setitem__(self, mask: int, val: float) -> None:
        self.values[self.space.index[mask]] = val

    def copy(self) -> "TruncatedFunction":
        return TruncatedFunction(self.space, self.values.copy())

    @classmethod
    def from_callable(cls, space: SubsetSpace, fn) -> "TruncatedFunction":
        return cls(space, np.array([fn(m) for m in space.masks], dtype=float))

    @classmethod
    def from_size_profile(cls, space: SubsetSpace, by_size) -> "TruncatedFunction":
        """Values depending on |eta| only, e.g. geometric profiles c**|eta|."""
        prof = np.asarray([by_size(n) for n in range(space.cap + 1)], dtype=float)
        return cls(space, prof[space.sizes])

    # serialization: JSON entries [[site indices...], value]
    def to_json(self) -> str:
        entries = [
            [self.space.sites_of(m), float(v)]
            for m, v in zip(self.space.masks, self.values)
            if v != 0.0
        ]
        return json.dumps(
            {"M": self.space.M, "cap": self.space.cap, "entries": entries}, indent=None
        )

    @classmethod
    def from_json(cls, text: str, space: SubsetSpace) -> "TruncatedFunction":
        doc = json.loads(text)
        if doc["M"] != space.M or doc["cap"] != space.cap:
            raise ValueError("fixture space does not match the requested space")
        out = cls(space)
        for sites, val in doc["entries"]:
            out[space.mask_of(sites)] = float(val)
        return out


# -- integrals, transforms, pairings ----------------------------------------------


def lp_integral(F: TruncatedFunction, lat: SiteLattice | None = None) -> float:
    """Discrete Lebesgue-Poisson integral: sum of F(eta) * v^|eta|.

    Summing unordered subsets absorbs the 1/n! of the continuum measure.
    """
    w = F.space.lp_weights if lat is None else lat.v ** F.space.sizes.astype(float)
    return float(np.dot(F.values, w))


def zeta_transform(G: TruncatedFunction) -> TruncatedFunction:
    """Sub-configuration sum (KG)(gamma) = sum over eta subset of gamma of G(eta)."""
    space = G.space
    out = np.empty(space.dim)
    vals = G.values
    index = space.index
    for i, gamma in enumerate(space.masks):
        acc = 0.0
        sub = gamma
        while True:
            j = index.get(sub)
            if j is not None:
                acc += vals[j]
            if sub == 0:
                break
            sub = (sub - 1) & gamma
        out[i] = acc
    return TruncatedFunction(space, out)


def moebius_inverse(F: TruncatedFunction) -> TruncatedFunction:
    """Inverse of :func:`zeta_transform`: alternating sub-configuration sum."""
    space = F.space
    out = np.empty(space.dim)
    vals = F.values
    index = space.index
    for i, eta in enumerate(space.masks):
        n = eta.bit_count()
        acc = 0.0
        sub = eta
        while True:
            j = index.get(sub)
            if j is not None:
                sign = -1.0 if (n - sub.bit_count()) & 1 else 1.0
                acc += sign * vals[j]
            if sub == 0:
                break
            sub = (sub - 1) & eta
        out[i] = acc
    return TruncatedFunction(space, out)


def pairing(G: TruncatedFunction, k: TruncatedFunction, lat: SiteLattice | None = None) -> float:
    """Duality pairing: Lebesgue-Poisson integral of the pointwise product."""
    if G.space is not k.space and G.space.masks != k.space.masks:
        raise ValueError("pairing requires a common subset space")
    w = G.space.lp_weights if lat is None else lat.v ** G.space.sizes.astype(float)
    return float(np.dot(G.values * k.values, w))


def coefficient_norm(G: TruncatedFunction, alpha: float, lat: SiteLattice | None = None) -> float:
    """Weighted-l1 norm: sum of |G| * exp(-alpha |eta|) * v^|eta|."""
    w = G.space.lp_weights if lat is None else lat.v ** G.space.sizes.astype(float)
    return float(np.dot(np.abs(G.values), w * np.exp(-alpha * G.space.sizes)))


def correlation_norm(k: TruncatedFunction, alpha: float) -> float:
    """Weighted sup norm: max of |k| * exp(alpha |eta|)."""
    return float(np.max(np.abs(k.values) * np.exp(alpha * k.space.sizes)))


# -- density <-> correlation marginals --------------------------------------------


def correlation_of_density(R: TruncatedFunction) -> TruncatedFunction:
    """Marginalize a probability density into its correlation vector.

    q(eta) = sum over xi disjoint from eta of R(eta + xi) * v^|xi|; the
    discrete analogue of integrating out the unfixed particles.
    """
    space = R.space
    v = space.lattice.v
    full = (1 << space.M) - 1
    out = np.empty(space.dim)
    index = space.index
    vals = R.values
    for i, eta in enumerate(space.masks):
        comp = full & ~eta
        acc = 0.0
        sub = comp
        while True:
            j = index.get(eta | sub)
            if j is not None:
                acc += vals[j] * v ** sub.bit_count()
            if sub == 0:
                break
            sub = (sub - 1) & comp
        out[i] = acc
    return TruncatedFunction(space, out)


def density_of_correlation(k: TruncatedFunction) -> TruncatedFunction:
    """Invert :func:`correlation_of_density` (alternating superset sum)."""
    space = k.space
    if space.cap != space.M:
        raise ValueError("density reconstruction requires an uncapped space (cap == M)")
    v = space.lattice.v
    full = (1 << space.M) - 1
    out = np.empty(space.dim)
    index = space.index
    vals = k.values
    for i, eta in enumerate(space.masks):
        comp = full & ~eta
        acc = 0.0
        sub = comp
        while True:
            j = index.get(eta | sub)
            if j is not None:
                acc += vals[j] * (-v) ** sub.bit_count()
            if sub == 0:
                break
            sub = (sub - 1) & comp
        out[i] = acc
    return TruncatedFunction(space, out)
