"""Dense generators on the truncated subset space, with verification batteries.

Four generators are built independently from their defining formulas and
never from each other:

* the observable generator (the continuous-time Markov chain generator of
  the birth-death dynamics on site subsets),
* the forward generator (its Lebesgue-Poisson adjoint, acting on
  probability densities),
* the coefficient generator (the conjugation of the observable generator
  by the zeta transform, split into a contractive part ``A`` and a
  scale-losing perturbation ``B``),
* the correlation generator (the Lebesgue-Poisson adjoint of the
  coefficient generator, driving the correlation-vector evolution).

Dualities, stochasticity, scale-of-norm bounds and the Picard certificate
are checked *numerically* by the verification functions; they are test
outcomes, not construction shortcuts.

Finite-cell effect: on a single-occupancy lattice the exact conjugated
generator equals the continuum formulas with competition kernel
``a_minus + v * a_plus`` and mortality ``m + v * a_plus(0)``.  The builders
use these effective coefficients so that the zeta-conjugation identity,
the adjoint dualities and the density/correlation consistency all hold to
rounding on the finite space; as the cell volume v -> 0 the continuum
coefficients are recovered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .configspace import (
    SiteLattice,
    SubsetSpace,
    TruncatedFunction,
    coefficient_norm,
    correlation_norm,
    correlation_of_density,
    density_of_correlation,
    lp_integral,
    pairing,
)
from .kernels import ModelParams

__all__ = [
    "TruncatedOperator",
    "build_coefficient_generator",
    "build_correlation_generator",
    "build_observable_generator",
    "build_forward_generator",
    "semigroup_apply",
    "propagator",
    "existence_time",
    "OvcyannikovSchedule",
    "picard_iterate",
    "coefficient_operator_norm",
    "correlation_operator_norm",
    "perturbation_norm_bound",
    "adjoint_perturbation_norm_bound",
    "verify_bounds",
    "duality_battery",
    "stochasticity_battery",
    "local_density_consistency",
    "LocalDensityResult",
    "dual_pairing_residual",
    "Check",
    "VerificationReport",
]


@dataclass
class TruncatedOperator:
    """Dense matrix on the subset-indexed space, tagged by its role."""

    matrix: np.ndarray
    role: str
    space: SubsetSpace
    params: ModelParams
    parts: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def apply(self, f: TruncatedFunction) -> TruncatedFunction:
        return TruncatedFunction(self.space, self.matrix @ f.values)


class _SiteData:
    """Pairwise kernel values and effective finite-cell coefficients."""

    def __init__(self, lat: SiteLattice, p: ModelParams):
        self.lat = lat
        self.p = p
        self.v = lat.v
        self.Wp = lat.pair_values(p.a_plus)
        self.Wm = lat.pair_values(p.a_minus)
        self.Wm_eff = self.Wm + self.v * self.Wp
        self.m_eff = p.m + self.v * float(self.Wp[0, 0])
        # lattice (cell-sum) kernel masses; identical rows by translation invariance
        self.mass_plus = float(self.v * self.Wp[0].sum())
        self.mass_minus = float(self.v * self.Wm[0].sum())
        self.mass_minus_eff = float(self.v * self.Wm_eff[0].sum())

    def site_field(self, W: np.ndarray, y: int, sites: list[int]) -> float:
        if not sites:
            return 0.0
        return float(W[y, sites].sum())

    def pair_energy(self, W: np.ndarray, sites: list[int]) -> float:
        if len(sites) < 2:
            return 0.0
        sub = W[np.ix_(sites, sites)]
        return float(sub.sum() - np.trace(sub))


def _space(lat: SiteLattice, cap: int | None) -> SubsetSpace:
    return SubsetSpace(lat, cap)


def build_coefficient_generator(
    lat: SiteLattice, p: ModelParams, cap: int | None = None
) -> tuple[TruncatedOperator, TruncatedOperator]:
    """Generator of the zeta-coefficient evolution, split as (A, B).

    A = A1 + A2: diagonal decay plus the particle-number-raising birth sum
    (rows at the cap drop the raising term).  B = B1 + B2: the lowering
    competition sum plus the number-preserving relocation sum.  B loses a
    scale index, which is what the Picard construction exploits.
    """
    space = _space(lat, cap)
    sd = _SiteData(lat, p)
    D = space.dim
    A1 = np.zeros((D, D))
    A2 = np.zeros((D, D))
    B1 = np.zeros((D, D))
    B2 = np.zeros((D, D))
    full = (1 << space.M) - 1
    for r, eta in enumerate(space.masks):
        sites = space.sites_of(eta)
        n = len(sites)
        A1[r, r] = -(sd.m_eff * n + sd.pair_energy(sd.Wm_eff, sites))
        if n < space.cap:
            for y in space.sites_of(full & ~eta):
                A2[r, space.index[eta | (1 << y)]] += sd.v * sd.site_field(sd.Wp, y, sites)
        for x in sites:
            rest = [s for s in sites if s != x]
            B1[r, space.index[eta & ~(1 << x)]] -= sd.site_field(sd.Wm_eff, x, rest)
            base = eta & ~(1 << x)
            for y in space.sites_of(full & ~base):
                B2[r, space.index[base | (1 << y)]] += sd.v * float(sd.Wp[x, y])
    A = TruncatedOperator(A1 + A2, "coefficient_A", space, p, {"A1": A1, "A2": A2})
    B = TruncatedOperator(B1 + B2, "coefficient_B", space, p, {"B1": B1, "B2": B2})
    return A, B


def build_correlation_generator(
    lat: SiteLattice, p: ModelParams, cap: int | None = None, split: bool = False
):
    """Generator of the correlation-vector evolution, from its own formulas.

    Must agree with the weighted transpose of the coefficient generator;
    that agreement is verified numerically, never assumed.
    """
    space = _space(lat, cap)
    sd = _SiteData(lat, p)
    D = space.dim
    Ad = np.zeros((D, D))
    Bd = np.zeros((D, D))
    full = (1 << space.M) - 1
    for r, eta in enumerate(space.masks):
        sites = space.sites_of(eta)
        n = len(sites)
        Ad[r, r] = -(sd.m_eff * n + sd.pair_energy(sd.Wm_eff, sites))
        for x in sites:
            rest = [s for s in sites if s != x]
            Ad[r, space.index[eta & ~(1 << x)]] += sd.site_field(sd.Wp, x, rest)
            base = eta & ~(1 << x)
            for y in space.sites_of(full & ~base):
                Bd[r, space.index[base | (1 << y)]] += sd.v * float(sd.Wp[x, y])
        if n < space.cap:
            for y in space.sites_of(full & ~eta):
                Bd[r, space.index[eta | (1 << y)]] -= sd.v * sd.site_field(sd.Wm_eff, y, sites)
    if split:
        return (
            TruncatedOperator(Ad, "correlation_A", space, p),
            TruncatedOperator(Bd, "correlation_B", space, p),
        )
    return TruncatedOperator(Ad + Bd, "correlation", space, p, {"A": Ad, "B": Bd})


def build_observable_generator(
    lat: SiteLattice, p: ModelParams, cap: int | None = None
) -> TruncatedOperator:
    """Markov generator of the lattice birth-death chain, acting on functions.

    Death of an occupied site at rate m + competition field; birth onto an
    empty site y at rate v * dispersal field.  The diagonal carries the full
    event weight, so with a cap below the site count the chain is killed
    (not reflected) at the cap.
    """
    space = _space(lat, cap)
    sd = _SiteData(lat, p)
    D = space.dim
    Lmat = np.zeros((D, D))
    full = (1 << space.M) - 1
    for r, eta in enumerate(space.masks):
        sites = space.sites_of(eta)
        n = len(sites)
        empty = space.sites_of(full & ~eta)
        birth_total = sd.v * sum(sd.site_field(sd.Wp, y, sites) for y in empty)
        Lmat[r, r] = -(p.m * n + sd.pair_energy(sd.Wm, sites) + birth_total)
        for x in sites:
            rest = [s for s in sites if s != x]
            Lmat[r, space.index[eta & ~(1 << x)]] += p.m + sd.site_field(sd.Wm, x, rest)
        if n < space.cap:
            for y in empty:
                Lmat[r, space.index[eta | (1 << y)]] += sd.v * sd.site_field(sd.Wp, y, sites)
    return TruncatedOperator(Lmat, "observable", space, p)


def build_forward_generator(
    lat: SiteLattice, p: ModelParams, cap: int | None = None
) -> TruncatedOperator:
    """Lebesgue-Poisson adjoint of the observable generator (density evolution).

    The diagonal uses the cell-sum birth mass (not the continuum kernel
    mass), which makes the Lebesgue-Poisson integral of the image vanish
    exactly on the uncapped space; with a cap the birth flow out of the top
    level is lost and the semigroup is substochastic there.
    """
    space = _space(lat, cap)
    sd = _SiteData(lat, p)
    D = space.dim
    Lmat = np.zeros((D, D))
    full = (1 << space.M) - 1
    for r, eta in enumerate(space.masks):
        sites = space.sites_of(eta)
        n = len(sites)
        empty = space.sites_of(full & ~eta)
        birth_total = sd.v * sum(sd.site_field(sd.Wp, y, sites) for y in empty)
        Lmat[r, r] = -(p.m * n + sd.pair_energy(sd.Wm, sites) + birth_total)
        if n < space.cap:
            for y in empty:
                Lmat[r, space.index[eta | (1 << y)]] += sd.v * (
                    p.m + sd.site_field(sd.Wm, y, sites)
                )
        for x in sites:
            rest = [s for s in sites if s != x]
            Lmat[r, space.index[eta & ~(1 << x)]] += sd.site_field(sd.Wp, x, rest)
    return TruncatedOperator(Lmat, "forward", space, p)


# -- semigroups -------------------------------------------------------------------


def propagator(op: TruncatedOperator, t: float) -> np.ndarray:
    """Matrix exponential exp(t * op) by scaling-and-squaring."""
    if t < 0.0:
        raise ValueError("propagation time must be nonnegative")
    return expm(op.matrix * t)


def semigroup_apply(op: TruncatedOperator, t: float, x: TruncatedFunction) -> TruncatedFunction:
    """Evaluate exp(t * op) applied to x."""
    return TruncatedFunction(op.space, propagator(op, t) @ x.values)


# -- existence time and schedules ---------------------------------------------------


def existence_time(alpha_low: float, alpha_high: float, p: ModelParams) -> float:
    """Guaranteed lifetime of the scale-of-norms evolution between two indices.

    (alpha_high - alpha_low) / (<a_plus> + <a_minus> exp(-alpha_low)); +inf
    when both kernel masses vanish.
    """
    if not alpha_low < alpha_high:
        raise ValueError("alpha_low must be strictly below alpha_high")
    rate = p.a_plus.total_mass() + p.a_minus.total_mass() * math.exp(-alpha_low)
    if rate == 0.0:
        return math.inf
    return (alpha_high - alpha_low) / rate


@dataclass(frozen=True)
class OvcyannikovSchedule:
    """Uniform ladder of norm indices with its guaranteed horizon.

    ``mass_plus``/``mass_minus`` are the kernel masses of the model being
    certified; on a lattice these are the cell-sum masses of the effective
    kernels, making every rung bound a finite-dimensional theorem.
    """

    alpha_low: float
    alpha_high: float
    n: int
    mass_plus: float
    mass_minus: float

    def __post_init__(self):
        if not self.alpha_low < self.alpha_high:
            raise ValueError("alpha_low must be strictly below alpha_high")
        if self.n < 1:
            raise ValueError("ladder depth must be at least 1")

    @classmethod
    def from_params(cls, p: ModelParams, alpha_low: float, alpha_high: float, n: int):
        return cls(alpha_low, alpha_high, n, p.a_plus.total_mass(), p.a_minus.total_mass())

    @classmethod
    def from_lattice(
        cls, lat: SiteLattice, p: ModelParams, alpha_low: float, alpha_high: float, n: int
    ):
        mp = lat.lattice_mass(p.a_plus)
        mm = lat.lattice_mass(p.a_minus) + lat.v * mp
        return cls(alpha_low, alpha_high, n, mp, mm)

    def rate(self, alpha: float) -> float:
        return self.mass_plus + self.mass_minus * math.exp(-alpha)

    @property
    def T_star(self) -> float:
        r = self.rate(self.alpha_low)
        return math.inf if r == 0.0 else (self.alpha_high - self.alpha_low) / r

    @property
    def step(self) -> float:
        return (self.alpha_high - self.alpha_low) / self.n

    def coeff_rung(self, l: int) -> float:
        """Ascending ladder for the coefficient side."""
        return self.alpha_low + l * self.step

    def corr_rung(self, l: int) -> float:
        """Descending ladder for the correlation side."""
        return self.alpha_high - l * self.step

    def coeff_rung_time(self, l: int) -> float:
        """Horizon of the depth-l sub-ladder ending at coeff_rung(l)."""
        return l * self.step / self.rate(self.alpha_low)

    def corr_rung_time(self, l: int) -> float:
        """Horizon of the depth-l sub-ladder ending at corr_rung(l)."""
        return l * self.step / self.rate(self.corr_rung(l))


# -- Picard iteration ----------------------------------------------------------------


def _prefix_weights(j: int, dt: float) -> np.ndarray:
    """Fourth-order quadrature weights for the nodes 0..max(j, 2) of [0, j*dt].

    Composite Simpson for even prefixes, Simpson plus a 3/8 block for odd
    ones, and the three-point open formula for the first panel (which reads
    one node past the interval).
    """
    if j == 0:
        return np.zeros(1)
    if j == 1:
        return dt * np.array([5.0, 8.0, -1.0]) / 12.0
    w = np.zeros(j + 1)
    if j % 2 == 0:
        w[0] = w[j] = dt / 3.0
        w[1:j:2] = 4.0 * dt / 3.0
        w[2:j:2] = 2.0 * dt / 3.0
    else:
        k = j - 3
        if k > 0:
            w[0] = dt / 3.0
            w[1:k:2] = 4.0 * dt / 3.0
            w[2:k:2] = 2.0 * dt / 3.0
            w[k] += dt / 3.0
        w[k] += 3.0 * dt / 8.0
        w[k + 1] += 9.0 * dt / 8.0
        w[k + 2] += 9.0 * dt / 8.0
        w[j] += 3.0 * dt / 8.0
    return w


def picard_iterate(
    A: TruncatedOperator,
    B: TruncatedOperator,
    x0: TruncatedFunction,
    sched: OvcyannikovSchedule,
    t: float,
    panels: int = 64,
    depth: int | None = None,
    allow_beyond_horizon: bool = False,
) -> list[TruncatedFunction]:
    """Successive approximations of the perturbed evolution at time t.

    Level 0 is the unperturbed semigroup; level l solves the inhomogeneous
    problem driven by level l-1 through the variation-of-constants integral,
    discretized by a fourth-order composite rule with ``panels`` panels.
    Returns the iterates [x^(0), ..., x^(depth)] evaluated at time t.
    """
    depth = sched.n if depth is None else int(depth)
    if t < 0.0:
        raise ValueError("time must be nonnegative")
    if t >= sched.T_star and not allow_beyond_horizon:
        raise ValueError(
            f"t = {t:g} is outside the guaranteed interval [0, {sched.T_star:g}); "
            "pass allow_beyond_horizon=True to override"
        )
    space = A.space
    if t == 0.0:
        return [x0.copy() for _ in range(depth + 1)]
    P = int(panels)
    dt = t / P
    E1 = expm(A.matrix * dt)
    Spow = [np.eye(space.dim)]
    for _ in range(P):
        Spow.append(Spow[-1] @ E1)
    Em1 = expm(-A.matrix * dt)  # only the first-panel open formula looks back

    def S(k: int) -> np.ndarray:
        return Em1 if k == -1 else Spow[k]

    base = [Spow[j] @ x0.values for j in range(P + 1)]
    prev = base
    iterates = [TruncatedFunction(space, base[P].copy())]
    for _ in range(depth):
        u = [B.matrix @ g for g in prev]
        cur = []
        for j in range(P + 1):
            w = _prefix_weights(j, dt)
            acc = base[j].copy()
            for i, wi in enumerate(w):
                if wi != 0.0:
                    acc += wi * (S(j - i) @ u[i])
            cur.append(acc)
        iterates.append(TruncatedFunction(space, cur[P].copy()))
        prev = cur
    return iterates


# -- operator norms and bounds ---------------------------------------------------------


def coefficient_operator_norm(
    T: np.ndarray, space: SubsetSpace, alpha_from: float, alpha_to: float
) -> float:
    """Exact operator norm between weighted-l1 coefficient spaces (max column sum)."""
    sizes = space.sizes
    wout = np.exp(-alpha_to * sizes) * space.lp_weights
    win = np.exp(-alpha_from * sizes) * space.lp_weights
    return float(np.max((np.abs(T).T @ wout) / win))


def correlation_operator_norm(
    T: np.ndarray, space: SubsetSpace, alpha_from: float, alpha_to: float
) -> float:
    """Exact operator norm between weighted-sup correlation spaces (max row sum)."""
    sizes = space.sizes
    return float(np.max(np.exp(alpha_to * sizes) * (np.abs(T) @ np.exp(-alpha_from * sizes))))


def perturbation_norm_bound(
    mass_plus: float, mass_minus: float, alpha_from: float, alpha_to: float
) -> float:
    """Scale-loss bound for the coefficient perturbation (alpha_to > alpha_from)."""
    return (mass_plus + mass_minus * math.exp(-alpha_to)) / (math.e * (alpha_to - alpha_from))


def adjoint_perturbation_norm_bound(
    mass_plus: float, mass_minus: float, alpha_from: float, alpha_to: float
) -> float:
    """Scale-loss bound for the correlation perturbation (alpha_from > alpha_to)."""
    return (mass_plus + mass_minus * math.exp(-alpha_to)) / (math.e * (alpha_from - alpha_to))


def _random_norm_ratio(T, space, norm_from, norm_to, rng, samples):
    best = 0.0
    for _ in range(samples):
        x = TruncatedFunction(space, rng.standard_normal(space.dim))
        nf = norm_from(x)
        if nf == 0.0:
            continue
        best = max(best, norm_to(TruncatedFunction(space, T @ x.values)) / nf)
    return best


# -- verification batteries --------------------------------------------------------------


@dataclass
class Check:
    name: str
    value: float
    bound: float
    passed: bool
    info: dict = field(default_factory=dict)


@dataclass
class VerificationReport:
    checks: list[Check] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name, value, bound, passed, **info):
        self.checks.append(Check(name, float(value), float(bound), bool(passed), dict(info)))

    def extend(self, other: "VerificationReport"):
        self.checks.extend(other.checks)

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "checks": [
                {
                    "name": c.name,
                    "value": c.value,
                    "bound": c.bound,
                    "pass": c.passed,
                    **({"info": c.info} if c.info else {}),
                }
                for c in self.checks
            ],
        }


def verify_bounds(
    sched: OvcyannikovSchedule,
    p: ModelParams,
    lat: SiteLattice,
    cap: int | None = None,
    t: float | None = None,
    panels: int = 64,
    samples: int = 20,
    tol: float = 1e-6,
    seed: int = 20260811,
) -> VerificationReport:
    """Norm-bound and Picard-certificate battery on one lattice model.

    Checks, per ladder rung: the measured perturbation norms against their
    scale-loss bounds on both the coefficient and correlation sides, the
    per-level Picard differences against the factorial certificate (using
    the depth-l sub-ladder horizon, labeled separately on the correlation
    side), and the two-index generator norm against its explicit constant.
    Failures are reported, not raised.
    """
    rng = np.random.default_rng(seed)
    report = VerificationReport()
    A, B = build_coefficient_generator(lat, p, cap)
    Ad, Bd = build_correlation_generator(lat, p, cap, split=True)
    space = A.space
    if t is None:
        t = 0.5 * sched.T_star if math.isfinite(sched.T_star) else 0.5
    slack = 1.0 + 1e-12

    for l in range(1, sched.n + 1):
        a_from, a_to = sched.coeff_rung(l - 1), sched.coeff_rung(l)
        measured = coefficient_operator_norm(B.matrix, space, a_from, a_to)
        bound = perturbation_norm_bound(sched.mass_plus, sched.mass_minus, a_from, a_to)
        lb = _random_norm_ratio(
            B.matrix,
            space,
            lambda x: coefficient_norm(x, a_from),
            lambda x: coefficient_norm(x, a_to),
            rng,
            samples,
        )
        report.add(
            f"perturbation_norm_rung_{l}", measured, bound, measured <= bound * slack,
            random_lower_bound=lb,
        )
        b_from, b_to = sched.corr_rung(l - 1), sched.corr_rung(l)
        measured_d = correlation_operator_norm(Bd.matrix, space, b_from, b_to)
        bound_d = adjoint_perturbation_norm_bound(sched.mass_plus, sched.mass_minus, b_from, b_to)
        report.add(
            f"adjoint_perturbation_norm_rung_{l}", measured_d, bound_d,
            measured_d <= bound_d * slack,
        )

    # two-index generator norm against its explicit constant
    kappa = sched.alpha_high - sched.alpha_low
    sd = _SiteData(lat, p)
    sup_p = float(sd.Wp.max())
    sup_m_eff = float(sd.Wm_eff.max())
    gen_measured = coefficient_operator_norm(
        A.matrix + B.matrix, space, sched.alpha_low, sched.alpha_high
    )
    gen_bound = (
        sd.m_eff / (math.e * kappa)
        + sup_m_eff * (2.0 / (math.e * kappa)) ** 2
        + math.exp(sched.alpha_high) * sup_p * (2.0 / (math.e * kappa)) ** 2
        + perturbation_norm_bound(sched.mass_plus, sched.mass_minus, sched.alpha_low, sched.alpha_high)
    )
    report.add("generator_norm_window", gen_measured, gen_bound, gen_measured <= gen_bound * slack)

    if t == 0.0 or not math.isfinite(sched.T_star):
        return report

    # coefficient-side Picard certificate
    g0 = TruncatedFunction(space, np.abs(rng.standard_normal(space.dim)))
    g0.values /= coefficient_norm(g0, sched.alpha_low)
    iters = picard_iterate(A, B, g0, sched, t, panels=panels)
    iters_fine = picard_iterate(A, B, g0, sched, t, panels=2 * panels)
    for l in range(1, sched.n + 1):
        al = sched.coeff_rung(l)
        diff = TruncatedFunction(space, iters[l].values - iters[l - 1].values)
        value = coefficient_norm(diff, al)
        quad = abs(
            coefficient_norm(
                TruncatedFunction(space, iters_fine[l].values - iters_fine[l - 1].values), al
            )
            - value
        )
        Tl = sched.coeff_rung_time(l)
        bound = (
            (1.0 / math.factorial(l)) * (l / math.e) ** l * (t / Tl) ** l
        ) * coefficient_norm(g0, sched.alpha_low)
        report.add(
            f"picard_coefficient_level_{l}", value, bound + tol + 2.0 * quad,
            value <= bound + tol + 2.0 * quad, certificate=bound, quadrature_estimate=quad,
            rung_alpha=al, rung_time=Tl,
        )

    # correlation-side certificate, labeled with its own sub-ladder horizon
    k0 = TruncatedFunction(
        space, np.exp(-sched.alpha_high * space.sizes) * rng.uniform(0.5, 1.0, space.dim)
    )
    t_corr = min(t, 0.9 * min(sched.corr_rung_time(l) for l in range(1, sched.n + 1)))
    kiters = picard_iterate(Ad, Bd, k0, sched, t_corr, panels=panels, allow_beyond_horizon=True)
    kiters_fine = picard_iterate(
        Ad, Bd, k0, sched, t_corr, panels=2 * panels, allow_beyond_horizon=True
    )
    for l in range(1, sched.n + 1):
        bl = sched.corr_rung(l)
        diff = TruncatedFunction(space, kiters[l].values - kiters[l - 1].values)
        value = correlation_norm(diff, bl)
        quad = abs(
            correlation_norm(
                TruncatedFunction(space, kiters_fine[l].values - kiters_fine[l - 1].values), bl
            )
            - value
        )
        Tl = sched.corr_rung_time(l)
        bound = (
            (1.0 / math.factorial(l)) * (l / math.e) ** l * (t_corr / Tl) ** l
        ) * correlation_norm(k0, sched.alpha_high)
        report.add(
            f"picard_correlation_level_{l}", value, bound + tol + 2.0 * quad,
            value <= bound + tol + 2.0 * quad, certificate=bound, quadrature_estimate=quad,
            rung_alpha=bl, rung_time=Tl, time=t_corr,
        )
    return report


def duality_battery(
    lat: SiteLattice,
    p: ModelParams,
    cap: int | None = None,
    draws: int = 100,
    tol: float = 1e-10,
    seed: int = 7,
) -> VerificationReport:
    """Adjointness of the two generator pairs under the duality pairing."""
    rng = np.random.default_rng(seed)
    A, B = build_coefficient_generator(lat, p, cap)
    Lhat = A.matrix + B.matrix
    Ldelta = build_correlation_generator(lat, p, cap).matrix
    Lobs = build_observable_generator(lat, p, cap).matrix
    Lfwd = build_forward_generator(lat, p, cap).matrix
    space = A.space
    res_ck = 0.0
    res_fr = 0.0
    for _ in range(draws):
        G = rng.standard_normal(space.dim)
        k = rng.standard_normal(space.dim)
        F = rng.standard_normal(space.dim)
        R = rng.standard_normal(space.dim)
        w = space.lp_weights
        res_ck = max(res_ck, abs(np.dot(Lhat @ G, k * w) - np.dot(G, (Ldelta @ k) * w)))
        res_fr = max(res_fr, abs(np.dot(Lobs @ F, R * w) - np.dot(F, (Lfwd @ R) * w)))
    report = VerificationReport()
    report.add("duality_coefficient_correlation", res_ck, tol, res_ck <= tol, draws=draws)
    report.add("duality_observable_forward", res_fr, tol, res_fr <= tol, draws=draws)
    return report


def stochasticity_battery(
    lat: SiteLattice,
    p: ModelParams,
    times: tuple[float, ...] = (0.1, 1.0),
    draws: int = 50,
    tol: float = 1e-12,
    seed: int = 11,
) -> VerificationReport:
    """Mass conservation and positivity of the density semigroup (uncapped space)."""
    rng = np.random.default_rng(seed)
    Lfwd = build_forward_generator(lat, p, cap=None)
    space = Lfwd.space
    w = space.lp_weights
    scale = float(np.abs(Lfwd.matrix).max()) or 1.0
    res = 0.0
    for _ in range(draws):
        R = rng.standard_normal(space.dim)
        res = max(res, abs(np.dot(w, Lfwd.matrix @ R)))
    report = VerificationReport()
    report.add("forward_mass_balance", res, tol * scale, res <= tol * scale, draws=draws)
    for t in times:
        P = propagator(Lfwd, t)
        neg = float(P.min())
        mass_err = float(np.max(np.abs(w @ P - w)))
        report.add(f"forward_positivity_t_{t:g}", -neg, tol, neg >= -tol)
        report.add(f"forward_mass_preservation_t_{t:g}", mass_err, tol * 10, mass_err <= tol * 10)
    return report


# -- consistency of the density and correlation pictures -----------------------------------


@dataclass
class LocalDensityResult:
    residual: float
    min_density: float
    realizable: bool
    roundtrip_error: float


def local_density_consistency(
    k0: TruncatedFunction, lat: SiteLattice, p: ModelParams, t: float
) -> LocalDensityResult:
    """Evolve a density and its correlation vector separately and compare.

    Reconstructs the density from the correlation vector by the alternating
    superset sum, pushes it through the forward semigroup, marginalizes
    back, and measures the gap to the direct correlation-generator
    evolution.  Requires the uncapped space.  A non-positive reconstructed
    density is reported, not raised.
    """
    space = k0.space
    if space.cap != space.M:
        raise ValueError("local-density consistency requires cap == M")
    R0 = density_of_correlation(k0)
    min_density = float(R0.values.min())
    realizable = min_density >= -1e-12
    q0 = correlation_of_density(R0)
    roundtrip = float(np.max(np.abs(q0.values - k0.values)))
    Lfwd = build_forward_generator(lat, p, cap=None)
    Ldelta = build_correlation_generator(lat, p, cap=None)
    Rt = semigroup_apply(Lfwd, t, R0)
    kt = semigroup_apply(Ldelta, t, q0)
    qt = correlation_of_density(Rt)
    residual = float(np.max(np.abs(qt.values - kt.values)))
    return LocalDensityResult(residual, min_density, realizable, roundtrip)


def dual_pairing_residual(
    G0: TruncatedFunction,
    k0: TruncatedFunction,
    lat: SiteLattice,
    p: ModelParams,
    t: float,
    cap: int | None = None,
) -> float:
    """| <exp(t Lhat) G0, k0> - <G0, exp(t Ldelta) k0> | under the duality pairing."""
    A, B = build_coefficient_generator(lat, p, cap)
    total = TruncatedOperator(A.matrix + B.matrix, "coefficient", A.space, p)
    Ldelta = build_correlation_generator(lat, p, cap)
    left = pairing(semigroup_apply(total, t, G0), k0)
    right = pairing(G0, semigroup_apply(Ldelta, t, k0))
    return abs(left - right)
