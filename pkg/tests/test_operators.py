import math

import numpy as np
import pytest
from scipy.linalg import expm

from spatlog.configspace import (
    SiteLattice,
    SubsetSpace,
    TruncatedFunction,
    coefficient_norm,
    correlation_norm,
    correlation_of_density,
    lp_integral,
    pairing,
    zeta_transform,
)
from spatlog.kernels import ModelParams, tophat_kernel, zero_kernel
from spatlog.operators import (
    OvcyannikovSchedule,
    TruncatedOperator,
    _prefix_weights,
    build_coefficient_generator,
    build_correlation_generator,
    build_forward_generator,
    build_observable_generator,
    dual_pairing_residual,
    duality_battery,
    existence_time,
    local_density_consistency,
    picard_iterate,
    propagator,
    semigroup_apply,
    stochasticity_battery,
    verify_bounds,
)


def fixture(M=4, v=1.0, m=0.7, hp=0.25, hm=0.5, R=1.0, cap=None):
    """Tophat model on an M-site ring; theta = hp/hm."""
    a_plus = tophat_kernel(hp, R) if hp > 0 else zero_kernel()
    a_minus = tophat_kernel(hm, R) if hm > 0 else zero_kernel()
    p = ModelParams(m, a_plus, a_minus, L=M * v, d=1)
    lat = SiteLattice(M * v, 1, M)
    return p, lat, SubsetSpace(lat, cap)


def zeta_matrix(space):
    D = space.dim
    K = np.zeros((D, D))
    for j in range(D):
        K[:, j] = zeta_transform(TruncatedFunction(space, np.eye(D)[j])).values
    return K


class TestStructure:
    def test_pure_death_diagonal(self):
        p, lat, space = fixture(hp=0.0, hm=0.0, m=1.3)
        A, B = build_coefficient_generator(lat, p)
        assert np.allclose(A.parts["A2"], 0.0) and np.allclose(B.matrix, 0.0)
        assert np.allclose(np.diag(A.matrix), -1.3 * space.sizes)

    def test_two_site_hand_example(self):
        # sites half a box apart, v=0.5, m=1, unit-height competition covering them:
        # diagonal over {empty, {1}, {2}, {1,2}} is (0, -1, -1, -4)
        p, lat, space = fixture(M=2, v=0.5, m=1.0, hp=0.0, hm=1.0, R=0.5)
        A, _ = build_coefficient_generator(lat, p)
        diag = {mask: A.matrix[i, i] for i, mask in enumerate(space.masks)}
        assert diag[0b00] == 0.0
        assert diag[0b01] == diag[0b10] == -1.0
        assert diag[0b11] == pytest.approx(-4.0, abs=1e-14)

    def test_lowering_on_empty_indicator_vanishes(self):
        p, lat, space = fixture()
        _, B = build_coefficient_generator(lat, p)
        delta = np.zeros(space.dim)
        delta[space.index[0]] = 1.0
        assert np.allclose(B.parts["B1"] @ delta, 0.0)  # no competition from the void

    def test_part_grading(self):
        p, lat, space = fixture(M=3)
        A, B = build_coefficient_generator(lat, p)
        sizes = space.sizes
        for name, part, shift in (("A2", A.parts["A2"], 1), ("B1", B.parts["B1"], -1), ("B2", B.parts["B2"], 0)):
            rows, cols = np.nonzero(part)
            assert np.all(sizes[cols] == sizes[rows] + shift), name

    def test_correlation_generator_structure(self):
        p, lat, space = fixture(hp=0.0, hm=0.0, m=0.9)
        Ld = build_correlation_generator(lat, p)
        assert np.allclose(Ld.matrix, np.diag(-0.9 * space.sizes))

    def test_raising_adjoint_vanishes_on_singletons(self):
        p, lat, space = fixture()
        Ld = build_correlation_generator(lat, p, split=True)[0]
        for i, mask in enumerate(space.masks):
            if mask.bit_count() == 1:
                row = Ld.matrix[i].copy()
                row[i] = 0.0
                assert row[space.index[0]] == 0.0  # dispersal field of the void is zero

    def test_invalid_truncation(self):
        p, lat, _ = fixture()
        with pytest.raises(ValueError, match="truncation"):
            build_coefficient_generator(lat, p, cap=lat.M + 1)


class TestDualities:
    @pytest.mark.parametrize("M", [3, 4, 5])
    def test_coefficient_correlation_transpose(self, M, rng):
        p, lat, space = fixture(M=M)
        A, B = build_coefficient_generator(lat, p)
        Ld = build_correlation_generator(lat, p)
        w = space.lp_weights
        for _ in range(30):
            G = TruncatedFunction(space, rng.standard_normal(space.dim))
            k = TruncatedFunction(space, rng.standard_normal(space.dim))
            lhs = pairing(TruncatedFunction(space, (A.matrix + B.matrix) @ G.values), k)
            rhs = pairing(G, TruncatedFunction(space, Ld.matrix @ k.values))
            assert abs(lhs - rhs) < 1e-10

    @pytest.mark.parametrize("M", [3, 4, 5])
    def test_observable_forward_adjoint(self, M, rng):
        p, lat, space = fixture(M=M)
        Lo = build_observable_generator(lat, p)
        Lf = build_forward_generator(lat, p)
        for _ in range(30):
            F = TruncatedFunction(space, rng.standard_normal(space.dim))
            R = TruncatedFunction(space, rng.standard_normal(space.dim))
            lhs = pairing(TruncatedFunction(space, Lo.matrix @ F.values), R)
            rhs = pairing(F, TruncatedFunction(space, Lf.matrix @ R.values))
            assert abs(lhs - rhs) < 1e-10

    def test_duality_holds_under_truncation(self, rng):
        p, lat, space = fixture(M=5, cap=3)
        A, B = build_coefficient_generator(lat, p, cap=3)
        Ld = build_correlation_generator(lat, p, cap=3)
        w = space.lp_weights
        G = rng.standard_normal(space.dim)
        k = rng.standard_normal(space.dim)
        lhs = np.dot((A.matrix + B.matrix) @ G, k * w)
        rhs = np.dot(G, (Ld.matrix @ k) * w)
        assert abs(lhs - rhs) < 1e-11

    def test_symbol_identity(self):
        # the coefficient generator is exactly the zeta-conjugated chain generator
        p, lat, space = fixture(M=4)
        A, B = build_coefficient_generator(lat, p)
        Lo = build_observable_generator(lat, p)
        K = zeta_matrix(space)
        assert np.max(np.abs(Lo.matrix @ K - K @ (A.matrix + B.matrix))) < 1e-12

    def test_battery_passes(self):
        p, lat, _ = fixture(M=4)
        assert duality_battery(lat, p, draws=30).passed


class TestForwardGenerator:
    def test_mass_balance(self, rng):
        p, lat, space = fixture(M=4)
        Lf = build_forward_generator(lat, p)
        w = space.lp_weights
        for _ in range(50):
            R = rng.standard_normal(space.dim)
            assert abs(np.dot(w, Lf.matrix @ R)) < 1e-12 * space.dim

    def test_hand_example(self):
        # pure death, two sites, v=0.5, m=2: forward image of a singleton density
        p, lat, space = fixture(M=2, v=0.5, m=2.0, hp=0.0, hm=0.0)
        Lf = build_forward_generator(lat, p)
        R = np.zeros(space.dim)
        R[space.index[0b01]] = 1.0
        out = Lf.matrix @ R
        assert out[space.index[0]] == pytest.approx(1.0)  # v * m * R = 0.5 * 2
        assert out[space.index[0b01]] == pytest.approx(-2.0)
        assert lp_integral(TruncatedFunction(space, out)) == pytest.approx(0.0, abs=1e-14)

    @pytest.mark.parametrize("t", [0.1, 1.0])
    def test_semigroup_stochastic(self, t):
        p, lat, space = fixture(M=4)
        Lf = build_forward_generator(lat, p)
        P = propagator(Lf, t)
        assert P.min() >= -1e-12
        w = space.lp_weights
        assert np.max(np.abs(w @ P - w)) < 1e-12

    def test_substochastic_at_cap(self, rng):
        # with a cap below the site count, birth flow out of the top level is killed
        p, lat, space = fixture(M=4, cap=2)
        Lf = build_forward_generator(lat, p, cap=2)
        w = space.lp_weights
        R = np.abs(rng.standard_normal(space.dim))
        assert np.dot(w, Lf.matrix @ R) < 1e-12
        P = propagator(Lf, 0.5)
        assert np.all(w @ P <= w + 1e-12)


class TestSemigroup:
    def test_identity_at_zero(self, rng):
        p, lat, space = fixture()
        A, _ = build_coefficient_generator(lat, p)
        G = TruncatedFunction(space, rng.standard_normal(space.dim))
        assert np.allclose(semigroup_apply(A, 0.0, G).values, G.values)

    def test_negative_time_rejected(self, rng):
        p, lat, space = fixture()
        A, _ = build_coefficient_generator(lat, p)
        with pytest.raises(ValueError):
            semigroup_apply(A, -0.1, TruncatedFunction(space))

    def test_pure_death_diagonal_decay(self):
        p, lat, space = fixture(hp=0.0, hm=0.0, m=0.8)
        A, _ = build_coefficient_generator(lat, p)
        G = TruncatedFunction(space)
        eta = space.masks[space.dim - 1]
        G[eta] = 1.0
        out = semigroup_apply(A, 0.7, G)
        assert out[eta] == pytest.approx(math.exp(-0.8 * eta.bit_count() * 0.7), rel=1e-12)

    def test_contraction_for_positive_data(self, rng):
        # theta = 0.4, alpha = 0: the unperturbed semigroup contracts
        p, lat, space = fixture(hp=0.2, hm=0.5, m=1.0)
        A, _ = build_coefficient_generator(lat, p)
        for _ in range(100):
            G = TruncatedFunction(space, np.abs(rng.standard_normal(space.dim)))
            out = semigroup_apply(A, 0.3, G)
            assert coefficient_norm(out, 0.0) <= coefficient_norm(G, 0.0) + 1e-10


class TestExistenceTime:
    def test_hand_value(self):
        p = ModelParams(0.1, tophat_kernel(0.5, 1.0), tophat_kernel(0.5, 1.0), L=10.0)
        assert existence_time(-1.0, 0.0, p) == pytest.approx(1.0 / (1.0 + math.e), abs=1e-12)

    def test_no_competition(self):
        p = ModelParams(0.1, tophat_kernel(1.0, 1.0), zero_kernel(), L=10.0)
        assert existence_time(-0.5, 0.5, p) == pytest.approx(0.5, abs=1e-14)

    def test_linearity_in_window(self):
        # widening the window above the fixed lower index scales the horizon linearly
        p = ModelParams(0.1, tophat_kernel(0.5, 1.0), tophat_kernel(0.25, 2.0), L=10.0)
        assert existence_time(-1.0, 1.0, p) == pytest.approx(
            2.0 * existence_time(-1.0, 0.0, p), rel=1e-14
        )

    def test_zero_rates_sentinel(self):
        p = ModelParams(0.1, zero_kernel(), zero_kernel(), L=10.0)
        assert existence_time(-1.0, 0.0, p) == math.inf

    def test_bad_window(self):
        p = ModelParams(0.1, zero_kernel(), zero_kernel(), L=10.0)
        with pytest.raises(ValueError):
            existence_time(0.0, 0.0, p)


class TestPrefixWeights:
    def test_fourth_order_on_exponential(self):
        # oracle: exact integral of exp over every prefix
        for P in (16, 32):
            dt = 1.0 / P
            f = np.exp(np.arange(P + 1) * dt)
            worst = 0.0
            for j in range(1, P + 1):
                w = _prefix_weights(j, dt)
                approx = float(np.dot(w, f[: len(w)]))
                worst = max(worst, abs(approx - (math.exp(j * dt) - 1.0)))
            assert worst < 2.0 * (dt**4)

    def test_polynomials_integrated_exactly(self):
        # quadratics exact everywhere; cubics exact except the first-panel
        # open formula, whose local defect is O(dt^4)
        dt = 0.1
        for deg in (0, 1, 2, 3):
            f = (np.arange(9) * dt) ** deg
            for j in range(1, 9):
                w = _prefix_weights(j, dt)
                exact = (j * dt) ** (deg + 1) / (deg + 1)
                got = float(np.dot(w, f[: len(w)]))
                if deg == 3 and j == 1:
                    assert abs(got - exact) < dt**4
                else:
                    assert got == pytest.approx(exact, abs=1e-13)


class TestPicard:
    def make(self, cap=3):
        p, lat, space = fixture(M=4, cap=cap)
        A, B = build_coefficient_generator(lat, p, cap=cap)
        sched = OvcyannikovSchedule.from_lattice(lat, p, -0.5, 0.0, 5)
        return p, lat, space, A, B, sched

    def test_unperturbed_iterates_constant(self, rng):
        p, lat, space, A, B, sched = self.make()
        zero = TruncatedOperator(np.zeros_like(B.matrix), "coefficient_B", space, p)
        G0 = TruncatedFunction(space, rng.standard_normal(space.dim))
        t = 0.5 * sched.T_star
        iters = picard_iterate(A, zero, G0, sched, t, panels=16)
        ref = semigroup_apply(A, t, G0).values
        for it in iters:
            assert np.allclose(it.values, ref, atol=1e-12)

    def test_first_level_with_frozen_flow(self, rng):
        # A = 0: the level-1 iterate is x0 + t * B x0 exactly
        p, lat, space, A, B, sched = self.make()
        zeroA = TruncatedOperator(np.zeros_like(A.matrix), "coefficient_A", space, p)
        G0 = TruncatedFunction(space, rng.standard_normal(space.dim))
        t = 0.05
        iters = picard_iterate(zeroA, B, G0, sched, t, panels=8, depth=1)
        assert np.allclose(iters[1].values, G0.values + t * (B.matrix @ G0.values), atol=1e-12)

    def test_converges_to_matrix_exponential(self, rng):
        p, lat, space, A, B, sched = self.make()
        G0 = TruncatedFunction(space, rng.standard_normal(space.dim))
        t = 0.5 * sched.T_star
        iters = picard_iterate(A, B, G0, sched, t, panels=64, depth=12)
        full = TruncatedOperator(A.matrix + B.matrix, "coefficient", space, p)
        exact = propagator(full, t) @ G0.values
        assert np.max(np.abs(iters[-1].values - exact)) < 1e-6

    def test_horizon_guard(self, rng):
        p, lat, space, A, B, sched = self.make()
        G0 = TruncatedFunction(space, rng.standard_normal(space.dim))
        with pytest.raises(ValueError, match="guaranteed interval"):
            picard_iterate(A, B, G0, sched, 2.0 * sched.T_star)
        picard_iterate(A, B, G0, sched, 2.0 * sched.T_star, panels=8, depth=1,
                       allow_beyond_horizon=True)


class TestVerifyBounds:
    def test_zero_time_differences_vanish(self):
        p, lat, _ = fixture(M=4)
        sched = OvcyannikovSchedule.from_lattice(lat, p, -0.5, 0.0, 3)
        rep = verify_bounds(sched, p, lat, cap=3, t=0.0)
        assert rep.passed

    def test_contact_free_trivial(self):
        p, lat, _ = fixture(M=3, hp=0.0, hm=0.0, m=1.0)
        sched = OvcyannikovSchedule(-0.5, 0.0, 3, 0.0, 0.0)
        rep = verify_bounds(sched, p, lat)
        assert rep.passed

    def test_certificates_hold(self):
        p, lat, _ = fixture(M=4)
        sched = OvcyannikovSchedule.from_lattice(lat, p, -0.5, 0.0, 5)
        rep = verify_bounds(sched, p, lat, cap=3, panels=64)
        failed = [c.name for c in rep.checks if not c.passed]
        assert not failed, failed


class TestLocalDensityConsistency:
    def make_k0(self, space, lat, occupancy=0.4):
        return TruncatedFunction.from_size_profile(space, lambda n: (occupancy / lat.v) ** n)

    def test_time_zero(self):
        p, lat, space = fixture(M=4)
        r = local_density_consistency(self.make_k0(space, lat), lat, p, 0.0)
        assert r.residual < 1e-13 and r.realizable

    def test_pure_death_closed_form(self):
        # thinning oracle: correlations scale by exp(-m t) per particle
        p, lat, space = fixture(M=4, m=0.9, hp=0.0, hm=0.0)
        k0 = self.make_k0(space, lat)
        t = 0.8
        Lf = build_forward_generator(lat, p)
        R0 = TruncatedFunction(space, np.linalg.solve(np.eye(space.dim), k0.values))
        from spatlog.configspace import density_of_correlation

        R0 = density_of_correlation(k0)
        Rt = semigroup_apply(Lf, t, R0)
        qt = correlation_of_density(Rt)
        surv = math.exp(-0.9 * t)
        expect = TruncatedFunction.from_size_profile(space, lambda n: (0.4 / lat.v * surv) ** n)
        assert np.max(np.abs(qt.values - expect.values)) < 1e-10
        assert local_density_consistency(k0, lat, p, t).residual < 1e-10

    def test_full_model(self):
        p, lat, space = fixture(M=4)
        r = local_density_consistency(self.make_k0(space, lat), lat, p, 0.5)
        assert r.residual < 1e-8
        assert r.roundtrip_error < 1e-12

    def test_nonrealizable_reported(self):
        p, lat, space = fixture(M=3)
        k0 = TruncatedFunction.from_size_profile(space, lambda n: float(n != 1))
        r = local_density_consistency(k0, lat, p, 0.1)
        assert not r.realizable  # reported, not raised


class TestDualPairing:
    def test_zero_time(self, rng):
        p, lat, space = fixture(M=4)
        G0 = TruncatedFunction(space, rng.standard_normal(space.dim))
        k0 = TruncatedFunction(space, rng.standard_normal(space.dim))
        assert dual_pairing_residual(G0, k0, lat, p, 0.0) < 1e-12

    def test_diagonal_case(self, rng):
        p, lat, space = fixture(M=3, hp=0.0, hm=0.0, m=1.1)
        G0 = TruncatedFunction(space, rng.standard_normal(space.dim))
        k0 = TruncatedFunction(space, rng.standard_normal(space.dim))
        assert dual_pairing_residual(G0, k0, lat, p, 1.0) < 1e-12

    def test_random_at_unit_time(self, rng):
        p, lat, space = fixture(M=4)
        G0 = TruncatedFunction(space, rng.standard_normal(space.dim))
        k0 = TruncatedFunction(space, rng.standard_normal(space.dim))
        assert dual_pairing_residual(G0, k0, lat, p, 1.0) < 1e-9


class TestSubPoissonianPropagation:
    def test_norm_does_not_grow_along_schedule(self):
        # theta = 0.4 < 1 = exp(alpha*), geometric data at the critical height
        p, lat, space = fixture(M=5, hp=0.2, hm=0.5, m=0.7)
        sched = OvcyannikovSchedule.from_lattice(lat, p, -0.5, 0.0, 5)
        Ld = build_correlation_generator(lat, p)
        k0 = TruncatedFunction.from_size_profile(space, lambda n: 1.0)
        base = correlation_norm(k0, 0.0)
        for frac in (0.25, 0.5, 0.75):
            t = frac * sched.T_star
            kt = TruncatedFunction(space, propagator(Ld, t) @ k0.values)
            alpha_t = sched.alpha_high - frac * (sched.alpha_high - sched.alpha_low)
            assert correlation_norm(kt, alpha_t) <= base + 1e-10


class TestStochasticityBattery:
    def test_passes(self):
        p, lat, _ = fixture(M=4)
        assert stochasticity_battery(lat, p).passed
