import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad
from scipy.stats import kstest

from spatlog.kernels import (
    InvalidKernelError,
    ModelParams,
    NoFiniteTheta,
    check_theta_condition,
    domination_theta,
    exponential_kernel,
    gaussian_kernel,
    tabulated_kernel,
    tophat_kernel,
    zero_kernel,
)
from spatlog.simulator import make_stream


class TestEval:
    def test_gaussian_peak(self):
        k = gaussian_kernel(1.0, d=1)
        assert k.eval_radius(0.0) == pytest.approx(1.0 / math.sqrt(2 * math.pi), abs=1e-12)

    def test_tophat_indicator(self):
        k = tophat_kernel(0.5, 1.0)
        assert k.eval_radius(0.7) == 0.5
        assert k.eval_radius(1.2) == 0.0

    def test_exponential_closed_form(self):
        k = exponential_kernel(1.0, 1.0)
        assert k.eval_radius(2.0) == pytest.approx(math.exp(-2.0), abs=1e-12)

    def test_zero_beyond_cutoff(self):
        k = gaussian_kernel(1.0, r_cut=2.0)
        assert k.eval_radius(2.0001) == 0.0


class TestMass:
    def test_gaussian_unit_mass(self):
        # cutoff at ~6 sigma keeps essentially all of the unit mass
        assert gaussian_kernel(1.0, d=1).total_mass() == pytest.approx(1.0, abs=1e-6)

    def test_tophat_mass(self):
        assert tophat_kernel(0.5, 1.0, d=1).total_mass() == 1.0

    def test_tabulated_exponential_table(self):
        r = np.linspace(0.0, 10.0, 2001)
        k = tabulated_kernel(r, np.exp(-r), d=1)
        # oracle: trapezoid quadrature at the table step and at half step
        coarse = 2.0 * np.trapezoid(np.exp(-r), r)
        rf = np.linspace(0.0, 10.0, 4001)
        fine = 2.0 * np.trapezoid(np.exp(-rf), rf)
        assert abs(coarse - fine) < 5e-5  # quadrature already converged to 4 digits
        assert k.total_mass() == pytest.approx(2.0 * (1.0 - math.exp(-10.0)), abs=1e-4)
        assert k.total_mass() == pytest.approx(1.999909, abs=1e-4)

    def test_degenerate_parameters_rejected(self):
        with pytest.raises(InvalidKernelError):
            gaussian_kernel(-1.0)
        with pytest.raises(InvalidKernelError):
            tophat_kernel(0.5, 0.0)
        with pytest.raises(InvalidKernelError):
            exponential_kernel(1.0, -2.0)

    def test_mass_matches_quadrature(self):
        for k in (
            gaussian_kernel(0.7, d=1),
            exponential_kernel(0.4, 1.3, d=1),
            gaussian_kernel(0.9, d=2),
            exponential_kernel(0.4, 1.3, d=2),
        ):
            if k.d == 1:
                val, _ = quad(lambda r: 2.0 * float(k.eval_radius(r)), 0.0, k.r_cut, limit=200)
            else:
                val, _ = quad(
                    lambda r: 2.0 * math.pi * r * float(k.eval_radius(r)), 0.0, k.r_cut, limit=200
                )
            assert k.total_mass() == pytest.approx(val, rel=1e-6)


class TestSupNorm:
    def test_values(self):
        assert gaussian_kernel(1.0, d=1).sup_norm() == pytest.approx(0.3989422804, abs=1e-9)
        assert tophat_kernel(0.5, 1.0).sup_norm() == 0.5
        r = np.linspace(0.0, 5.0, 100)
        assert tabulated_kernel(r, np.exp(-r)).sup_norm() == 1.0


class TestDomination:
    def test_tophat_ratio(self):
        assert domination_theta(tophat_kernel(0.3, 1.0), tophat_kernel(0.6, 1.0)) == pytest.approx(0.5)

    def test_identical_kernels(self):
        k = tophat_kernel(0.4, 2.0)
        assert domination_theta(k, k) == pytest.approx(1.0)

    def test_wider_gaussian_numerator(self):
        with pytest.raises(NoFiniteTheta):
            domination_theta(gaussian_kernel(1.0), gaussian_kernel(0.5))

    def test_narrower_gaussian_numerator(self):
        theta = domination_theta(gaussian_kernel(0.5, r_cut=3.0), gaussian_kernel(1.0, r_cut=3.0))
        assert theta == pytest.approx(2.0)  # ratio of peaks (sigma_minus/sigma_plus)^d

    def test_zero_dispersal(self):
        assert domination_theta(zero_kernel(), tophat_kernel(1.0, 1.0)) == 0.0

    def test_pointwise_domination_holds(self, rng):
        a_plus = exponential_kernel(0.3, 2.0, r_cut=4.0)
        a_minus = exponential_kernel(0.5, 1.5, r_cut=4.0)
        theta = domination_theta(a_plus, a_minus)
        x = rng.uniform(-4.0, 4.0, 10_000)
        assert np.all(a_plus.evaluate(x) <= theta * a_minus.evaluate(x) + 1e-12)


class TestThetaCondition:
    def test_cases(self):
        assert check_theta_condition(0.5, 0.0) is True
        assert check_theta_condition(1.0, 0.0) is False  # strict inequality
        assert check_theta_condition(0.5, 1.0) is False  # e * 0.5 > 1


class TestSampling:
    def test_tophat_symmetry(self):
        rng = make_stream(1, 0)
        s = tophat_kernel(1.0, 1.0).sample_displacement(rng, size=1_000_000)
        sd = 1.0 / math.sqrt(3.0)
        assert abs(s.mean()) < 3.0 * sd / 1e3

    def test_gaussian_variance(self):
        rng = make_stream(2, 0)
        s = gaussian_kernel(1.0).sample_displacement(rng, size=200_000)
        n = len(s)
        # variance estimator sd ~ var * sqrt(2/(n-1))
        assert abs(s.var() - 1.0) < 3.0 * math.sqrt(2.0 / (n - 1))

    def test_exponential_mean_radius(self):
        # Monte-Carlo oracle on the normalized truncated density
        rng = make_stream(3, 0)
        k = exponential_kernel(1.0, 1.0, d=1)
        s = np.abs(k.sample_displacement(rng, size=200_000)[:, 0])
        rc = k.r_cut
        norm_c = 1.0 - math.exp(-rc)
        expected = (1.0 - math.exp(-rc) * (1.0 + rc)) / norm_c
        assert abs(s.mean() - expected) < 3.0 * s.std() / math.sqrt(len(s))

    @pytest.mark.parametrize(
        "kernel",
        [
            gaussian_kernel(0.8, d=1),
            tophat_kernel(0.5, 1.5, d=1),
            exponential_kernel(1.0, 1.0, d=1),
            gaussian_kernel(0.8, d=2),
            tophat_kernel(0.5, 1.5, d=2),
            exponential_kernel(1.0, 1.0, d=2),
        ],
    )
    def test_radial_law_ks(self, kernel):
        rng = make_stream(4, kernel.d)
        s = kernel.sample_displacement(rng, size=100_000)
        radii = np.abs(s[:, 0]) if kernel.d == 1 else np.linalg.norm(s, axis=1)
        stat = kstest(radii, lambda r: np.asarray(kernel.cdf_radius(r))).statistic
        assert stat < 0.01

    def test_zero_kernel_cannot_sample(self):
        with pytest.raises(InvalidKernelError):
            zero_kernel().sample_displacement(make_stream(0, 0))


@given(
    st.sampled_from(["gaussian", "tophat", "exponential"]),
    st.floats(0.2, 3.0),
    st.floats(0.1, 2.0),
    st.integers(1, 2),
)
def test_even_and_nonnegative(shape, p1, p2, d):
    if shape == "gaussian":
        k = gaussian_kernel(p1, d=d)
    elif shape == "tophat":
        k = tophat_kernel(p2, p1, d=d)
    else:
        k = exponential_kernel(p2, p1, d=d)
    rng = np.random.default_rng(int(p1 * 1000) + d)
    x = rng.uniform(-3.0 * p1, 3.0 * p1, (200, d))
    vp, vm = np.asarray(k.evaluate(x)), np.asarray(k.evaluate(-x))
    assert np.all(vp >= 0.0)
    assert np.array_equal(vp, vm)


class TestModelParams:
    def test_invariants(self):
        with pytest.raises(ValueError):
            ModelParams(-1.0, zero_kernel(), zero_kernel(), L=10.0)
        with pytest.raises(ValueError):
            ModelParams(1.0, zero_kernel(), zero_kernel(), L=10.0, d=3)

    def test_explicit_cut_beyond_half_box_rejected(self):
        with pytest.raises(ValueError, match="minimum-image"):
            ModelParams(0.1, tophat_kernel(1.0, 6.0), zero_kernel(), L=10.0)

    def test_auto_cut_capped(self):
        # tail-decay default cutoff of a wide gaussian gets capped to L/2
        p = ModelParams(0.1, gaussian_kernel(5.0), zero_kernel(), L=10.0)
        assert p.a_plus.r_cut == 5.0

    def test_theta_property(self):
        p = ModelParams(0.1, tophat_kernel(0.2, 1.0), tophat_kernel(0.4, 1.0), L=10.0)
        assert p.theta == pytest.approx(0.5)
