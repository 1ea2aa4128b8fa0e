import math

import numpy as np
import pytest
from scipy import integrate

from lmclab.ndcore import make_rng
from lmclab.theoryprobe import (
    COSINE_LIMIT,
    K_CONSTANT,
    abs_product_expectation,
    concentration_bound,
    cosine_bounds,
    mc_cosine_concentration,
    mc_relu_product,
    relu_cosine_trial,
    relu_product_expectation,
)

RHOS = (-0.9, -0.5, 0.0, 0.5, 0.9)


def quad_expectation(f, rho):
    """E[f(x, y)] for a standard bivariate normal, by 2-D quadrature."""
    det = 1.0 - rho * rho

    def integrand(y, x):
        q = (x * x - 2 * rho * x * y + y * y) / det
        return f(x, y) * math.exp(-0.5 * q) / (2 * math.pi * math.sqrt(det))

    val, _ = integrate.dblquad(integrand, -12, 12, -12, 12, epsabs=1e-11, epsrel=1e-11)
    return val


class TestClosedForms:
    def test_relu_product_endpoints(self):
        assert relu_product_expectation(0.0) == pytest.approx(1 / (2 * math.pi), abs=1e-15)
        assert relu_product_expectation(1.0) == pytest.approx(0.5, abs=1e-15)
        assert relu_product_expectation(-1.0) == pytest.approx(0.0, abs=1e-15)

    def test_abs_product_endpoints(self):
        assert abs_product_expectation(0.0) == pytest.approx(2 / math.pi, abs=1e-15)
        assert abs_product_expectation(1.0) == pytest.approx(1.0, abs=1e-15)

    @pytest.mark.parametrize("rho", [-0.7, 0.3, 0.5])
    def test_against_quadrature(self, rho):
        relu = lambda x, y: max(x, 0.0) * max(y, 0.0)  # noqa: E731
        absp = lambda x, y: abs(x) * abs(y)  # noqa: E731
        assert relu_product_expectation(rho) == pytest.approx(quad_expectation(relu, rho), abs=1e-7)
        assert abs_product_expectation(rho) == pytest.approx(quad_expectation(absp, rho), abs=1e-7)

    def test_relu_product_monotone(self):
        vals = [relu_product_expectation(r) for r in np.linspace(-1, 1, 41)]
        assert all(b > a for a, b in zip(vals, vals[1:]))

    @pytest.mark.parametrize("rho", [-1.01, 1.5])
    def test_rejects_bad_rho(self, rho):
        with pytest.raises(ValueError):
            relu_product_expectation(rho)
        with pytest.raises(ValueError):
            abs_product_expectation(rho)


class TestMcRelu:
    @pytest.mark.parametrize("i", range(len(RHOS)))
    def test_within_four_se(self, i):
        res = mc_relu_product(RHOS[i], 200_000, make_rng(0, i))
        for r in res.values():
            assert abs(r.z_score) < 4.0
            assert r.std_error > 0

    def test_cross_term_near_zero(self):
        r = mc_relu_product(0.6, 200_000, make_rng(1))["cross_term"]
        assert r.analytic_value == 0.0 and abs(r.estimate) < 4 * r.std_error

    def test_deterministic(self):
        a = mc_relu_product(0.2, 5000, make_rng(9))
        b = mc_relu_product(0.2, 5000, make_rng(9))
        assert a["relu_product"].estimate == b["relu_product"].estimate

    def test_chunking_matches_n(self):
        r = mc_relu_product(0.0, 300_001, make_rng(2))["relu_product"]
        assert r.n_samples == 300_001

    def test_too_few_samples(self):
        with pytest.raises(ValueError):
            mc_relu_product(0.0, 10, make_rng(0))


class TestCosineConcentration:
    def test_limit_value(self):
        assert COSINE_LIMIT == pytest.approx((0.75 + 1 / math.pi) / math.sqrt(1 + 1 / math.pi), abs=0)
        assert COSINE_LIMIT == pytest.approx(0.9304402577521914, abs=1e-12)

    def test_one_dimensional_equal_vectors(self):
        c, flagged = relu_cosine_trial(np.array([1.0]), np.array([1.0]))
        assert c == pytest.approx(1.0) and not flagged

    def test_degenerate_is_flagged(self):
        c, flagged = relu_cosine_trial(np.array([-1.0]), np.array([-2.0]))
        assert flagged and c == 0.0

    def test_nonnegative(self):
        r = mc_cosine_concentration(3, 200, 0)
        assert min(r.cosines) >= 0.0

    def test_spread_shrinks_like_sqrt_d(self):
        small = mc_cosine_concentration(10, 200, 0).spread
        large = mc_cosine_concentration(10_000, 200, 0).spread
        # sqrt(1000) ~ 31.6; allow sampling noise in the ratio
        assert 15 < small / large < 60

    def test_mean_approaches_limit(self):
        gaps = [abs(mc_cosine_concentration(d, 40, 1).estimate - COSINE_LIMIT) for d in (100, 10_000)]
        assert gaps[1] < gaps[0]
        assert gaps[1] < 0.002

    def test_trials_are_seeded_streams(self):
        a = mc_cosine_concentration(50, 5, 4)
        b = mc_cosine_concentration(50, 8, 4)
        assert a.cosines == b.cosines[:5]

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            mc_cosine_concentration(0, 5, 0)
        with pytest.raises(ValueError):
            mc_cosine_concentration(5, 1, 0)


class TestBounds:
    def test_k_constant(self):
        assert K_CONSTANT == 32 / 3

    def test_eps_zero_collapses(self):
        lo, hi = cosine_bounds(0.0)
        assert lo == pytest.approx(COSINE_LIMIT, abs=1e-15) and hi == pytest.approx(COSINE_LIMIT, abs=1e-15)

    def test_bracket_limit(self):
        for eps in (1e-4, 1e-2, 0.3):
            lo, hi = cosine_bounds(eps)
            assert lo < COSINE_LIMIT < hi

    def test_upper_infinite_once_eps_large(self):
        assert cosine_bounds(1.0)[1] == math.inf

    def test_epsilon_formula(self):
        d, delta, c = 100_000, 0.05, 1.0
        r = math.log(2 / delta) / (c * d)
        eps, lo, hi = concentration_bound(d, delta, c)
        assert eps == pytest.approx(32 / 3 * math.sqrt(r), rel=1e-15)
        assert (lo, hi) == cosine_bounds(eps)

    def test_linear_branch_for_small_d(self):
        eps, _, hi = concentration_bound(1, 0.05, 1.0)
        assert eps == pytest.approx(32 / 3 * math.log(40), rel=1e-15) and hi == math.inf

    def test_tightens_with_d(self):
        e = [concentration_bound(d, 0.05, 1.0)[0] for d in (10**3, 10**5, 10**7)]
        assert e[0] > e[1] > e[2]

    @pytest.mark.parametrize("kw", [dict(delta=0.0), dict(delta=1.0), dict(c=0.0), dict(d=0)])
    def test_invalid(self, kw):
        args = dict(d=100, delta=0.05, c=1.0) | kw
        with pytest.raises(ValueError):
            concentration_bound(**args)
