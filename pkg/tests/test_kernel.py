import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from fbm_isometry.covariance import DomainError, HurstModel, d2r_dsdt
from fbm_isometry.kernel import (
    det_cross,
    det_cross_any,
    lambda_kernel,
    lambda_kernel_finite,
    w_kernel,
    w_kernel_increment,
)
from fbm_isometry.sampling import sample_pair

from oracles import conditional_increment_product, cross_cov_exact, fbm_cov, increment_cov, limit_kernel

hurst = st.floats(0.51, 0.99)
coords = st.lists(st.floats(-3, 3), min_size=2, max_size=2)

#: Lambda(1, 2) at H=0.75 with B_1 = B_2 = 1 (d = 1); frozen after matching the
#: derivative-covariance oracle
GOLDEN_LAMBDA_ONE_TWO = -0.18750000000000022


class TestW:
    def test_origin_is_minus_mean(self, model):
        w = w_kernel(model, 0.3, 0.7, np.zeros(2), np.zeros(2))
        assert w[0, 1] == 0.0 and w[1, 0] == 0.0
        assert w[0, 0] == w[1, 1] < 0 or w[0, 0] == w[1, 1] > 0

    def test_centered(self):
        m = HurstModel(0.75, 2)
        pair = sample_pair(m, 0.3, 0.7, 10**6, seed=4)
        w = w_kernel(m, 0.3, 0.7, pair.b_s, pair.b_t)
        mean = w.mean(axis=0)
        se = w.std(axis=0) / np.sqrt(len(w))
        assert np.all(np.abs(mean) < 4 * se)

    @given(h=hurst, s=st.floats(0.01, 1), r=st.floats(1e-3, 1), bs=coords, bt=coords)
    def test_increment_basis_matches_value_basis(self, h, s, r, bs, bt):
        m = HurstModel(h, 2)
        t = s + r
        a = w_kernel(m, s, t, bs, bt)
        b = w_kernel_increment(m, s, t, bs, bt)
        scale = 1.0 + np.max(np.abs(a))
        assert np.allclose(a, b, rtol=0, atol=1e-9 * scale)
        # the other simplex, reached by swapping the roles of the two times
        assert np.allclose(w_kernel(m, t, s, bt, bs), w_kernel_increment(m, t, s, bt, bs), atol=1e-9 * scale)

    @given(h=hurst, s=st.floats(0.01, 1), t=st.floats(0.01, 1), bs=coords, bt=coords)
    def test_transpose_under_swap(self, h, s, t, bs, bt):
        if abs(t - s) < 1e-4:
            return
        m = HurstModel(h, 2)
        a = lambda_kernel(m, s, t, bs, bt)
        b = lambda_kernel(m, t, s, bt, bs)
        assert np.allclose(a, b.T, rtol=1e-9, atol=1e-9)

    def test_rejects_mixed_simplices(self):
        with pytest.raises(ValueError):
            w_kernel_increment(HurstModel(0.75), np.array([0.2, 0.8]), np.array([0.5, 0.5]), np.ones((2, 1)), np.ones((2, 1)))


class TestLambda:
    def test_golden_value(self):
        lam = lambda_kernel(HurstModel(0.75), 1.0, 2.0, [1.0], [1.0])
        assert lam.shape == (1, 1)
        assert lam[0, 0] == pytest.approx(GOLDEN_LAMBDA_ONE_TWO, rel=1e-13)

    @given(h=hurst, s=st.floats(0.01, 1), t=st.floats(0.01, 1), bs=coords, bt=coords)
    def test_against_derivative_covariance_oracle(self, h, s, t, bs, bt):
        if abs(t - s) < 1e-3:
            return
        m = HurstModel(h, 2)
        got = lambda_kernel(m, s, t, bs, bt)
        want = limit_kernel(h, s, t, bs, bt)
        assert np.allclose(got, want, rtol=1e-8, atol=1e-8 * (1 + np.abs(want).max()))

    def test_off_diagonal_entries_equal_w(self):
        m = HurstModel(0.7, 3)
        bs, bt = np.array([0.3, -1.0, 2.0]), np.array([1.1, 0.4, -0.5])
        lam, w = lambda_kernel(m, 0.2, 0.6, bs, bt), w_kernel(m, 0.2, 0.6, bs, bt)
        off = ~np.eye(3, dtype=bool)
        assert np.array_equal(lam[off], w[off])
        assert np.allclose(np.diag(lam - w), d2r_dsdt(m, 0.2, 0.6))

    def test_mean_is_mixed_partial(self):
        m = HurstModel(0.75)
        pair = sample_pair(m, 0.3, 0.7, 10**6, seed=8)
        lam = lambda_kernel(m, 0.3, 0.7, pair.b_s, pair.b_t)[:, 0, 0]
        assert abs(lam.mean() - d2r_dsdt(m, 0.3, 0.7)) < 4 * lam.std() / np.sqrt(len(lam))

    def test_batch_shapes(self):
        m = HurstModel(0.75, 2)
        bs = np.ones((5, 3, 2))
        out = lambda_kernel(m, np.full((5, 3), 0.2), np.full((5, 3), 0.6), bs, -bs)
        assert out.shape == (5, 3, 2, 2)

    def test_rejects_diagonal(self):
        with pytest.raises(DomainError):
            lambda_kernel(HurstModel(0.75), 0.5, 0.5, [1.0], [1.0])


class TestFiniteKernel:
    @pytest.mark.parametrize("s,t", [(0.3, 0.7), (0.7, 0.3), (0.05, 0.9)])
    @pytest.mark.parametrize("eps,delta", [(0.1, 0.05), (1e-3, 1e-2), (1e-5, 1e-5)])
    def test_against_exact_conditioning(self, model, s, t, eps, delta):
        m = HurstModel(model.h, 2)
        bs, bt = np.array([0.4, -1.0]), np.array([0.2, 0.5])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            got = lambda_kernel_finite(m, eps, delta, s, t, bs, bt)
        want = conditional_increment_product(model.h, eps, delta, s, t, bs, bt, dps=50)
        assert np.allclose(got, want, rtol=1e-9, atol=1e-10 * np.abs(want).max())

    def test_against_monte_carlo_conditioning(self):
        # local quadratic fit: the conditional mean is quadratic, so the fit is unbiased
        h, s, t, e, dl = 0.75, 0.3, 0.7, 0.1, 0.1
        times = [s, t, s + e, t + dl]
        cov = np.array([[fbm_cov(h, a, b) for b in times] for a in times])
        z = np.random.default_rng(5).standard_normal((10**6, 4)) @ np.linalg.cholesky(cov).T
        y = (z[:, 2] - z[:, 0]) * (z[:, 3] - z[:, 1]) / (e * dl)
        x0 = np.array([0.4, -0.2])
        sd = np.sqrt(np.diag(cov)[:2])
        u, v = z[:, 0] - x0[0], z[:, 1] - x0[1]
        w = np.exp(-0.5 * ((u / (0.5 * sd[0])) ** 2 + (v / (0.5 * sd[1])) ** 2))
        design = np.stack([np.ones_like(u), u, v, u * u, u * v, v * v], axis=1)
        gram = design.T @ (design * w[:, None])
        beta = np.linalg.solve(gram, design.T @ (w * y))
        resid = y - design @ beta
        meat = design.T @ (design * (w**2 * resid**2)[:, None])
        se = np.sqrt(np.linalg.solve(gram, np.linalg.solve(gram, meat).T)[0, 0])
        lib = lambda_kernel_finite(HurstModel(h), e, dl, s, t, x0[:1], x0[1:])[0, 0]
        assert abs(beta[0] - lib) < 4 * se

    def test_cross_coordinates_have_no_deterministic_part(self):
        m = HurstModel(0.75, 2)
        bs, bt = np.array([0.4, -1.0]), np.array([0.2, 0.5])
        k = lambda_kernel_finite(m, 0.01, 0.02, 0.3, 0.7, bs, bt)
        k0 = lambda_kernel_finite(m, 0.01, 0.02, 0.3, 0.7, np.zeros(2), np.zeros(2))
        assert k0[0, 1] == 0.0 and k0[1, 0] == 0.0
        assert k[0, 1] != 0.0

    def test_converges_to_limit_along_ladder(self, model):
        # starts at 1e-2: near H = 1/2 the gap is not yet monotone between 1e-1 and 1e-2
        bs, bt = np.array([0.8]), np.array([-0.3])
        lim = lambda_kernel(model, 0.3, 0.7, bs, bt)[0, 0]
        errs = [abs(lambda_kernel_finite(model, e, e, 0.3, 0.7, bs, bt)[0, 0] - lim) for e in 10.0 ** -np.arange(2, 8)]
        assert np.all(np.diff(errs) < 0)

    def test_golden_value_by_extrapolation(self):
        # gap decays like eps^{2H-1}; one Richardson step at that order
        m = HurstModel(0.75)
        e1, e2 = 1e-6, 5e-7
        k1 = lambda_kernel_finite(m, e1, e1, 1.0, 2.0, [1.0], [1.0])[0, 0]
        k2 = lambda_kernel_finite(m, e2, e2, 1.0, 2.0, [1.0], [1.0])[0, 0]
        ext = k2 - (k1 - k2) / (2**0.5 - 1)
        assert ext == pytest.approx(GOLDEN_LAMBDA_ONE_TWO, abs=1e-5)

    def test_overlap_warning(self):
        with pytest.warns(RuntimeWarning, match="overlap"):
            lambda_kernel_finite(HurstModel(0.75), 0.5, 0.5, 0.3, 0.7, [1.0], [1.0])

    def test_no_warning_when_separated(self):
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            lambda_kernel_finite(HurstModel(0.75), 0.01, 0.01, 0.3, 0.7, [1.0], [1.0])


class TestDeterministicPart:
    @given(h=hurst, s=st.floats(0.01, 1), r=st.floats(1e-3, 1), e=st.floats(1e-3, 0.5), dl=st.floats(1e-3, 0.5))
    def test_rescaled_form_equals_four_terms(self, h, s, r, e, dl):
        m = HurstModel(h)
        t = s + r
        direct = increment_cov(h, s, s + e, t, t + dl) / (e * dl)
        assert det_cross(m, e, dl, s, t) == pytest.approx(direct, rel=1e-7, abs=1e-9)
        assert det_cross_any(m, e, dl, s, t) == pytest.approx(direct, rel=1e-7, abs=1e-9)

    @given(h=hurst, s=st.floats(0.01, 1), r=st.floats(1e-3, 1), e=st.floats(1e-8, 1e-3), dl=st.floats(1e-8, 1e-3))
    def test_small_scales_against_high_precision(self, h, s, r, e, dl):
        m = HurstModel(h)
        want = cross_cov_exact(h, e, dl, s, s + r)
        assert det_cross_any(m, e, dl, s, s + r) == pytest.approx(want, rel=1e-8)

    def test_reverse_order_through_general_form(self):
        m = HurstModel(0.75)
        direct = increment_cov(0.75, 0.7, 0.71, 0.3, 0.32) / (0.01 * 0.02)
        assert det_cross_any(m, 0.01, 0.02, 0.7, 0.3) == pytest.approx(direct, rel=1e-9)
        with pytest.raises(DomainError):
            det_cross(m, 0.01, 0.02, 0.7, 0.3)

    def test_converges_to_mixed_partial(self, model):
        target = d2r_dsdt(model, 0.3, 0.7)
        errs = [abs(det_cross(model, e, e, 0.3, 0.7) - target) for e in (1e-1, 1e-2, 1e-3, 1e-4)]
        assert np.all(np.diff(errs) < 0)
        assert errs[-1] / target < 1e-3


class TestPointwiseConvergenceInTwoDimensions:
    def test_rate(self):
        # with d=2 the gap still shrinks, at the slower eps^{2H-1} pace
        m = HurstModel(0.75, 2)
        pair = sample_pair(m, 0.3, 0.7, 1, seed=0)
        lim = lambda_kernel(m, 0.3, 0.7, pair.b_s[0], pair.b_t[0])
        eps = np.array([1e-2, 1e-3, 1e-4, 1e-5])
        errs = np.array([np.linalg.norm(lambda_kernel_finite(m, e, e, 0.3, 0.7, pair.b_s[0], pair.b_t[0]) - lim) for e in eps])
        assert np.all(np.diff(errs) < 0)
        slope = np.polyfit(np.log(eps), np.log(errs), 1)[0]
        assert slope == pytest.approx(0.5, abs=0.05)
