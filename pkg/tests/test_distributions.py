import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import digamma, gammaln, polygamma

from mvlss.distributions import (
    DirichletParams,
    DistributionSpec,
    Family,
    GaussianParams,
    StudentTParams,
    check_simplex,
    closure_adjust,
    covariance,
    link_apply,
    linked_values,
    mean,
    nll,
    nll_batch,
    param_count,
    sample,
)
from mvlss.errors import InvalidResponse, NonFinite, Unsupported
from mvlss.linalg import compose_cov_cholesky, compose_cov_lowrank

GC, LRA, ST, DIR = Family.GAUSSIAN_CHOLESKY, Family.GAUSSIAN_LOWRANK, Family.STUDENT_T, Family.DIRICHLET

TABLE_PARAM_COUNTS = {
    # D: (Cholesky, LRA r=5, LRA r=10, LRA r=20)
    2: (5, 14, 24, 44),
    5: (20, 35, 60, 110),
    10: (65, 70, 120, 220),
    50: (1325, 350, 600, 1100),
    100: (5150, 700, 1200, 2200),
    500: (125750, 3500, 6000, 11000),
    1000: (501500, 7000, 12000, 22000),
    10000: (50015000, 70000, 120000, 220000),
}


def random_raw(spec, rng):
    k, d = spec.n_params, spec.dim
    raw = rng.normal(scale=0.5, size=k)
    if spec.family is ST:
        raw[-1] = rng.uniform(-1, 3)
    if spec.family is DIR:
        raw = rng.uniform(-1, 1.5, size=d)
    return raw


class TestParamCount:
    @pytest.mark.parametrize("d", sorted(TABLE_PARAM_COUNTS))
    def test_table(self, d):
        chol, *lra = TABLE_PARAM_COUNTS[d]
        assert param_count(DistributionSpec(GC, d)) == chol
        for r, expected in zip((5, 10, 20), lra):
            assert param_count(DistributionSpec(LRA, d, r)) == expected

    def test_examples(self):
        assert DistributionSpec(GC, 2).n_params == 5
        assert DistributionSpec(LRA, 10, 5).n_params == 70
        assert DistributionSpec(DIR, 3).n_params == 3
        assert DistributionSpec(ST, 3).n_params == 10

    def test_names_match_count(self):
        for spec in [DistributionSpec(GC, 4), DistributionSpec(LRA, 4, 2), DistributionSpec(ST, 4), DistributionSpec(DIR, 4)]:
            names = spec.param_names()
            assert len(names) == spec.n_params == len(set(names))

    @pytest.mark.parametrize("kwargs", [dict(family=GC, dim=0), dict(family=LRA, dim=3), dict(family=GC, dim=3, rank=2),
                                        dict(family=DIR, dim=1)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            DistributionSpec(**kwargs)

    def test_dict_round_trip(self):
        for spec in [DistributionSpec(GC, 3), DistributionSpec(LRA, 5, 2)]:
            assert DistributionSpec.from_dict(spec.to_dict()) == spec


class TestLink:
    def test_gaussian(self):
        p = link_apply(DistributionSpec(GC, 2), [0, 0, 0, 0, 0.5])
        assert isinstance(p, GaussianParams)
        np.testing.assert_array_equal(p.mu, [0, 0])
        np.testing.assert_array_equal(p.chol.diag, [1, 1])
        np.testing.assert_array_equal(p.chol.offdiag, [0.5])
        np.testing.assert_allclose(p.covariance(), [[1, 0.5], [0.5, 1.25]])

    def test_student_nu(self):
        p = link_apply(DistributionSpec(ST, 2), np.zeros(6))
        assert isinstance(p, StudentTParams) and p.nu == 3.0

    def test_dirichlet(self):
        p = link_apply(DistributionSpec(DIR, 3), [0, 0, 0])
        assert isinstance(p, DirichletParams)
        np.testing.assert_array_equal(p.alpha, [1, 1, 1])

    def test_lowrank_layout(self):
        raw = np.arange(8.0) / 10
        p = link_apply(DistributionSpec(LRA, 2, 2), raw)
        np.testing.assert_allclose(p.kdiag, np.exp([0.2, 0.3]))
        np.testing.assert_allclose(p.v, [[0.4, 0.5], [0.6, 0.7]])

    def test_overflow(self):
        with pytest.raises(NonFinite):
            link_apply(DistributionSpec(GC, 2), [0, 0, 800, 0, 0])

    def test_linked_values(self):
        spec = DistributionSpec(ST, 2)
        out = linked_values(spec, [1, 2, 0, np.log(2), 0.3, 0])
        np.testing.assert_allclose(out[0], [1, 2, 1, 2, 0.3, 3])


class TestNLL:
    def test_standard_normal_mode(self):
        assert abs(nll(DistributionSpec(GC, 2), np.zeros(5), [0, 0]) - 1.8378770664093453) < 1e-12

    def test_uniform_dirichlet(self):
        assert abs(nll(DistributionSpec(DIR, 3), np.zeros(3), [0.2, 0.3, 0.5]) + math.log(2)) < 1e-12

    def test_student_limit(self):
        y = [0.3, -0.7]
        raw_t = np.r_[np.zeros(5), np.log(1e6 - 2)]
        assert abs(nll(DistributionSpec(ST, 2), raw_t, y) - nll(DistributionSpec(GC, 2), np.zeros(5), y)) < 1e-3

    def test_student_one_dim_density(self):
        # log-density formula evaluated independently with mpmath
        nu = mpmath.mpf(3)
        dens = mpmath.gamma((nu + 1) / 2) / (mpmath.gamma(nu / 2) * mpmath.sqrt(nu * mpmath.pi))
        assert abs(nll(DistributionSpec(ST, 1), [0, 0, 0], [0]) + float(mpmath.log(dens))) < 1e-12

    def test_gaussian_dense_oracle(self):
        rng = np.random.default_rng(0)
        for d in (1, 2, 3, 5):
            spec = DistributionSpec(GC, d)
            for _ in range(20):
                raw = random_raw(spec, rng)
                y = rng.normal(size=d)
                p = link_apply(spec, raw)
                cov = p.covariance()
                r = y - p.mu
                ref = 0.5 * (d * math.log(2 * math.pi) + np.linalg.slogdet(cov)[1] + r @ np.linalg.inv(cov) @ r)
                assert abs(nll(spec, raw, y) - ref) <= 1e-8 * max(1.0, abs(ref))

    def test_scipy_oracles(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            spec = DistributionSpec(LRA, 4, 2)
            raw = random_raw(spec, rng)
            y = rng.normal(size=4)
            p = link_apply(spec, raw)
            ref = -stats.multivariate_normal(p.mu, compose_cov_lowrank(p.kdiag, p.v)).logpdf(y)
            assert abs(nll(spec, raw, y) - ref) < 1e-9

            spec = DistributionSpec(ST, 3)
            raw = random_raw(spec, rng)
            y = rng.normal(size=3)
            p = link_apply(spec, raw)
            ref = -stats.multivariate_t(p.mu, compose_cov_cholesky(p.chol), df=p.nu).logpdf(y)
            assert abs(nll(spec, raw, y) - ref) < 1e-9

            spec = DistributionSpec(DIR, 4)
            raw = random_raw(spec, rng)
            y = rng.dirichlet(np.ones(4) * 2)
            ref = -stats.dirichlet(np.exp(raw)).logpdf(y)
            assert abs(nll(spec, raw, y) - ref) < 1e-9

    def test_beta_oracle(self):
        rng = np.random.default_rng(2)
        spec = DistributionSpec(DIR, 2)
        for _ in range(50):
            raw = rng.uniform(-1, 2, size=2)
            t = rng.uniform(0.01, 0.99)
            a, b = np.exp(raw)
            ref = -stats.beta(a, b).logpdf(t)
            assert abs(nll(spec, raw, [t, 1 - t]) - ref) <= 1e-10 * max(1.0, abs(ref))

    def test_simplex_validation(self):
        spec = DistributionSpec(DIR, 3)
        with pytest.raises(InvalidResponse):
            nll(spec, np.zeros(3), [0.0, 0.5, 0.5])
        with pytest.raises(InvalidResponse):
            nll(spec, np.zeros(3), [0.2, 0.2, 0.2])
        check_simplex(np.array([[0.2, 0.3, 0.5 + 5e-7]]))

    def test_closure_adjust(self):
        y = closure_adjust(np.array([[0.0, 0.4, 0.6]]))
        assert np.all(y > 0) and abs(y.sum() - 1) < 1e-15
        check_simplex(y)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(3)
        spec = DistributionSpec(ST, 3)
        raw = np.array([random_raw(spec, rng) for _ in range(6)])
        y = rng.normal(size=(6, 3))
        batch = nll_batch(spec, raw, y)
        for i in range(6):
            assert batch[i] == pytest.approx(nll(spec, raw[i], y[i]), rel=1e-14)


class TestMoments:
    def test_dirichlet_mean(self):
        np.testing.assert_allclose(mean(DistributionSpec(DIR, 2), np.log([2, 6])), [0.25, 0.75])
        np.testing.assert_allclose(mean(DistributionSpec(DIR, 3), np.full(3, 1.7)), [1 / 3] * 3)

    def test_gaussian_mean(self):
        np.testing.assert_array_equal(mean(DistributionSpec(GC, 2), [1.5, -2, 0, 0, 0]), [1.5, -2])

    def test_covariances(self):
        np.testing.assert_array_equal(covariance(DistributionSpec(GC, 2), np.zeros(5)), np.eye(2))
        cov_t = covariance(DistributionSpec(ST, 2), np.r_[np.zeros(5), np.log(2.0)])
        np.testing.assert_allclose(cov_t, 2 * np.eye(2))
        cov_l = covariance(DistributionSpec(LRA, 2, 1), [0, 0, 0, 0, 1, 1])
        np.testing.assert_allclose(cov_l, [[2, 1], [1, 2]])
        with pytest.raises(Unsupported):
            covariance(DistributionSpec(DIR, 2), [0, 0])


class TestSampling:
    def test_standard_normal_moments(self):
        y = sample(DistributionSpec(GC, 2), np.zeros(5), 50_000, seed=11)
        assert np.max(np.abs(y.mean(axis=0))) < 0.02
        assert np.max(np.abs(np.cov(y, rowvar=False) - np.eye(2))) < 0.03

    def test_deterministic(self):
        spec = DistributionSpec(ST, 3)
        raw = np.r_[np.zeros(9), 1.0]
        np.testing.assert_array_equal(sample(spec, raw, 100, 5), sample(spec, raw, 100, 5))

    def test_student_covariance(self):
        spec = DistributionSpec(ST, 2)
        raw = np.r_[np.zeros(4), 0.5, np.log(6.0)]
        y = sample(spec, raw, 200_000, seed=1)
        np.testing.assert_allclose(np.cov(y, rowvar=False), covariance(spec, raw), atol=0.05)

    def test_dirichlet_on_simplex(self):
        y = sample(DistributionSpec(DIR, 4), np.log([0.5, 1, 2, 3]), 1000, 0)
        check_simplex(y)


class TestProperties:
    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), d=st.integers(2, 5))
    def test_student_converges_to_gaussian(self, seed, d):
        rng = np.random.default_rng(seed)
        g_raw = random_raw(DistributionSpec(GC, d), rng)
        # a typical draw from the Gaussian itself, so the quadratic form is chi-square sized
        y = sample(DistributionSpec(GC, d), g_raw, 1, seed)[0]
        g = nll(DistributionSpec(GC, d), g_raw, y)
        t6 = nll(DistributionSpec(ST, d), np.r_[g_raw, np.log(1e6 - 2)], y)
        t3 = nll(DistributionSpec(ST, d), np.r_[g_raw, np.log(1e3 - 2)], y)
        assert abs(t6 - g) < 1e-3
        assert abs(t3 - g) < 1e-1

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_dirichlet_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        spec = DistributionSpec(DIR, 4)
        raw = random_raw(spec, rng)
        y = rng.dirichlet(np.ones(4) * 3)
        perm = rng.permutation(4)
        assert nll(spec, raw[perm], y[perm]) == pytest.approx(nll(spec, raw, y), rel=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_gaussian_permutation_equivariance(self, seed):
        rng = np.random.default_rng(seed)
        spec = DistributionSpec(LRA, 3, 2)
        raw = random_raw(spec, rng)
        y = rng.normal(size=3)
        perm = rng.permutation(3)
        v = raw[6:].reshape(3, 2)
        praw = np.r_[raw[:3][perm], raw[3:6][perm], v[perm].ravel()]
        assert nll(spec, praw, y[perm]) == pytest.approx(nll(spec, raw, y), rel=1e-10)


@pytest.mark.parametrize("x", [0.05, 0.5, 1.0, 2.5, 7.3, 31.0, 250.0])
def test_special_functions_against_mpmath(x):
    mpmath.mp.dps = 30
    assert abs(gammaln(x) - float(mpmath.loggamma(x))) <= 1e-10 * max(1.0, abs(float(mpmath.loggamma(x))))
    assert abs(digamma(x) - float(mpmath.digamma(x))) <= 1e-10 * max(1.0, abs(float(mpmath.digamma(x))))
    tri = float(mpmath.polygamma(1, x))
    assert abs(polygamma(1, x) - tri) <= 1e-10 * max(1.0, abs(tri))
