import numpy as np
import pytest

from mvlss.boosting import dirichlet_mle
from mvlss.diff import HESS_FLOOR, fd_check, grad_hess, grad_hess_batch, grad_hess_raw, random_case
from mvlss.distributions import DistributionSpec, Family, sample
from mvlss.errors import NonFinite

SPECS = [
    DistributionSpec(Family.GAUSSIAN_CHOLESKY, 3),
    DistributionSpec(Family.GAUSSIAN_LOWRANK, 4, 2),
    DistributionSpec(Family.STUDENT_T, 3),
    DistributionSpec(Family.DIRICHLET, 3),
]


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.family.value)
def test_matches_finite_differences(spec):
    rng = np.random.default_rng(7)
    for _ in range(25):
        raw, y = random_case(spec, rng)
        rep = fd_check(spec, raw, y)
        assert rep.grad_error < 1e-4
        assert rep.hess_error < 1e-3


def test_univariate_normal_score():
    g, h = grad_hess(DistributionSpec(Family.GAUSSIAN_CHOLESKY, 1), [0.0, 0.0], [1.0])
    assert g[0] == pytest.approx(-1.0, abs=1e-15)
    assert h[0] == pytest.approx(1.0, abs=1e-15)
    # d/d log sigma of log sigma + r^2 / (2 sigma^2) at sigma=1, r=1
    assert g[1] == pytest.approx(0.0, abs=1e-15)
    assert h[1] == pytest.approx(2.0, abs=1e-15)


def test_dirichlet_stationary_at_mle():
    alpha = np.array([2.0, 3.0, 4.0])
    y = sample(DistributionSpec(Family.DIRICHLET, 3), np.log(alpha), 5000, seed=3)
    raw = np.log(dirichlet_mle(y))
    gh = grad_hess_batch(DistributionSpec(Family.DIRICHLET, 3), np.tile(raw, (len(y), 1)), y)
    assert np.max(np.abs(gh.grad.mean(axis=0))) < 1e-6


def test_mu_hessian_exact_for_quadratic_direction():
    spec = DistributionSpec(Family.GAUSSIAN_CHOLESKY, 3)
    raw, y = random_case(spec, np.random.default_rng(1))
    for step in (1e-2, 1e-3):
        rep = fd_check(spec, raw, y, step=step)
        np.testing.assert_allclose(rep.fd_hess[:3], rep.hess[:3], rtol=1e-6)


def test_floor_activation():
    spec = DistributionSpec(Family.GAUSSIAN_CHOLESKY, 2)
    raw = np.array([0.5, -0.5, 0.1, 0.2, 0.3])
    y = np.array([0.5, 1.0])  # y1 == mu1 makes the l21 curvature vanish
    g_raw, h_raw = grad_hess_raw(spec, raw[None], y[None])
    assert h_raw[0, 4] < HESS_FLOOR
    rep = fd_check(spec, raw, y)
    assert rep.floored[4] and rep.hess[4] == HESS_FLOOR
    gh = grad_hess_batch(spec, raw[None], y[None])
    assert gh.hess[0, 4] == HESS_FLOOR and gh.floored[0, 4]
    assert np.all(gh.hess >= HESS_FLOOR)


def test_step_range():
    spec = DistributionSpec(Family.DIRICHLET, 2)
    for step in (1e-8, 0.1):
        with pytest.raises(ValueError):
            fd_check(spec, [0.0, 0.0], [0.4, 0.6], step=step)


def test_batch_matches_single():
    spec = DistributionSpec(Family.STUDENT_T, 2)
    rng = np.random.default_rng(5)
    cases = [random_case(spec, rng) for _ in range(5)]
    raw = np.array([c[0] for c in cases])
    y = np.array([c[1] for c in cases])
    gh = grad_hess_batch(spec, raw, y)
    for i, (r, yy) in enumerate(cases):
        g, h = grad_hess(spec, r, yy)
        np.testing.assert_allclose(gh.grad[i], g, rtol=1e-13)
        np.testing.assert_allclose(gh.hess[i], h, rtol=1e-13)


def test_non_finite_raises():
    spec = DistributionSpec(Family.GAUSSIAN_CHOLESKY, 2)
    with pytest.raises(NonFinite):
        grad_hess_batch(spec, np.array([[0, 0, 900.0, 0, 0]]), np.array([[0.0, 0.0]]))
