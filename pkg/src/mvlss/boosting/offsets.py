"""Unconditional maximum-likelihood starting values (raw scale)."""

from __future__ import annotations

import numpy as np
from scipy.optimize import minimize
from scipy.special import digamma, polygamma

from ..diff import grad_hess_batch
from ..distributions import DistributionSpec, Family, check_simplex, nll_batch
from ..errors import DataError, NoConvergence, NonFinite, NotPositiveDefinite, SingularCovariance
from ..linalg import cholesky_factorize

MAX_ITER = 200
DIRICHLET_TOL = 1e-10
REFINE_TOL = 1e-10
NU_START = 30.0
PIVOT_RTOL = 1e-10


def _moments(y: np.ndarray):
    mu = y.mean(axis=0)
    r = y - mu
    cov = r.T @ r / y.shape[0]
    return mu, 0.5 * (cov + cov.T)


def _gaussian_cholesky_raw(y: np.ndarray) -> np.ndarray:
    mu, cov = _moments(y)
    try:
        L = cholesky_factorize(cov, rtol=PIVOT_RTOL)
    except NotPositiveDefinite as exc:
        raise SingularCovariance(f"sample covariance is not positive definite: {exc}") from exc
    return np.concatenate([mu, np.log(L.diag), L.offdiag])


def _lowrank_start(y: np.ndarray, rank: int) -> np.ndarray:
    mu, cov = _moments(y)
    d = cov.shape[0]
    try:
        cholesky_factorize(cov, rtol=PIVOT_RTOL)
    except NotPositiveDefinite as exc:
        raise SingularCovariance(f"sample covariance is not positive definite: {exc}") from exc
    evals, evecs = np.linalg.eigh(cov)
    evals, evecs = evals[::-1], evecs[:, ::-1]
    keep = min(rank, d)
    noise = evals[keep:].mean() if keep < d else 0.5 * evals[-1]
    V = np.zeros((d, rank))
    V[:, :keep] = evecs[:, :keep] * np.sqrt(np.maximum(evals[:keep] - noise, 0.0))
    # fix the eigenvector sign so the start is reproducible across LAPACK builds
    for j in range(keep):
        i = np.argmax(np.abs(V[:, j]))
        if V[i, j] < 0:
            V[:, j] = -V[:, j]
    kdiag = np.maximum(np.diag(cov) - np.sum(V**2, axis=1), 1e-6 * np.diag(cov))
    return np.concatenate([mu, np.log(kdiag), V.reshape(-1)])


def refine_mle(spec: DistributionSpec, y: np.ndarray, start: np.ndarray, max_iter: int = MAX_ITER, tol: float = REFINE_TOL):
    """Minimise the mean NLL over a constant raw vector with L-BFGS-B.

    Uses the closed-form mean gradient. Returns ``(raw, mean_nll, n_iter)``;
    hitting the iteration cap returns the best point found.
    """
    n = y.shape[0]

    def objective(eta):
        batch = np.broadcast_to(eta, (n, eta.size))
        try:
            f = float(nll_batch(spec, batch, y).mean())
            g = grad_hess_batch(spec, batch, y).grad.mean(axis=0)
        except (NotPositiveDefinite, NonFinite):
            return np.inf, np.zeros_like(eta)
        return f, g

    start = np.asarray(start, dtype=float)
    f0 = objective(start)[0]
    res = minimize(objective, start, jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "ftol": tol * 1e-3, "gtol": tol})
    if not np.isfinite(res.fun) or res.fun > f0:
        return start.copy(), f0, int(res.nit)
    return np.asarray(res.x, dtype=float), float(res.fun), int(res.nit)


def dirichlet_mle(y: np.ndarray, tol: float = DIRICHLET_TOL, max_iter: int = MAX_ITER) -> np.ndarray:
    """Concentration MLE by Newton's method from a moment-matching start."""
    check_simplex(y)
    m = y.mean(axis=0)
    m2 = (y[:, 0] ** 2).mean()
    denom = m2 - m[0] ** 2
    s = (m[0] - m2) / denom if denom > 0 else 1.0
    alpha = m * max(s, 1e-3)
    logy = np.log(y).mean(axis=0)
    for _ in range(max_iter):
        a0 = alpha.sum()
        grad = digamma(a0) - digamma(alpha) + logy
        hess = polygamma(1, a0) - np.diag(polygamma(1, alpha))
        step = -np.linalg.solve(hess, grad)
        t = 1.0
        while np.any(alpha + t * step <= 0):
            t *= 0.5
        new = alpha + t * step
        if np.max(np.abs(new - alpha) / alpha) < tol:
            return new
        alpha = new
    raise NoConvergence(f"Dirichlet MLE did not converge in {max_iter} iterations")


def fit_offsets(spec: DistributionSpec, y) -> np.ndarray:
    """Raw-scale starting values whose linked parameters are the unconditional MLE."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if y.shape[1] != spec.dim:
        raise DataError(f"responses have {y.shape[1]} columns, expected {spec.dim}")
    fam = spec.family
    if fam is Family.DIRICHLET:
        return np.log(dirichlet_mle(y))
    if y.shape[0] < spec.dim + 2:
        raise DataError(f"need at least {spec.dim + 2} rows to estimate a {spec.dim}-dimensional covariance")
    if fam is Family.GAUSSIAN_CHOLESKY:
        return _gaussian_cholesky_raw(y)
    if fam is Family.GAUSSIAN_LOWRANK:
        start = _lowrank_start(y, spec.rank)
        return refine_mle(spec, y, start)[0]
    start = np.append(_gaussian_cholesky_raw(y), np.log(NU_START - 2.0))
    return refine_mle(spec, y, start)[0]
