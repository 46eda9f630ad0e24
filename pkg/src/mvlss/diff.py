"""Gradients and diagonal Hessians of the NLL with respect to raw predictors.

Derivatives are closed-form and vectorised over observations. They are checked
against central finite differences of :func:`mvlss.distributions.nll` by
:func:`fd_check`, which never touches the closed-form code path.

Notation used in the comments below: ``r = y - mu``, ``z = L^{-1} r``,
``w = L^{-T} z`` (so ``w = Sigma^{-1} r``) and ``P = Sigma^{-1}``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import digamma, polygamma

from .distributions import DistributionSpec, Family, link_batch, nll
from .distributions.heads import _as_batch, _as_response, check_simplex
from .errors import NonFinite
from .linalg import batch_cholesky, batch_solve_lower, batch_tril_inverse, tril_offdiag_indices

HESS_FLOOR = 1e-6


@dataclass
class GradHessBatch:
    grad: np.ndarray
    hess: np.ndarray
    floored: np.ndarray

    @property
    def shape(self):
        return self.grad.shape


def _trigamma(x):
    return polygamma(1, x)


def _cholesky_quadratic(lb, y, spec):
    """Derivatives of ``q/2 = |z|^2 / 2`` for the Cholesky layout.

    Returns ``(q, gq, hq)``; the log-determinant part is added by the caller.
    """
    n, d = y.shape
    L = lb.L
    Linv = batch_tril_inverse(L)
    z = np.einsum("nij,nj->ni", Linv, y - lb.mu)
    w = np.einsum("nji,nj->ni", Linv, z)
    p_diag = np.einsum("nmi,nmi->ni", Linv, Linv)
    diag = L[:, np.arange(d), np.arange(d)]

    k = spec.n_params
    gq = np.empty((n, k))
    hq = np.empty((n, k))
    gq[:, :d] = -w
    hq[:, :d] = p_diag
    gq[:, d : 2 * d] = -diag * w * z
    hq[:, d : 2 * d] = diag * w * z + (diag * z) ** 2 * p_diag
    if d > 1:
        ri, ci = tril_offdiag_indices(d)
        sl = slice(2 * d, 2 * d + ri.size)
        gq[:, sl] = -w[:, ri] * z[:, ci]
        hq[:, sl] = z[:, ci] ** 2 * p_diag[:, ri]
    q = np.einsum("nd,nd->n", z, z)
    return q, gq, hq


def _gaussian_cholesky(spec, lb, y):
    d = spec.dim
    _, g, h = _cholesky_quadratic(lb, y, spec)
    g[:, d : 2 * d] += 1.0
    return g, h


def _student_t(spec, lb, y):
    d = spec.dim
    k = spec.n_params
    n = y.shape[0]
    g = np.empty((n, k))
    h = np.empty((n, k))
    q, gq, hq = _cholesky_quadratic(lb, y, spec)
    m = k - 1
    nu = lb.nu
    c = ((nu + d) / (nu + q))[:, None]
    g[:, :m] = c * gq[:, :m]
    g[:, d : 2 * d] += 1.0
    h[:, :m] = c * hq[:, :m] - 2.0 * c * gq[:, :m] ** 2 / (nu + q)[:, None]

    # f(nu) = lgamma(nu/2) - lgamma((nu+D)/2) + (nu+D)/2 log(nu+q) - nu/2 log(nu) + const
    f1 = 0.5 * (digamma(0.5 * nu) - digamma(0.5 * (nu + d)) + np.log1p(q / nu) + (d - q) / (nu + q))
    f2 = (
        0.25 * (_trigamma(0.5 * nu) - _trigamma(0.5 * (nu + d)))
        + 0.5 / (nu + q)
        + 0.5 * (q - d) / (nu + q) ** 2
        - 0.5 / nu
    )
    t = nu - 2.0
    g[:, m] = t * f1
    h[:, m] = t * f1 + t * t * f2
    return g, h


def _gaussian_lowrank(spec, lb, y):
    d, r = spec.dim, spec.rank
    n = y.shape[0]
    C = batch_cholesky(lb.scale_matrix())
    Cinv = batch_tril_inverse(C)
    P = np.einsum("nmi,nmj->nij", Cinv, Cinv)
    res = y - lb.mu
    alpha = np.einsum("nij,nj->ni", P, res)
    p_diag = P[:, np.arange(d), np.arange(d)]
    kd = lb.kdiag
    V = lb.V

    g = np.empty((n, spec.n_params))
    h = np.empty((n, spec.n_params))
    g[:, :d] = -alpha
    h[:, :d] = p_diag
    base = p_diag - alpha**2
    g[:, d : 2 * d] = 0.5 * kd * base
    h[:, d : 2 * d] = 0.5 * kd * base + kd**2 * (alpha**2 * p_diag - 0.5 * p_diag**2)

    PV = np.einsum("nij,njk->nik", P, V)  # (N, D, r)
    vPv = np.einsum("ndk,ndk->nk", V, PV)  # (N, r)
    va = np.einsum("ndk,nd->nk", V, alpha)  # (N, r)
    a = alpha[:, :, None]
    pd = p_diag[:, :, None]
    gV = PV - a * va[:, None, :]
    hV = (
        pd
        - a**2
        - PV**2
        - vPv[:, None, :] * pd
        + va[:, None, :] ** 2 * pd
        + 2.0 * va[:, None, :] * a * PV
        + a**2 * vPv[:, None, :]
    )
    g[:, 2 * d :] = gV.reshape(n, d * r)
    h[:, 2 * d :] = hV.reshape(n, d * r)
    return g, h


def _dirichlet(spec, lb, y):
    check_simplex(y)
    a = lb.alpha
    a0 = a.sum(axis=1, keepdims=True)
    ga = digamma(a) - digamma(a0) - np.log(y)
    g = a * ga
    h = g + a**2 * (_trigamma(a) - _trigamma(a0))
    return g, h


_KERNELS = {
    Family.GAUSSIAN_CHOLESKY: _gaussian_cholesky,
    Family.GAUSSIAN_LOWRANK: _gaussian_lowrank,
    Family.STUDENT_T: _student_t,
    Family.DIRICHLET: _dirichlet,
}


def grad_hess_raw(spec: DistributionSpec, raw, y):
    """Exact gradients and unfloored Hessian diagonals, each ``(N, K)``."""
    raw = _as_batch(spec, raw)
    y = _as_response(spec, y, raw.shape[0])
    lb = link_batch(spec, raw)
    with np.errstate(over="ignore", invalid="ignore"):
        g, h = _KERNELS[spec.family](spec, lb, y)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(h))):
        raise NonFinite("gradient or Hessian evaluation overflowed")
    return g, h


def grad_hess_batch(spec: DistributionSpec, raw, y, floor: float = HESS_FLOOR) -> GradHessBatch:
    """Gradients and floored diagonal Hessians for a batch of observations."""
    g, h = grad_hess_raw(spec, raw, y)
    floored = h < floor
    return GradHessBatch(grad=g, hess=np.where(floored, floor, h), floored=floored)


def grad_hess(spec: DistributionSpec, raw, y, floor: float = HESS_FLOOR):
    """Single-observation ``(grad, hess)``, each of length ``K``."""
    b = grad_hess_batch(spec, np.asarray(raw, dtype=float).reshape(1, -1), y, floor)
    return b.grad[0], b.hess[0]


@dataclass
class FdReport:
    grad_error: float
    hess_error: float
    fd_grad: np.ndarray
    fd_hess: np.ndarray
    grad: np.ndarray
    hess: np.ndarray
    floored: np.ndarray

    def passes(self, grad_tol: float = 1e-4, hess_tol: float = 1e-3) -> bool:
        return self.grad_error < grad_tol and self.hess_error < hess_tol


def fd_check(spec: DistributionSpec, raw, y, step: float = 1e-5, floor: float = HESS_FLOOR) -> FdReport:
    """Compare :func:`grad_hess` with central differences of :func:`nll`.

    Errors are relative with denominator ``max(|exact|, 1)``. The Hessian
    error only covers entries whose true curvature exceeds ``10 * floor``;
    entries below the floor are reported in ``floored``.
    """
    if not 1e-7 <= step <= 1e-2:
        raise ValueError("step must lie in [1e-7, 1e-2]")
    raw = np.asarray(raw, dtype=float).reshape(-1)
    k = raw.size
    f0 = nll(spec, raw, y)
    fd_g = np.empty(k)
    fd_h = np.empty(k)
    for i in range(k):
        e = np.zeros(k)
        e[i] = step
        fp = nll(spec, raw + e, y)
        fm = nll(spec, raw - e, y)
        fd_g[i] = (fp - fm) / (2 * step)
        fd_h[i] = (fp - 2 * f0 + fm) / step**2
    g, h_raw = grad_hess_raw(spec, raw[None, :], y)
    g, h_raw = g[0], h_raw[0]
    floored = h_raw < floor
    hess = np.where(floored, floor, h_raw)
    gerr = float(np.max(np.abs(g - fd_g) / np.maximum(np.abs(g), 1.0)))
    curved = h_raw > 10 * floor
    if np.any(curved):
        herr = float(np.max(np.abs(h_raw - fd_h)[curved] / np.maximum(np.abs(h_raw[curved]), 1.0)))
    else:
        herr = 0.0
    return FdReport(gerr, herr, fd_g, fd_h, g, hess, floored)


def random_case(spec: DistributionSpec, rng: np.random.Generator):
    """A random interior ``(raw, y)`` pair suitable for derivative checks."""
    d = spec.dim
    k = spec.n_params
    raw = np.empty(k)
    if spec.family is Family.DIRICHLET:
        raw[:] = rng.uniform(-1.0, 1.5, size=k)
        alpha = np.exp(raw)
        y = rng.dirichlet(alpha + 0.5)
        y = np.clip(y, 1e-3, None)
        return raw, y / y.sum()
    raw[:d] = rng.normal(size=d)
    raw[d : 2 * d] = rng.uniform(-0.5, 0.5, size=d)
    raw[2 * d :] = rng.normal(scale=0.5, size=k - 2 * d)
    if spec.family is Family.STUDENT_T:
        raw[-1] = rng.uniform(-1.0, 3.0)
    y = raw[:d] + rng.normal(size=d) * 1.5
    return raw, y
