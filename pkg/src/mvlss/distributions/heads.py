"""Link functions, densities, moments and sampling for every family.

All ``*_batch`` functions take raw predictors of shape ``(N, K)`` and work
row-wise; the scalar entry points (``link_apply``, ``nll``, ...) accept a
single length-``K`` vector and are thin wrappers over the batched code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from ..errors import InvalidResponse, NonFinite, Unsupported
from ..linalg import (
    LowerTriangular,
    batch_cholesky,
    batch_solve_lower,
    batch_tril,
    compose_cov_cholesky,
    compose_cov_lowrank,
)
from .spec import DistributionSpec, Family

LOG_2PI = float(np.log(2.0 * np.pi))
SIMPLEX_ATOL = 1e-6


@dataclass(frozen=True)
class GaussianParams:
    mu: np.ndarray
    chol: LowerTriangular | None = None
    kdiag: np.ndarray | None = None
    v: np.ndarray | None = None

    def covariance(self) -> np.ndarray:
        if self.chol is not None:
            return compose_cov_cholesky(self.chol)
        return compose_cov_lowrank(self.kdiag, self.v)


@dataclass(frozen=True)
class StudentTParams:
    mu: np.ndarray
    chol: LowerTriangular
    nu: float

    def covariance(self) -> np.ndarray:
        return self.nu / (self.nu - 2.0) * compose_cov_cholesky(self.chol)


@dataclass(frozen=True)
class DirichletParams:
    alpha: np.ndarray


@dataclass
class LinkedBatch:
    """Row-wise linked parameters; unused fields stay ``None``."""

    mu: np.ndarray | None = None
    log_diag: np.ndarray | None = None
    L: np.ndarray | None = None
    kdiag: np.ndarray | None = None
    V: np.ndarray | None = None
    nu: np.ndarray | None = None
    alpha: np.ndarray | None = None

    def scale_matrix(self) -> np.ndarray:
        """``L L^T`` or ``K + V V^T`` for every row."""
        if self.L is not None:
            return self.L @ np.swapaxes(self.L, 1, 2)
        out = self.V @ np.swapaxes(self.V, 1, 2)
        d = self.kdiag.shape[1]
        out[:, np.arange(d), np.arange(d)] += self.kdiag
        return out


def _as_batch(spec: DistributionSpec, raw) -> np.ndarray:
    raw = np.asarray(raw, dtype=float)
    if raw.ndim == 1:
        raw = raw[None, :]
    if raw.ndim != 2 or raw.shape[1] != spec.n_params:
        raise ValueError(f"raw predictors must have {spec.n_params} columns, got shape {raw.shape}")
    return raw


def _exp_checked(x: np.ndarray, what: str) -> np.ndarray:
    with np.errstate(over="ignore"):
        out = np.exp(x)
    if not np.all(np.isfinite(out)):
        raise NonFinite(f"non-finite {what} after applying the exp link")
    return out


def link_batch(spec: DistributionSpec, raw) -> LinkedBatch:
    raw = _as_batch(spec, raw)
    if not np.all(np.isfinite(raw)):
        raise NonFinite("raw predictors contain non-finite values")
    d = spec.dim
    fam = spec.family
    if fam is Family.DIRICHLET:
        return LinkedBatch(alpha=_exp_checked(raw, "Dirichlet concentration"))
    mu = raw[:, :d]
    log_diag = raw[:, d : 2 * d]
    diag = _exp_checked(log_diag, "diagonal entry")
    if fam is Family.GAUSSIAN_LOWRANK:
        V = raw[:, 2 * d :].reshape(-1, d, spec.rank)
        return LinkedBatch(mu=mu, log_diag=log_diag, kdiag=diag, V=V)
    off = raw[:, 2 * d : 2 * d + spec.n_offdiag]
    out = LinkedBatch(mu=mu, log_diag=log_diag, L=batch_tril(diag, off))
    if fam is Family.STUDENT_T:
        out.nu = 2.0 + _exp_checked(raw[:, -1], "degrees of freedom")
    return out


def linked_values(spec: DistributionSpec, raw) -> np.ndarray:
    """Linked parameters in raw-layout order (see :meth:`DistributionSpec.param_names`)."""
    raw = _as_batch(spec, raw)
    lb = link_batch(spec, raw)
    out = raw.copy()
    d = spec.dim
    if spec.family is Family.DIRICHLET:
        out[:] = lb.alpha
        return out
    out[:, d : 2 * d] = np.exp(lb.log_diag)
    if spec.family is Family.STUDENT_T:
        out[:, -1] = lb.nu
    return out


def link_apply(spec: DistributionSpec, raw):
    """Map one raw vector to the family's parameter object."""
    raw = np.asarray(raw, dtype=float).reshape(-1)
    lb = link_batch(spec, raw)
    fam = spec.family
    if fam is Family.DIRICHLET:
        return DirichletParams(alpha=lb.alpha[0])
    mu = lb.mu[0].copy()
    if fam is Family.GAUSSIAN_LOWRANK:
        return GaussianParams(mu=mu, kdiag=lb.kdiag[0].copy(), v=lb.V[0].copy())
    chol = LowerTriangular.from_dense(lb.L[0])
    if fam is Family.STUDENT_T:
        return StudentTParams(mu=mu, chol=chol, nu=float(lb.nu[0]))
    return GaussianParams(mu=mu, chol=chol)


def check_simplex(y: np.ndarray, atol: float = SIMPLEX_ATOL) -> None:
    """Raise :class:`InvalidResponse` unless every row lies strictly inside the simplex."""
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[None, :]
    bad = ~(np.all((y > 0) & (y < 1), axis=1) & (np.abs(y.sum(axis=1) - 1.0) <= atol))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise InvalidResponse(
            f"Dirichlet response row {i} is not on the open simplex: {y[i].tolist()}"
        )


def closure_adjust(y: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Shift compositions off the simplex boundary: ``(y + eps) / sum(y + eps)``.

    Only applied when explicitly requested; zero shares are otherwise rejected.
    """
    y = np.asarray(y, dtype=float) + eps
    return y / y.sum(axis=-1, keepdims=True)


def _as_response(spec: DistributionSpec, y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        y = y[None, :]
    if y.shape != (n, spec.dim):
        raise ValueError(f"responses must have shape ({n}, {spec.dim}), got {y.shape}")
    if not np.all(np.isfinite(y)):
        raise InvalidResponse("responses contain non-finite values")
    return y


def mahalanobis_terms(lb: LinkedBatch, y: np.ndarray):
    """Return ``(z, half_logdet)`` with ``z = C^{-1}(y - mu)`` for the scale factor ``C``."""
    if lb.L is not None:
        z = batch_solve_lower(lb.L, y - lb.mu)
        return z, lb.log_diag.sum(axis=1)
    C = batch_cholesky(lb.scale_matrix())
    z = batch_solve_lower(C, y - lb.mu)
    d = C.shape[1]
    return z, np.log(C[:, np.arange(d), np.arange(d)]).sum(axis=1)


def nll_batch(spec: DistributionSpec, raw, y) -> np.ndarray:
    """Per-row negative log-likelihood, shape ``(N,)``."""
    raw = _as_batch(spec, raw)
    y = _as_response(spec, y, raw.shape[0])
    lb = link_batch(spec, raw)
    d = spec.dim
    if spec.family is Family.DIRICHLET:
        check_simplex(y)
        a = lb.alpha
        out = gammaln(a).sum(axis=1) - gammaln(a.sum(axis=1)) - ((a - 1.0) * np.log(y)).sum(axis=1)
    else:
        z, half_logdet = mahalanobis_terms(lb, y)
        q = np.einsum("nd,nd->n", z, z)
        if spec.family is Family.STUDENT_T:
            nu = lb.nu
            out = (
                gammaln(0.5 * nu)
                - gammaln(0.5 * (nu + d))
                + 0.5 * d * np.log(np.pi * nu)
                + half_logdet
                + 0.5 * (nu + d) * np.log1p(q / nu)
            )
        else:
            out = 0.5 * d * LOG_2PI + half_logdet + 0.5 * q
    if not np.all(np.isfinite(out)):
        raise NonFinite("negative log-likelihood is not finite")
    return out


def nll(spec: DistributionSpec, raw, y) -> float:
    """Negative log-likelihood of one response vector."""
    return float(nll_batch(spec, np.asarray(raw, dtype=float).reshape(1, -1), y)[0])


def mean_batch(spec: DistributionSpec, raw) -> np.ndarray:
    lb = link_batch(spec, raw)
    if spec.family is Family.DIRICHLET:
        return lb.alpha / lb.alpha.sum(axis=1, keepdims=True)
    return lb.mu.copy()


def mean(spec: DistributionSpec, raw) -> np.ndarray:
    return mean_batch(spec, np.asarray(raw, dtype=float).reshape(1, -1))[0]


def covariance_batch(spec: DistributionSpec, raw) -> np.ndarray:
    if spec.family is Family.DIRICHLET:
        raise Unsupported("covariance output is only defined for the Gaussian and Student-T heads")
    lb = link_batch(spec, raw)
    cov = lb.scale_matrix()
    cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
    if spec.family is Family.STUDENT_T:
        cov *= (lb.nu / (lb.nu - 2.0))[:, None, None]
    return cov


def covariance(spec: DistributionSpec, raw) -> np.ndarray:
    return covariance_batch(spec, np.asarray(raw, dtype=float).reshape(1, -1))[0]


def sample_batch(spec: DistributionSpec, raw, rng: np.random.Generator) -> np.ndarray:
    """Draw one response per row of ``raw``."""
    raw = _as_batch(spec, raw)
    lb = link_batch(spec, raw)
    n, d = raw.shape[0], spec.dim
    if spec.family is Family.DIRICHLET:
        g = rng.standard_gamma(lb.alpha)
        return g / g.sum(axis=1, keepdims=True)
    C = lb.L if lb.L is not None else batch_cholesky(lb.scale_matrix())
    z = rng.standard_normal((n, d))
    step = np.einsum("nij,nj->ni", C, z)
    if spec.family is Family.STUDENT_T:
        w = rng.chisquare(lb.nu)
        step *= np.sqrt(lb.nu / w)[:, None]
    return lb.mu + step


def sample(spec: DistributionSpec, raw, n: int, seed) -> np.ndarray:
    """``n`` iid draws from the distribution described by one raw vector."""
    raw = np.asarray(raw, dtype=float).reshape(1, -1)
    rng = np.random.default_rng(seed)
    return sample_batch(spec, np.repeat(raw, n, axis=0), rng)
