"""Small dense linear-algebra kernels for the distribution heads.

Everything here is unblocked and written for response dimensions of at most a
few hundred. Square matrices are plain 2-D ``numpy`` arrays; lower-triangular
factors are stored as a :class:`LowerTriangular` holding the strictly positive
diagonal and the strictly-lower entries in row-major order
``(l21, l31, l32, l41, ...)``.

Batched variants (leading axis = observation) are provided for the hot paths
used during boosting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NotPositiveDefinite

SYMMETRY_RTOL = 1e-10


def tril_offdiag_indices(dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column indices of the strictly-lower entries in row-major order."""
    return np.tril_indices(dim, -1)


@dataclass(frozen=True)
class LowerTriangular:
    diag: np.ndarray
    offdiag: np.ndarray

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=float).reshape(-1)
        offdiag = np.asarray(self.offdiag, dtype=float).reshape(-1)
        d = diag.size
        if d < 1:
            raise ValueError("dimension must be at least 1")
        if offdiag.size != d * (d - 1) // 2:
            raise ValueError(
                f"expected {d * (d - 1) // 2} off-diagonal entries, got {offdiag.size}"
            )
        if not np.all(diag > 0):
            raise ValueError("diagonal of a Cholesky factor must be strictly positive")
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "offdiag", offdiag)

    @property
    def dim(self) -> int:
        return self.diag.size

    def dense(self) -> np.ndarray:
        d = self.dim
        out = np.zeros((d, d))
        out[np.diag_indices(d)] = self.diag
        out[tril_offdiag_indices(d)] = self.offdiag
        return out

    @classmethod
    def from_dense(cls, m: np.ndarray) -> "LowerTriangular":
        m = np.asarray(m, dtype=float)
        return cls(np.diag(m).copy(), m[tril_offdiag_indices(m.shape[0])])


def _check_square(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        raise ValueError(f"expected a non-empty square matrix, got shape {m.shape}")
    return m


def cholesky_factorize(m: np.ndarray, rtol: float = 0.0) -> LowerTriangular:
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Parameters
    ----------
    m : ndarray, shape (D, D)
        Symmetric matrix (checked to ``1e-10`` relative to its largest entry).
    rtol : float
        A pivot is rejected when it is ``<= rtol * m[j, j]``. The default
        rejects only non-positive pivots.

    Raises
    ------
    NotPositiveDefinite
        If any pivot fails the test above.
    """
    m = _check_square(m)
    scale = np.max(np.abs(m))
    if np.max(np.abs(m - m.T)) > SYMMETRY_RTOL * max(scale, np.finfo(float).tiny):
        raise ValueError("matrix is not symmetric")
    d = m.shape[0]
    L = np.zeros((d, d))
    for j in range(d):
        s = m[j, j] - np.dot(L[j, :j], L[j, :j])
        if not s > rtol * m[j, j] or not np.isfinite(s):
            raise NotPositiveDefinite(f"pivot {j} is {s!r}; matrix is not positive definite")
        L[j, j] = np.sqrt(s)
        if j + 1 < d:
            L[j + 1 :, j] = (m[j + 1 :, j] - L[j + 1 :, :j] @ L[j, :j]) / L[j, j]
    return LowerTriangular.from_dense(L)


def compose_cov_cholesky(L: LowerTriangular) -> np.ndarray:
    """Covariance ``L L^T``."""
    dense = L.dense()
    out = dense @ dense.T
    return 0.5 * (out + out.T)


def compose_cov_lowrank(kdiag: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Covariance ``diag(kdiag) + V V^T``."""
    kdiag = np.asarray(kdiag, dtype=float).reshape(-1)
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.shape[0] != kdiag.size or v.shape[1] < 1:
        raise ValueError("V must have shape (D, r) with r >= 1")
    if not np.all(kdiag > 0):
        raise ValueError("diagonal part must be strictly positive")
    out = v @ v.T
    out = 0.5 * (out + out.T)
    out[np.diag_indices(kdiag.size)] += kdiag
    return out


def logdet_triangular(L: LowerTriangular) -> float:
    """``log |L L^T|``."""
    return 2.0 * float(np.sum(np.log(L.diag)))


def solve_lower(L: LowerTriangular, b: np.ndarray) -> np.ndarray:
    """Solve ``L x = b`` by forward substitution."""
    dense = L.dense()
    b = np.asarray(b, dtype=float).reshape(-1)
    if b.size != L.dim:
        raise ValueError("right-hand side has the wrong length")
    x = np.empty_like(b)
    for i in range(b.size):
        x[i] = (b[i] - np.dot(dense[i, :i], x[:i])) / dense[i, i]
    return x


# -- batched kernels ---------------------------------------------------------


def batch_tril(diag: np.ndarray, offdiag: np.ndarray) -> np.ndarray:
    """Assemble ``(N, D, D)`` lower-triangular matrices."""
    n, d = diag.shape
    out = np.zeros((n, d, d))
    idx = np.arange(d)
    out[:, idx, idx] = diag
    if d > 1:
        r, c = tril_offdiag_indices(d)
        out[:, r, c] = offdiag
    return out


def batch_solve_lower(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Forward substitution for a stack of systems ``L[i] x[i] = b[i]``."""
    n, d = b.shape
    x = np.empty((n, d))
    for i in range(d):
        acc = b[:, i] - np.einsum("nj,nj->n", L[:, i, :i], x[:, :i])
        x[:, i] = acc / L[:, i, i]
    return x


def batch_solve_upper_t(L: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Back substitution for ``L[i]^T x[i] = b[i]``."""
    n, d = b.shape
    x = np.empty((n, d))
    for i in range(d - 1, -1, -1):
        acc = b[:, i] - np.einsum("nj,nj->n", L[:, i + 1 :, i], x[:, i + 1 :])
        x[:, i] = acc / L[:, i, i]
    return x


def batch_tril_inverse(L: np.ndarray) -> np.ndarray:
    """Inverse of each lower-triangular matrix in a stack."""
    n, d, _ = L.shape
    eye = np.broadcast_to(np.eye(d), (n, d, d))
    cols = [batch_solve_lower(L, eye[:, :, j]) for j in range(d)]
    return np.stack(cols, axis=2)


def batch_cholesky(m: np.ndarray) -> np.ndarray:
    """Cholesky factors of a stack of SPD matrices.

    Raises :class:`NotPositiveDefinite` if any member fails.
    """
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
