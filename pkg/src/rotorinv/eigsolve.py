"""Generalized symmetric eigensolver for K u = lambda M u.

Small systems go through a dense LAPACK solve; larger ones use
shift-invert Lanczos with a small negative shift so the singular
free-free stiffness never has to be factorized on its own. The Lanczos
start vector is fixed, which makes repeated solves bit-reproducible.

Returned eigenpairs are ascending, M-orthonormal, and sign-fixed
(largest-magnitude entry positive).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

_V0_SEED = 862_268_131  # fixed Lanczos start vector seed


class ConvergenceFailureError(RuntimeError):
    pass


class DimensionTooSmallError(ValueError):
    pass


@dataclass(frozen=True)
class EigenSettings:
    dense_threshold: int = 300     # solve densely at or below this many dofs
    shift_eps: float = 1e-4        # sigma = -shift_eps * trace(K)/n
    residual_tol: float = 1e-8     # ||K u - lam M u|| / (||K|| ||u||) per pair
    rigid_tol: float = 1e-6        # lam rigid iff lam < rigid_tol * lam_7
    max_iter: int = 20000


@dataclass(frozen=True)
class Spectrum:
    """Ascending eigenvalues with M-orthonormal eigenvectors (columns)."""

    values: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray

    def __len__(self) -> int:
        return self.values.shape[0]

    def n_rigid(self, rigid_tol: float = 1e-6) -> int:
        """Rigid modes by relative gap against the 7th eigenvalue."""
        if len(self) < 7:
            raise DimensionTooSmallError("need at least 7 eigenvalues for the gap test")
        lam7 = self.values[6]
        return int((self.values < rigid_tol * lam7).sum())


def _as_operators(K, M):
    if sp.issparse(K):
        K = K.tocsr()
    else:
        K = np.asarray(K, dtype=float)
    if sp.issparse(M):
        M = M.tocsr()
    else:
        M = np.asarray(M, dtype=float)
    return K, M


def _matrix_scale(K) -> float:
    if sp.issparse(K):
        return float(np.abs(K.data).max()) if K.nnz else 0.0
    return float(np.abs(K).max())


def smallest_eigenpairs(K, M, m: int, settings: EigenSettings = EigenSettings()) -> Spectrum:
    """Lowest m eigenpairs of the generalized symmetric problem."""
    K, M = _as_operators(K, M)
    n = K.shape[0]
    if m > n:
        raise DimensionTooSmallError(f"asked for {m} pairs of a {n}-dof system")

    if n <= settings.dense_threshold or m > n // 2:
        Kd = K.toarray() if sp.issparse(K) else K
        Md = M.toarray() if sp.issparse(M) else M
        vals, vecs = sla.eigh(Kd, Md, subset_by_index=[0, m - 1])
    else:
        trace = K.diagonal().sum() if sp.issparse(K) else np.trace(K)
        sigma = -settings.shift_eps * trace / n
        rng = np.random.default_rng(_V0_SEED)
        v0 = rng.standard_normal(n)
        try:
            vals, vecs = spla.eigsh(
                K, k=m, M=M, sigma=sigma, which="LM", v0=v0, maxiter=settings.max_iter
            )
        except spla.ArpackNoConvergence as exc:
            raise ConvergenceFailureError(f"Lanczos did not converge: {exc}") from exc

    order = np.argsort(vals, kind="stable")
    vals = vals[order]
    vecs = vecs[:, order]

    # enforce M-orthonormality (degenerate pairs come back slightly mixed)
    G = vecs.T @ (M @ vecs)
    L = np.linalg.cholesky(0.5 * (G + G.T))
    vecs = sla.solve_triangular(L, vecs.T, lower=True).T

    # deterministic sign: largest-magnitude entry positive
    idx = np.abs(vecs).argmax(axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    vecs = vecs * signs

    k_scale = _matrix_scale(K)
    res = np.empty(m)
    for i in range(m):
        u = vecs[:, i]
        r = K @ u - vals[i] * (M @ u)
        res[i] = np.linalg.norm(r) / (k_scale * np.linalg.norm(u))
    if res.max() > settings.residual_tol:
        raise ConvergenceFailureError(
            f"eigenpair residual {res.max():.3e} exceeds {settings.residual_tol:.1e}"
        )
    return Spectrum(values=vals, vectors=vecs, residuals=res)
