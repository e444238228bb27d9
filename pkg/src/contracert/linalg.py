"""Dense real matrix support: symmetric eigensolves, Cholesky factors,
matrix log-norms, and the continuous-time Riccati machinery used by the
LQR warm start.

Matrices are float64 numpy arrays throughout.  Problem sizes here top out
around n=10, so everything defers to LAPACK via numpy/scipy, which is
deterministic for a fixed input at these sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = ["SymEig", "sym_eig", "mu2", "cholesky_upper", "solve_care"]


def _check_square(a: np.ndarray, what: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"{what} requires a square matrix, got shape {a.shape}")
    if not np.isfinite(a).all():
        raise ValueError(f"{what} requires finite entries")
    return a


@dataclass(frozen=True)
class SymEig:
    """Full spectrum of a symmetrized matrix.

    ``eigenvalues`` ascend; ``eigenvectors`` holds the matching orthonormal
    eigenvectors as columns.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def sym_eig(a: np.ndarray) -> SymEig:
    """Eigendecomposition of (A + A^T)/2."""
    a = _check_square(a, "sym_eig")
    sym = 0.5 * (a + a.T)
    w, v = np.linalg.eigh(sym)
    return SymEig(w, v)


def mu2(a: np.ndarray) -> float:
    """l2 logarithmic norm: largest eigenvalue of the symmetric part."""
    return float(sym_eig(a).eigenvalues[-1])


def cholesky_upper(s: np.ndarray) -> np.ndarray:
    """Upper-triangular U with U^T U = S for symmetric positive-definite S."""
    s = _check_square(s, "cholesky_upper")
    sym = 0.5 * (s + s.T)
    try:
        lower = np.linalg.cholesky(sym)
    except np.linalg.LinAlgError as exc:
        raise ValueError("matrix is not positive definite") from exc
    return lower.T.copy()


def solve_care(
    a: np.ndarray,
    b: np.ndarray,
    q: np.ndarray,
    r: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Solve A^T S + S A - S B R^-1 B^T S + Q = 0 for the stabilizing S.

    Returns (K, S) with K = R^-1 B^T S.  Raises if the residual exceeds
    1e-8 * ||Q||_F or the closed loop A - B K is not Hurwitz, which only
    happens when (A, B) is not stabilizable or the weights are degenerate.
    """
    a = _check_square(a, "solve_care: A")
    q = _check_square(q, "solve_care: Q")
    r = _check_square(r, "solve_care: R")
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (a.shape[0], r.shape[0]):
        raise ValueError(f"B shape {b.shape} incompatible with A {a.shape}, R {r.shape}")

    s = scipy.linalg.solve_continuous_are(a, b, q, r)
    s = 0.5 * (s + s.T)
    k = np.linalg.solve(r, b.T @ s)

    residual = a.T @ s + s @ a - s @ b @ np.linalg.solve(r, b.T @ s) + q
    tol = 1e-8 * max(np.linalg.norm(q), 1.0)
    if np.linalg.norm(residual) > tol:
        raise RuntimeError(
            f"Riccati solve did not converge: residual {np.linalg.norm(residual):.3e}"
        )
    closed_loop = a - b @ k
    abscissa = float(np.max(np.real(np.linalg.eigvals(closed_loop))))
    if abscissa >= 0.0:
        raise RuntimeError(f"Riccati gain is not stabilizing (abscissa {abscissa:.3e})")
    return k, s
