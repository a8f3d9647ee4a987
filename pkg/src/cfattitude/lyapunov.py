"""Continuous Lyapunov equation ``A^T P + P A = -Q`` for small dense ``A``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

SYM_TOL = 1e-10
RESIDUAL_TOL = 1e-9


class LyapunovError(ValueError):
    """No symmetric positive-definite solution (``A`` not Hurwitz, bad ``Q``)."""


@dataclass(frozen=True)
class LyapunovSolution:
    P: NDArray[np.float64]
    residual_norm: float


def residual(A: ArrayLike, P: ArrayLike, Q: ArrayLike) -> float:
    """Frobenius norm of ``A^T P + P A + Q``."""
    A, P, Q = (np.asarray(x, dtype=float) for x in (A, P, Q))
    return float(np.linalg.norm(A.T @ P + P @ A + Q))


def _vectorized_solve(A: NDArray[np.float64], Q: NDArray[np.float64]) -> NDArray[np.float64]:
    d = A.shape[0]
    eye = np.eye(d)
    # column-major vec: vec(A^T P) = (I ⊗ A^T) vec(P), vec(P A) = (A^T ⊗ I) vec(P)
    K = np.kron(eye, A.T) + np.kron(A.T, eye)
    try:
        p = np.linalg.solve(K, -Q.reshape(-1, order="F"))
    except np.linalg.LinAlgError as exc:
        raise LyapunovError("singular Lyapunov operator; A has eigenvalues summing to zero") from exc
    return p.reshape(d, d, order="F")


def solve_lyapunov(A: ArrayLike, Q: ArrayLike) -> LyapunovSolution:
    """Unique SPD solution of ``A^T P + P A = -Q`` for Hurwitz ``A``, SPD ``Q``.

    Raises:
        LyapunovError: if ``Q`` is not symmetric positive definite or the
            solution fails the residual / definiteness checks (which is what
            happens when ``A`` is not Hurwitz).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    if A.shape[0] != A.shape[1] or A.shape != Q.shape:
        raise LyapunovError(f"shape mismatch: A {A.shape}, Q {Q.shape}")
    if not np.allclose(Q, Q.T, rtol=0.0, atol=SYM_TOL * max(1.0, np.abs(Q).max())):
        raise LyapunovError("Q must be symmetric")
    if np.linalg.eigvalsh(Q).min() <= 0.0:
        raise LyapunovError("Q must be positive definite")

    P = _vectorized_solve(A, Q)
    P = 0.5 * (P + P.T)
    res = residual(A, P, Q)
    if not np.isfinite(res) or res > RESIDUAL_TOL * np.linalg.norm(Q):
        raise LyapunovError(f"Lyapunov residual {res:.3e} too large; A is likely not Hurwitz")
    if np.linalg.eigvalsh(P).min() <= SYM_TOL:
        raise LyapunovError("solution is not positive definite; A is not Hurwitz")
    return LyapunovSolution(P=P, residual_norm=res)
