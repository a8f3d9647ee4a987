"""Gain-vector polynomials, companion matrices and Hurwitz membership.

A gain vector ``gamma = (g1, ..., gn)`` is associated with the monic
polynomial ``s^n + g1 s^(n-1) + ... + gn`` and with the companion matrix
whose last row is ``(-gn, ..., -g1)``.  Direct filters need that polynomial
to be Hurwitz; passive filters additionally need the truncated vector
``(g1, ..., g_{n-1})`` to be Hurwitz.
"""

from __future__ import annotations

import enum
from math import comb

import numpy as np
from numpy.typing import ArrayLike, NDArray

PIVOT_TOL = 1e-12


class IndeterminateHurwitzError(ArithmeticError):
    """A Routh pivot vanished within tolerance: the polynomial sits on the
    stability boundary and cannot be classified reliably."""


class Stability(enum.Enum):
    HURWITZ = "hurwitz"
    NOT_HURWITZ = "not_hurwitz"
    INDETERMINATE = "indeterminate"


def _as_gamma(gamma: ArrayLike) -> NDArray[np.float64]:
    g = np.atleast_1d(np.asarray(gamma, dtype=float))
    if g.ndim != 1 or g.size == 0:
        raise ValueError("gain vector must be a non-empty 1-D sequence")
    return g


def char_poly_coeffs(gamma: ArrayLike) -> NDArray[np.float64]:
    """Monic coefficients ``[1, g1, ..., gn]``, highest power first."""
    return np.concatenate([[1.0], _as_gamma(gamma)])


def companion_matrix(gamma: ArrayLike) -> NDArray[np.float64]:
    g = _as_gamma(gamma)
    n = g.size
    A = np.eye(n, k=1)
    A[-1, :] = -g[::-1]
    return A


def project_gamma(gamma: ArrayLike) -> NDArray[np.float64]:
    """Drop the last gain: ``(g1, ..., gn) -> (g1, ..., g_{n-1})``."""
    g = _as_gamma(gamma)
    if g.size < 2:
        raise ValueError("projection needs a gain vector of length >= 2")
    return g[:-1].copy()


def routh_stability(gamma: ArrayLike, tol: float = PIVOT_TOL) -> Stability:
    """Classify ``P_gamma`` with the Routh array.

    Non-positive coefficients short-circuit to ``NOT_HURWITZ`` (a Hurwitz
    polynomial has strictly positive coefficients).  A first-column pivot
    smaller than ``tol`` relative to its row scale gives ``INDETERMINATE``.
    """
    coeffs = char_poly_coeffs(gamma)
    if np.any(coeffs[1:] <= 0.0):
        return Stability.NOT_HURWITZ
    n = coeffs.size - 1
    width = n // 2 + 1
    prev = np.zeros(width)
    cur = np.zeros(width)
    prev[: len(coeffs[0::2])] = coeffs[0::2]
    cur[: len(coeffs[1::2])] = coeffs[1::2]
    for _ in range(n):
        scale = max(1.0, np.max(np.abs(cur)), np.max(np.abs(prev)))
        pivot = cur[0]
        if abs(pivot) < tol * scale:
            return Stability.INDETERMINATE
        if pivot < 0.0:
            return Stability.NOT_HURWITZ
        nxt = np.zeros(width)
        nxt[:-1] = (pivot * prev[1:] - prev[0] * cur[1:]) / pivot
        prev, cur = cur, nxt
    return Stability.HURWITZ


def is_hurwitz(gamma: ArrayLike) -> bool:
    """True iff every root of ``P_gamma`` has strictly negative real part.

    Raises:
        IndeterminateHurwitzError: on a degenerate Routh pivot.
    """
    status = routh_stability(gamma)
    if status is Stability.INDETERMINATE:
        raise IndeterminateHurwitzError(f"degenerate Routh pivot for gamma={list(_as_gamma(gamma))}")
    return status is Stability.HURWITZ


def in_hbar(gamma: ArrayLike) -> bool:
    """Passive-filter admissibility: ``gamma`` and its projection are Hurwitz.

    For ``n == 1`` there is nothing to project and this reduces to
    :func:`is_hurwitz`.
    """
    g = _as_gamma(gamma)
    if not is_hurwitz(g):
        return False
    if g.size == 1:
        return True
    return is_hurwitz(project_gamma(g))


def binomial_gains(n: int, alpha: float) -> NDArray[np.float64]:
    """Gains with ``P_gamma(s) = (s + alpha)^n``, i.e. ``g_l = C(n, l) alpha^l``."""
    if n < 1:
        raise ValueError("order must be >= 1")
    if not alpha > 0.0:
        raise ValueError("alpha must be > 0")
    return np.array([comb(n, l) * alpha**l for l in range(1, n + 1)], dtype=float)


def kron_with_identity(E: ArrayLike, k: int) -> NDArray[np.float64]:
    """``E ⊗ I_k``; its spectrum is that of ``E`` with multiplicity ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return np.kron(np.asarray(E, dtype=float), np.eye(k))
