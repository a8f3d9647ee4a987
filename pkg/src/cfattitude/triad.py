"""TRIAD two-vector attitude determination."""

from __future__ import annotations

from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .so3 import rot_to_quat

COLLINEAR_TOL = 1e-3


class DegenerateTriadError(ValueError):
    """The two vectors of a frame are (nearly) collinear."""


class VectorPair(NamedTuple):
    body: NDArray[np.float64]
    reference: NDArray[np.float64]


def _triad_frame(v1: NDArray[np.float64], v2: NDArray[np.float64], label: str) -> NDArray[np.float64]:
    t1 = v1 / np.linalg.norm(v1)
    c = np.cross(t1, v2 / np.linalg.norm(v2))
    nc = np.linalg.norm(c)
    if nc <= COLLINEAR_TOL:
        raise DegenerateTriadError(f"{label} vectors are collinear (|v1 x v2| = {nc:.2e})")
    t2 = c / nc
    return np.column_stack([t1, t2, np.cross(t1, t2)])


def triad_estimate(primary: VectorPair, secondary: VectorPair) -> NDArray[np.float64]:
    """Rotation ``R`` (body to reference) with ``R.T @ r1 == b1`` exactly.

    The primary pair is matched exactly; the secondary one only fixes the
    rotation about it.  The output is orthonormal even for inconsistent
    (noisy) inputs.
    """
    body = _triad_frame(np.asarray(primary.body, float), np.asarray(secondary.body, float), "body")
    ref = _triad_frame(np.asarray(primary.reference, float), np.asarray(secondary.reference, float), "reference")
    return ref @ body.T


def triad(b1: ArrayLike, b2: ArrayLike, r1: ArrayLike, r2: ArrayLike) -> NDArray[np.float64]:
    return triad_estimate(VectorPair(np.asarray(b1, float), np.asarray(r1, float)), VectorPair(np.asarray(b2, float), np.asarray(r2, float)))


def triad_quaternion(b1: ArrayLike, b2: ArrayLike, r1: ArrayLike, r2: ArrayLike) -> NDArray[np.float64]:
    return rot_to_quat(triad(b1, b2, r1, r2))
