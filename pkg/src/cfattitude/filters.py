"""Direct and passive n-order complementary filters with gyro-bias estimation.

Each filter keeps, per reference direction ``i``:

- ``x[i]``: the internal compensator state ``(x, x', ..., x^(n-2))`` stacked
  into ``3(n-1)`` numbers (empty for first-order filters);
- ``b_hat[i]``: the filtered body-frame direction;

plus a shared gyro-bias estimate ``eta_hat``.

The direct filter couples the gyro through the raw measurement ``b``; the
passive one uses its own estimate ``b_hat``.  Bias adaptation signs are the
ones that make the respective Lyapunov functions non-increasing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .hurwitz import binomial_gains, companion_matrix, in_hbar, is_hurwitz, kron_with_identity, project_gamma
from .lyapunov import solve_lyapunov

VARIANTS = ("direct", "passive")
COLLINEAR_TOL = 1e-3
MAX_DT = 0.1
DEFAULT_BIAS_GAIN = 0.003
PASSIVE_NORM_BAND = (0.5, 1.5)


class FilterDesignError(ValueError):
    pass


class GainNotAdmissibleError(FilterDesignError):
    """Gain vector outside H_n (direct) or H̄_n (passive)."""


class CollinearReferencesError(FilterDesignError):
    """No pair of reference vectors is sufficiently non-collinear."""


class BiasGainError(FilterDesignError):
    """Bias adaptation gain is not a positive-definite diagonal matrix."""


class FilterDivergenceError(RuntimeError):
    """Filter state became non-finite (or left the nominal band)."""

    def __init__(self, message: str, last_good: "FilterState", t: float | None = None):
        super().__init__(message)
        self.last_good = last_good
        self.t = t


@dataclass(frozen=True)
class MeasurementFrame:
    """One synchronized sample: body directions ``b`` (m, 3) and gyro ``omega_m``."""

    t: float
    b: NDArray[np.float64]
    omega_m: NDArray[np.float64]

    @classmethod
    def create(cls, t: float, b: ArrayLike, omega_m: ArrayLike) -> "MeasurementFrame":
        b = np.atleast_2d(np.asarray(b, dtype=float))
        b = b / np.linalg.norm(b, axis=1, keepdims=True)
        return cls(float(t), b, np.asarray(omega_m, dtype=float))


@dataclass(frozen=True)
class FilterDesign:
    variant: str
    order: int
    gammas: NDArray[np.float64]  # (m, n)
    bias_gain: NDArray[np.float64]  # (3, 3) diagonal
    refs: NDArray[np.float64]  # (m, 3) unit vectors
    A: tuple[NDArray[np.float64], ...]
    B: tuple[NDArray[np.float64], ...]
    P: tuple[NDArray[np.float64], ...]
    Q: tuple[NDArray[np.float64], ...]
    # B^T P, precomputed for the output injection
    BtP: tuple[NDArray[np.float64], ...] = field(repr=False)

    @property
    def m(self) -> int:
        return self.refs.shape[0]

    @property
    def x_dim(self) -> int:
        return 3 * (self.order - 1)


@dataclass(frozen=True)
class FilterState:
    x: NDArray[np.float64]  # (m, 3(n-1))
    b_hat: NDArray[np.float64]  # (m, 3)
    eta_hat: NDArray[np.float64]  # (3,)

    def axpy(self, h: float, d: "FilterState") -> "FilterState":
        """``self + h * d`` (``d`` is usually a derivative)."""
        return FilterState(self.x + h * d.x, self.b_hat + h * d.b_hat, self.eta_hat + h * d.eta_hat)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.x)) and np.all(np.isfinite(self.b_hat)) and np.all(np.isfinite(self.eta_hat)))

    def flat(self) -> NDArray[np.float64]:
        return np.concatenate([self.x.ravel(), self.b_hat.ravel(), self.eta_hat])


def initial_state(design: FilterDesign, b0: ArrayLike, eta0: ArrayLike | None = None) -> FilterState:
    """Start at the first measurement with zero compensator state."""
    b0 = np.array(b0, dtype=float).reshape(design.m, 3)
    eta0 = np.zeros(3) if eta0 is None else np.array(eta0, dtype=float)
    return FilterState(np.zeros((design.m, design.x_dim)), b0, eta0)


def _check_references(refs: NDArray[np.float64]) -> None:
    m = refs.shape[0]
    for i in range(m):
        for j in range(i + 1, m):
            if np.linalg.norm(np.cross(refs[i], refs[j])) > COLLINEAR_TOL:
                return
    raise CollinearReferencesError("need at least two non-collinear reference vectors")


def make_filter_design(
    variant: str,
    order: int,
    gammas: Sequence[ArrayLike] | ArrayLike,
    refs: ArrayLike,
    bias_gain: ArrayLike | float = DEFAULT_BIAS_GAIN,
    q_list: Sequence[ArrayLike] | None = None,
) -> FilterDesign:
    """Validate gains and build the per-vector ``A``, ``B``, ``P`` matrices.

    Args:
        variant: ``"direct"`` or ``"passive"``.
        order: filter order ``n >= 1``.
        gammas: one gain vector of length ``n`` per reference, or a single
            vector shared by all references.
        refs: inertial reference directions, shape ``(m, 3)``; normalized here.
        bias_gain: scalar, length-3 diagonal or 3x3 diagonal matrix.
        q_list: SPD weights for the Lyapunov equations (identity by default).

    Raises:
        GainNotAdmissibleError, CollinearReferencesError, BiasGainError.
    """
    if variant not in VARIANTS:
        raise FilterDesignError(f"unknown variant {variant!r}")
    if order < 1:
        raise FilterDesignError("order must be >= 1")

    refs = np.atleast_2d(np.asarray(refs, dtype=float))
    if refs.ndim != 2 or refs.shape[1] != 3 or refs.shape[0] < 2:
        raise CollinearReferencesError("need at least two 3-D reference vectors")
    refs = refs / np.linalg.norm(refs, axis=1, keepdims=True)
    _check_references(refs)
    m = refs.shape[0]

    g = np.asarray(gammas, dtype=float)
    if g.ndim <= 1:
        g = np.tile(np.atleast_1d(g), (m, 1))
    if g.shape != (m, order):
        raise FilterDesignError(f"gains have shape {g.shape}, expected {(m, order)}")

    G = np.asarray(bias_gain, dtype=float)
    if G.ndim == 0:
        G = G * np.eye(3)
    elif G.ndim == 1:
        G = np.diag(G)
    if G.shape != (3, 3) or np.any(G != np.diag(np.diag(G))) or np.any(np.diag(G) <= 0.0):
        raise BiasGainError("bias gain must be diagonal with strictly positive entries")

    A_list, B_list, P_list, Q_list, BtP_list = [], [], [], [], []
    for i in range(m):
        gamma = g[i]
        if variant == "direct":
            if not is_hurwitz(gamma):
                raise GainNotAdmissibleError(f"gain {list(gamma)} is not Hurwitz")
            core = gamma
        else:
            if not in_hbar(gamma):
                raise GainNotAdmissibleError(f"gain {list(gamma)} is not in H̄_{order}")
            if order == 1:
                # first-order passive filter has no compensator state
                empty = np.zeros((0, 0))
                A_list.append(empty)
                B_list.append(np.zeros((0, 3)))
                P_list.append(empty)
                Q_list.append(empty)
                BtP_list.append(np.zeros((3, 0)))
                continue
            core = project_gamma(gamma)
        k = core.size
        A = kron_with_identity(companion_matrix(core), 3)
        e_last = np.zeros((k, 1))
        e_last[-1, 0] = 1.0
        B = gamma[-1] * np.kron(e_last, np.eye(3))
        Q = np.eye(3 * k) if q_list is None else np.asarray(q_list[i], dtype=float)
        P = solve_lyapunov(A, Q).P
        A_list.append(A)
        B_list.append(B)
        P_list.append(P)
        Q_list.append(Q)
        BtP_list.append(B.T @ P)

    return FilterDesign(
        variant=variant,
        order=order,
        gammas=g,
        bias_gain=G,
        refs=refs,
        A=tuple(A_list),
        B=tuple(B_list),
        P=tuple(P_list),
        Q=tuple(Q_list),
        BtP=tuple(BtP_list),
    )


def binomial_design(variant: str, order: int, refs: ArrayLike, alpha: float = 1.0, **kwargs) -> FilterDesign:
    """Design with ``P_gamma(s) = (s + alpha)^n`` for every reference."""
    return make_filter_design(variant, order, binomial_gains(order, alpha), refs, **kwargs)


def direct_z(design: FilterDesign, x: NDArray[np.float64], b_tilde: NDArray[np.float64]) -> NDArray[np.float64]:
    """Full ``z = (x, x', ..., x^(n-1))`` for one vector of a direct filter.

    The top derivative is not a state: it is fixed algebraically by the
    compensator equation from the stored lower derivatives and ``b - b_hat``.
    """
    return _direct_z(design.gammas, design.order, x, b_tilde)


def _direct_z(gammas: NDArray[np.float64], n: int, x: NDArray[np.float64], b_tilde: NDArray[np.float64]) -> NDArray[np.float64]:
    # gammas, x, b_tilde carry a leading vector axis: (m, n), (m, 3(n-1)), (m, 3)
    top = gammas[:, -1:] * b_tilde
    for k in range(1, n):
        j = n - 1 - k
        top = top - gammas[:, k - 1 : k] * x[:, 3 * j : 3 * j + 3]
    return np.concatenate([x, top], axis=1)


def direct_derivative(design: FilterDesign, state: FilterState, meas: MeasurementFrame) -> FilterState:
    """Time derivative of the direct filter state."""
    if design.variant != "direct":
        raise ValueError("design is not a direct filter")
    b = meas.b
    _check_dims(design, state, b)
    n = design.order
    z = _direct_z(design.gammas, n, state.x, b - state.b_hat)
    x_dot = z[:, 3:]
    x0 = z[:, :3]
    rate = meas.omega_m - state.eta_hat
    b_hat_dot = -np.cross(rate, b) + x0
    eta_dot = np.zeros(3)
    for i in range(design.m):
        upsilon = design.BtP[i] @ z[i]
        eta_dot += np.cross(b[i], upsilon)
    eta_dot = design.bias_gain @ eta_dot
    return FilterState(x_dot, b_hat_dot, eta_dot)


def passive_derivative(design: FilterDesign, state: FilterState, meas: MeasurementFrame) -> FilterState:
    """Time derivative of the passive filter state."""
    if design.variant != "passive":
        raise ValueError("design is not a passive filter")
    b = meas.b
    _check_dims(design, state, b)
    b_tilde = b - state.b_hat
    if design.order == 1:
        x_dot = state.x.copy()
        w = design.gammas[:, :1] * b_tilde
    else:
        x_dot = np.empty_like(state.x)
        w = np.empty((design.m, 3))
        for i in range(design.m):
            x_dot[i] = design.A[i] @ state.x[i] + design.B[i] @ b_tilde[i]
            w[i] = design.BtP[i] @ state.x[i]
    rate = meas.omega_m - state.eta_hat
    b_hat_dot = -np.cross(rate, state.b_hat) + w
    eta_dot = -design.bias_gain @ np.sum(np.cross(b, state.b_hat), axis=0)
    return FilterState(x_dot, b_hat_dot, eta_dot)


def filter_derivative(design: FilterDesign, state: FilterState, meas: MeasurementFrame) -> FilterState:
    if design.variant == "direct":
        return direct_derivative(design, state, meas)
    return passive_derivative(design, state, meas)


def _check_dims(design: FilterDesign, state: FilterState, b: NDArray[np.float64]) -> None:
    if b.shape != (design.m, 3) or state.b_hat.shape != (design.m, 3) or state.x.shape != (design.m, design.x_dim):
        raise ValueError(
            f"dimension mismatch: design m={design.m}, n={design.order}; "
            f"b {b.shape}, b_hat {state.b_hat.shape}, x {state.x.shape}"
        )


def integrate_filter_step(
    design: FilterDesign,
    state: FilterState,
    meas: MeasurementFrame,
    dt: float,
    method: str = "euler",
    check_band: bool = False,
) -> FilterState:
    """Advance the filter by ``dt`` holding ``meas`` constant over the step.

    ``method`` is ``"euler"`` (forward Euler) or ``"rk4"``.  ``b_hat`` is never
    renormalized here.

    Raises:
        FilterDivergenceError: if the new state is not finite, or (with
            ``check_band`` on a passive filter) some ``|b_hat|`` leaves
            ``PASSIVE_NORM_BAND``.
    """
    if not 0.0 < dt <= MAX_DT:
        raise ValueError(f"dt must be in (0, {MAX_DT}], got {dt}")
    f: Callable[[FilterState], FilterState] = lambda s: filter_derivative(design, s, meas)
    if method == "euler":
        new = state.axpy(dt, f(state))
    elif method == "rk4":
        new = rk4(f, state, dt)
    else:
        raise ValueError(f"unknown integrator {method!r}")
    if not new.is_finite():
        raise FilterDivergenceError(f"non-finite filter state at t={meas.t}", state, meas.t)
    if check_band and design.variant == "passive":
        norms = np.linalg.norm(new.b_hat, axis=1)
        lo, hi = PASSIVE_NORM_BAND
        if np.any((norms < lo) | (norms > hi)):
            raise FilterDivergenceError(f"|b_hat| left [{lo}, {hi}] at t={meas.t}", state, meas.t)
    return new


def rk4(f: Callable[[FilterState], FilterState], state: FilterState, h: float) -> FilterState:
    k1 = f(state)
    k2 = f(state.axpy(h / 2, k1))
    k3 = f(state.axpy(h / 2, k2))
    k4 = f(state.axpy(h, k3))
    return FilterState(
        state.x + h / 6 * (k1.x + 2 * k2.x + 2 * k3.x + k4.x),
        state.b_hat + h / 6 * (k1.b_hat + 2 * k2.b_hat + 2 * k3.b_hat + k4.b_hat),
        state.eta_hat + h / 6 * (k1.eta_hat + 2 * k2.eta_hat + 2 * k3.eta_hat + k4.eta_hat),
    )


def estimation_errors(state: FilterState, b_true: ArrayLike, eta_true: ArrayLike) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """``(b - b_hat, eta - eta_hat)``."""
    return np.asarray(b_true, dtype=float) - state.b_hat, np.asarray(eta_true, dtype=float) - state.eta_hat


def lyapunov_v1(design: FilterDesign, state: FilterState, b_true: ArrayLike, eta_true: ArrayLike) -> float:
    """``sum z_i^T P_i z_i + eta~^T Gamma^-1 eta~`` for a direct filter."""
    b_tilde, eta_tilde = estimation_errors(state, b_true, eta_true)
    z = _direct_z(design.gammas, design.order, state.x, b_tilde)
    v = sum(float(z[i] @ design.P[i] @ z[i]) for i in range(design.m))
    return v + float(eta_tilde @ np.linalg.solve(design.bias_gain, eta_tilde))


def lyapunov_v2(design: FilterDesign, state: FilterState, b_true: ArrayLike, eta_true: ArrayLike) -> float:
    """``sum X_i^T P_i X_i + sum |b~_i|^2 + eta~^T Gamma^-1 eta~`` for a passive filter."""
    b_tilde, eta_tilde = estimation_errors(state, b_true, eta_true)
    v = float(np.sum(b_tilde * b_tilde))
    if design.order > 1:
        v += sum(float(state.x[i] @ design.P[i] @ state.x[i]) for i in range(design.m))
    return v + float(eta_tilde @ np.linalg.solve(design.bias_gain, eta_tilde))


def lyapunov_value(design: FilterDesign, state: FilterState, b_true: ArrayLike, eta_true: ArrayLike) -> float:
    if design.variant == "direct":
        return lyapunov_v1(design, state, b_true, eta_true)
    return lyapunov_v2(design, state, b_true, eta_true)


def state_columns(design: FilterDesign, prefix: str = "") -> list[str]:
    """CSV column names matching :func:`state_row`."""
    cols = []
    for i in range(design.m):
        cols += [f"{prefix}bhat{i + 1}_{a}" for a in "xyz"]
    cols += [f"{prefix}etahat_{a}" for a in "xyz"]
    for i in range(design.m):
        cols += [f"{prefix}x{i + 1}_{j}" for j in range(design.x_dim)]
    return cols


def state_row(state: FilterState) -> list[float]:
    return [*state.b_hat.ravel(), *state.eta_hat, *state.x.ravel()]

