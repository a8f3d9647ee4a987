"""Acceptance criteria 1-10, one test each, with one report line per criterion."""

from __future__ import annotations

import time
from functools import lru_cache

import numpy as np
import pytest
from conftest import report

from cfattitude.controller import (
    PAPER_GAINS,
    PAPER_REFS,
    SWEEP_GAINS,
    ClosedLoopState,
    closed_loop_derivative,
    converged_to_identity,
    equilibria_of,
    probe_saddles,
    random_states,
    rk4_closed_loop,
    sample_attraction_set,
    v3_value,
    w_matrix,
)
from cfattitude.filters import binomial_design, initial_state, make_filter_design
from cfattitude.harness import cmd_control, cmd_sweep, monotonicity_violations, parse_config_text, simulate_estimation, write_log_csv
from cfattitude.hurwitz import (
    Stability,
    binomial_gains,
    companion_matrix,
    in_hbar,
    kron_with_identity,
    routh_stability,
)
from cfattitude.lyapunov import residual
from cfattitude.simulator import RigidBodyState, rk4_step, simulate_estimation_continuous
from cfattitude.so3 import (
    attitude_angle_error,
    euler_to_quat,
    quat_inv,
    quat_mul,
    quat_to_rot,
    random_quaternion,
    random_rotation,
    rot_to_quat,
    skew,
)
from cfattitude.triad import DegenerateTriadError, triad

REFS = PAPER_REFS / np.linalg.norm(PAPER_REFS, axis=1, keepdims=True)
ETA = np.array([0.02, -0.01, 0.03])
ORDERS = (1, 2, 3)


def _max_abs(a) -> float:
    return float(np.max(np.abs(a)))


def test_criterion_01_algebraic_identities():
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    N = 10_000
    x, y = rng.standard_normal((2, N, 3))
    Sx, Sy = skew(x), skew(y)
    errs = {
        "anticommute": _max_abs(np.einsum("nij,nj->ni", Sx, y) + np.einsum("nij,nj->ni", Sy, x)),
        "bracket": _max_abs(skew(np.einsum("nij,nj->ni", Sx, y)) - (Sx @ Sy - Sy @ Sx)),
        "square": _max_abs(Sx @ Sx - (np.einsum("ni,nj->nij", x, x) - np.sum(x * x, axis=1)[:, None, None] * np.eye(3))),
    }
    R = np.array([random_rotation(rng) for _ in range(N)])
    errs["conjugation"] = _max_abs(skew(np.einsum("nij,nj->ni", R, x)) - R @ Sx @ np.transpose(R, (0, 2, 1)))
    p, q, r = (random_quaternion(rng, N) for _ in range(3))
    ident = np.tile([1.0, 0.0, 0.0, 0.0], (N, 1))
    errs["associativity"] = _max_abs(quat_mul(quat_mul(p, q), r) - quat_mul(p, quat_mul(q, r)))
    errs["identity"] = _max_abs(quat_mul(ident, q) - q) + _max_abs(quat_mul(q, ident) - q)
    errs["inverse"] = _max_abs(quat_mul(q, quat_inv(q)) - ident)
    errs["double_cover"] = _max_abs(quat_to_rot(q) - quat_to_rot(-q))
    errs["homomorphism"] = _max_abs(quat_to_rot(quat_mul(p, q)) - quat_to_rot(p) @ quat_to_rot(q))
    elapsed = time.perf_counter() - t0
    worst = max(errs.values())
    ok = worst < 1e-12 and elapsed < 5.0
    report(1, ok, f"max error {worst:.2e} over {N} instances x {len(errs)} identities, {elapsed:.2f} s")
    assert ok, errs


def test_criterion_02_hurwitz_suite():
    t0 = time.perf_counter()
    hbar_ok = all(in_hbar(binomial_gains(n, a)) for n in (1, 2, 3, 4) for a in (0.5, 1.0, 2.0))
    rng = np.random.default_rng(2)
    agree = disagree = indeterminate = 0
    for _ in range(1000):
        g = rng.uniform(-1.0, 4.0, int(rng.integers(1, 7)))
        status = routh_stability(g)
        if status is Stability.INDETERMINATE:
            indeterminate += 1
            continue
        eig = bool(np.max(np.linalg.eigvals(companion_matrix(g)).real) < 0)
        if (status is Stability.HURWITZ) == eig:
            agree += 1
        else:
            disagree += 1
    kron_err = 0.0
    for _ in range(200):
        n, k = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        E = rng.standard_normal((n, n))
        ev = np.linalg.eigvals(kron_with_identity(E, k))
        for lam in np.linalg.eigvals(E):
            # k closest spectrum entries must sit on lam
            kron_err = max(kron_err, float(np.sort(np.abs(ev - lam))[k - 1]))
    elapsed = time.perf_counter() - t0
    ok = hbar_ok and disagree == 0 and kron_err < 1e-9 and elapsed < 5.0
    report(
        2,
        ok,
        f"binomial in Hbar: {hbar_ok}; Routh/eigen agree {agree}, disagree {disagree}, "
        f"indeterminate {indeterminate}; Kronecker spectrum error {kron_err:.1e}; {elapsed:.2f} s",
    )
    assert ok


def _suite_designs():
    for variant in ("direct", "passive"):
        for n in ORDERS:
            yield binomial_design(variant, n, REFS, 1.0)
        yield binomial_design(variant, 2, REFS, 2.0)
    yield make_filter_design("passive", 3, [3.0, 3.0, 1.0], REFS, q_list=[np.diag([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])] * 2)


def test_criterion_03_lyapunov():
    t0 = time.perf_counter()
    worst, count, spd = 0.0, 0, True
    for d in _suite_designs():
        for A, P, Q in zip(d.A, d.P, d.Q):
            if P.size == 0:
                continue
            count += 1
            worst = max(worst, residual(A, P, Q) / np.linalg.norm(Q))
            spd &= bool(np.array_equal(P, P.T) and np.linalg.eigvalsh(P).min() > 0)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-9 and spd and count > 0 and elapsed < 1.0
    report(3, ok, f"{count} solves, max relative residual {worst:.1e}, all SPD: {spd}, {elapsed:.2f} s")
    assert ok


def test_criterion_04_triad():
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(1000):
        R = random_rotation(rng)
        r = rng.standard_normal((2, 3))
        r /= np.linalg.norm(r, axis=1, keepdims=True)
        est = triad(R.T @ r[0], R.T @ r[1], r[0], r[1])
        worst = max(worst, attitude_angle_error(rot_to_quat(est), rot_to_quat(R)))
    z = np.array([0.0, 0.0, 1.0])
    try:
        triad(z, -z, REFS[0], REFS[1])
        rejected = False
    except DegenerateTriadError:
        rejected = True
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and rejected and elapsed < 1.0
    report(4, ok, f"max angle error {worst:.1e} rad over 1000 rotations, collinear rejected: {rejected}, {elapsed:.2f} s")
    assert ok


def estimation_config(variant: str, order: int):
    # both vector channels at the 100 Hz filter rate; noise-free
    return parse_config_text(
        f"[filter]\nvariant = {variant}\norder = {order}\nalpha = 1\nbias_gain = 0.003\nintegrator = euler\n"
        "[sensors]\nmag_rate = 100\n[scenario]\nduration = 60\n"
    )


@lru_cache(maxsize=None)
def first_estimation_csv(tmp_dir: str, variant: str, order: int) -> tuple[bytes, float, float]:
    res = simulate_estimation(estimation_config(variant, order), variant)
    path = f"{tmp_dir}/c5_{variant}_{order}_a.csv"
    write_log_csv(path, res.log)
    with open(path, "rb") as fh:
        return fh.read(), res.metrics.final_eta_error, res.metrics.final_b_error


@pytest.fixture(scope="module")
def shared_dir(tmp_path_factory):
    return str(tmp_path_factory.mktemp("acceptance"))


def test_criterion_05_estimation_convergence(shared_dir):
    t0 = time.perf_counter()
    parts, ok = [], True
    for variant in ("direct", "passive"):
        for n in ORDERS:
            _, eta_err, b_err = first_estimation_csv(shared_dir, variant, n)
            good = eta_err < 1e-3 and b_err < 1e-3
            ok &= good
            parts.append(f"{variant} n={n}: |eta~|={eta_err:.2e} max|b~|={b_err:.2e}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed < 30.0
    report(5, ok, "; ".join(parts) + f"; {elapsed:.1f} s")
    assert ok


def test_criterion_06_lyapunov_monotonicity():
    t0 = time.perf_counter()
    q0 = euler_to_quat(-18.478, 41.192, 2.847)
    amp, w, ph = 0.5, np.array([0.7, 0.5, 0.3]), np.array([0.0, 1.0, 2.0])

    def omega(t):
        return amp * np.sin(w * t + ph)

    rng = np.random.default_rng(6)
    counts = []
    for variant in ("direct", "passive"):
        for n in ORDERS:
            design = binomial_design(variant, n, REFS, 1.0)
            # start away from truth so every term of V is active
            s0 = initial_state(design, REFS @ quat_to_rot(q0) + rng.uniform(-0.2, 0.2, (2, 3)))
            run = simulate_estimation_continuous(design, omega, q0, ETA, 2.0, dt=1e-3, state0=s0)
            counts.append((f"V{1 if variant == 'direct' else 2} {variant} n={n}", monotonicity_violations(run.V)))
    y0 = random_states(rng, 20, 2).pack()
    W = w_matrix(PAPER_GAINS, REFS)
    _, ys = rk4_closed_loop(PAPER_GAINS, REFS, y0, 5.0, 1e-3, record_every=1)
    v3 = v3_value(PAPER_GAINS, ClosedLoopState.unpack(ys, 2), W)
    counts.append(("V3 closed loop x20", sum(monotonicity_violations(v3[:, i]) for i in range(v3.shape[1]))))
    elapsed = time.perf_counter() - t0
    total = sum(c for _, c in counts)
    ok = total == 0 and elapsed < 20.0
    report(6, ok, ", ".join(f"{k}: {c}" for k, c in counts) + f" violations; {elapsed:.1f} s")
    assert ok


def test_criterion_07_controller_stability():
    t0 = time.perf_counter()
    W = w_matrix(PAPER_GAINS, REFS)
    eqs = equilibria_of(W, 2)
    resid = max(_max_abs(closed_loop_derivative(PAPER_GAINS, e, REFS).pack()) for e in eqs)
    probes = probe_saddles(PAPER_GAINS, REFS, 0.1, [(j, s) for j in range(3) for s in (1.0, -1.0)])
    escaped = sum(p.escaped for p in probes)
    sweep = cmd_sweep(parse_config_text("[sweep]\ncount = 100\nmodel = closed_loop\nduration = 30\n"), seed=0)
    n_conv = sweep.summary["converged"]
    Ws = w_matrix(SWEEP_GAINS, REFS)
    ics = sample_attraction_set(np.random.default_rng(7), SWEEP_GAINS, Ws, 20)
    _, ys = rk4_closed_loop(SWEEP_GAINS, REFS, ics.pack(), 30.0, 1e-3, record_every=30000)
    final = ClosedLoopState.unpack(ys[-1], 2)
    plus = int(np.sum(converged_to_identity(final) & (final.q_bar[:, 0] > 0)))
    elapsed = time.perf_counter() - t0
    ok = len(eqs) == 8 and resid < 1e-9 and escaped == 6 and n_conv >= 99 and plus == 20 and elapsed < 120.0
    report(
        7,
        ok,
        f"8 equilibria residual {resid:.1e}; {escaped}/6 saddle probes escaped; sweep {n_conv}/100 converged; "
        f"attraction set {plus}/20 to identity (+); {elapsed:.1f} s",
    )
    assert ok


def control_config():
    return parse_config_text("[scenario]\nduration = 60\ninitial_euler_deg = -18.478, 41.192, 2.847\n[controller]\nlaw = stabilization\nrate = 100\n")


@lru_cache(maxsize=None)
def first_control_csv(tmp_dir: str):
    t0 = time.perf_counter()
    res = cmd_control(control_config())
    elapsed = time.perf_counter() - t0
    path = f"{tmp_dir}/c8_a.csv"
    write_log_csv(path, res.log)
    with open(path, "rb") as fh:
        return fh.read(), res, elapsed


def test_criterion_08_bench_regression(shared_dir):
    _, res, elapsed = first_control_csv(shared_dir)
    e = res.metrics.extra
    roll, pitch = res.log.column("roll_deg"), res.log.column("pitch_deg")
    settled = res.metrics.settling_time is not None and abs(roll[-1]) < 1.0 and abs(pitch[-1]) < 1.0
    ok = settled and e["final_bhat_deviation"] < 0.01 and elapsed < 10.0
    report(
        8,
        ok,
        f"roll/pitch below 1 deg from t={res.metrics.settling_time} s (final {e['final_roll_deg']:.3f}, "
        f"{e['final_pitch_deg']:.3f} deg); max |bhat - b_d| {e['final_bhat_deviation']:.1e}; {elapsed:.1f} s",
    )
    assert ok


def test_criterion_09_conservation():
    t0 = time.perf_counter()
    J = np.diag([1.0, 2.0, 3.0])
    J_inv = np.linalg.inv(J)
    rng = np.random.default_rng(9)
    state = RigidBodyState.create(random_quaternion(rng), rng.uniform(-1, 1, 3))
    h0 = quat_to_rot(state.q) @ J @ state.omega
    e0 = 0.5 * state.omega @ J @ state.omega
    for _ in range(10_000):
        state = rk4_step(J, state, np.zeros(3), 1e-3, J_inv)
    dh = np.linalg.norm(quat_to_rot(state.q) @ J @ state.omega - h0) / np.linalg.norm(h0)
    de = abs(0.5 * state.omega @ J @ state.omega - e0) / e0
    elapsed = time.perf_counter() - t0
    ok = dh < 1e-6 and de < 1e-6 and elapsed < 5.0
    report(9, ok, f"relative momentum drift {dh:.1e}, energy drift {de:.1e} over 10 s; {elapsed:.2f} s")
    assert ok


def test_criterion_10_determinism(shared_dir):
    same = []
    for variant in ("direct", "passive"):
        first, _, _ = first_estimation_csv(shared_dir, variant, 1)
        res = simulate_estimation(estimation_config(variant, 1), variant)
        path = f"{shared_dir}/c5_{variant}_b.csv"
        write_log_csv(path, res.log)
        with open(path, "rb") as fh:
            same.append(fh.read() == first)
    first, _, _ = first_control_csv(shared_dir)
    path = f"{shared_dir}/c8_b.csv"
    write_log_csv(path, cmd_control(control_config()).log)
    with open(path, "rb") as fh:
        same.append(fh.read() == first)
    ok = all(same)
    report(10, ok, f"byte-identical reruns: estimation direct {same[0]}, passive {same[1]}, control {same[2]}")
    assert ok
