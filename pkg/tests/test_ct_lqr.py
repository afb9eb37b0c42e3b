"""Continuous-time finite-horizon solver tests.

Covers the backward Riccati/offset integration, the closed-form P, the
feedback rollout, the min-J identity and conjugate-point detection.
"""

from __future__ import annotations

import numpy as np
import pytest

from dtn_lqr import (
    BlowUpError,
    CostWeights,
    ModelSpec,
    build_system,
    closed_form_P,
    closed_form_P_hamiltonian,
    load_scenario,
    min_j_identity,
    rollout,
    rollout_open_loop,
    scaled_problem,
    solve_ct,
    solve_riccati_backward,
)


def _random_problem(seed, K=3):
    rng = np.random.default_rng(seed)
    m = ModelSpec(lambda_s=rng.uniform(0.2, 2.0, K),
                  lambda_d=rng.uniform(0.2, 2.0, K),
                  N=rng.uniform(5.0, 50.0, K))
    G = rng.normal(size=(K, K))
    R = G @ G.T + 0.1 * np.eye(K)
    cw = CostWeights(c1=1.0, c3=1.0, c4=1.0, u_bar=[0.0] * K)
    return m, cw, R


def test_terminal_condition_and_symmetry():
    m, cw, R = _random_problem(5)
    sys = build_system(m, cw, R)
    t, P, blow = solve_riccati_backward(sys, 2.0, n_steps=512)
    assert blow is None
    K = m.K
    assert np.allclose(P[-1, K:, K:], R)
    assert np.allclose(P[-1, :K, :], 0.0)
    for j in (0, 128, 511):
        assert np.allclose(P[j], P[j].T, atol=1e-10)


def test_closed_form_matches_ode():
    for seed in (0, 1):
        m, cw, R = _random_problem(seed)
        sys = build_system(m, cw, R)
        tau = 2.0
        t, P, blow = solve_riccati_backward(sys, tau, n_steps=2048)
        assert blow is None
        worst = 0.0
        for j in np.linspace(0, 2048, 9).astype(int):
            Pc = closed_form_P(m, R, float(t[j]), tau)
            rel = np.max(np.abs(Pc - P[j])) / max(1.0, np.max(np.abs(P[j])))
            worst = max(worst, rel)
        assert worst < 1e-6


def test_hamiltonian_route_agrees():
    m, cw, R = _random_problem(2)
    tau = 1.5
    for t in (0.0, 0.4, 1.5):
        Pa = closed_form_P(m, R, t, tau)
        Pb = closed_form_P_hamiltonian(m, R, t, tau)
        assert np.allclose(Pa, Pb, atol=1e-9)


def test_riccati_ode_residual():
    # dP/dt = P B B^T P - A^T P - P A, checked by central differences
    m, cw, R = _random_problem(7, K=2)
    sys = build_system(m, cw, R)
    tau = 1.0
    t, P, _ = solve_riccati_backward(sys, tau, n_steps=4096)
    h = t[1] - t[0]
    for j in (100, 2000, 3995):
        dP = (P[j + 1] - P[j - 1]) / (2.0 * h)
        rhs = P[j] @ sys.B @ sys.B.T @ P[j] - sys.A.T @ P[j] - P[j] @ sys.A
        assert np.max(np.abs(dP - rhs)) < 1e-5


def test_rollout_endpoints(fig2_005_run):
    sc, m, cw, tau, sol, traj = fig2_005_run
    assert np.allclose(traj.X[0], 0.0) and np.allclose(traj.Xhat[0], 0.0)
    # terminal feedback vanishes, so u(tau) lands exactly on u_bar
    assert np.max(np.abs(traj.u[-1] - cw.u_bar)) < 1e-10
    assert traj.D[-1] >= 0.99
    assert traj.t[0] == 0.0 and np.isclose(traj.t[-1], tau)


def test_min_j_identity_on_rollout(fig2_005_run):
    sc, m, cw, tau, sol, traj = fig2_005_run
    predicted = min_j_identity(sol)
    assert abs(traj.cost - predicted) / abs(traj.cost) < 1e-4


def test_rollout_matches_open_loop_replay():
    sc = load_scenario("fig1_uniform")
    m, cw, tau = scaled_problem(sc)
    sol = solve_ct(m, cw, tau, n_steps=1024)
    traj = rollout(m, cw, sol)

    def u_replay(t, X):
        return np.array([np.interp(t, traj.t, traj.u[:, i])
                         for i in range(m.K)])

    replay = rollout_open_loop(m, cw, u_replay, tau, n_steps=1024)
    assert abs(replay.cost - traj.cost) / abs(traj.cost) < 1e-4
    assert np.max(np.abs(replay.X - traj.X)) < 1e-4


def test_feedback_beats_perturbed_schedules():
    sc = load_scenario("fig1_uniform")
    m, cw, tau = scaled_problem(sc)
    sol = solve_ct(m, cw, tau, n_steps=1024)
    traj = rollout(m, cw, sol)
    rng = np.random.default_rng(42)
    knots = np.linspace(0.0, tau, 8)
    for _ in range(5):
        pert = rng.normal(size=(8, m.K))

        def u_fn(t, X, pert=pert):
            base = np.array([np.interp(t, traj.t, traj.u[:, i])
                             for i in range(m.K)])
            bump = np.array([np.interp(t, knots, pert[:, i])
                             for i in range(m.K)])
            return base + 0.05 * bump

        perturbed = rollout_open_loop(m, cw, u_fn, tau, n_steps=1024)
        assert perturbed.cost > traj.cost


def test_offset_terminal_zero(fig2_005_run):
    sc, m, cw, tau, sol, traj = fig2_005_run
    assert np.allclose(sol.k[-1], 0.0)
    assert np.isfinite(sol.m0)


def test_blow_up_detected_past_conjugate_point():
    # same contact and weight numbers without the hour normalization;
    # the indefinite terminal weight then hits a conjugate point inside
    # the horizon and the backward sweep must report the escape
    lam = 2.7875e-4
    m = ModelSpec(lambda_s=[lam] * 3, lambda_d=[lam] * 3,
                  N=[51.0, 50.0, 50.0])
    cw = CostWeights(c1=1.0 / lam ** 2, c3=1.0, c4=0.005, u_bar=[0.0] * 3)
    sol = solve_ct(m, cw, 3600.0)
    assert sol.blow_up is not None
    assert 3590.0 < sol.blow_up.time < 3600.0
    assert sol.blow_up.norm >= 1e12
    with pytest.raises(BlowUpError):
        rollout(m, cw, sol)
    with pytest.raises(BlowUpError):
        min_j_identity(sol)


def test_solution_grid_shapes(fig2_005_run):
    sc, m, cw, tau, sol, traj = fig2_005_run
    n = sol.t_grid.size
    assert sol.P.shape == (n, 2 * m.K, 2 * m.K)
    assert sol.k.shape == (n, 2 * m.K)
    assert traj.X.shape == (n, m.K) and traj.u.shape == (n, m.K)
    assert traj.D.shape == (n,)
