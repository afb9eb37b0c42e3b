"""Discrete-time solver tests: hold discretization, backward recursion,
scalar DARE and the small-step asymptotics."""

from __future__ import annotations

import numpy as np
import pytest

from dtn_lqr import (
    CostWeights,
    ModelSpec,
    build_R,
    build_system,
    dt_rollout,
    dt_scalar_policy,
    exact_discretize,
    finite_horizon_policy,
    first_order_discretize,
    load_scenario,
    rollout,
    scalar_dare,
    scaled_problem,
    small_delta_limits,
    solve_ct,
)


def _scalar_model():
    m = ModelSpec(lambda_s=[1.0], lambda_d=[2.0], N=[10.0])
    cw = CostWeights(c1=0.5, c3=1.0, c4=0.5, u_bar=[-0.25])
    return m, cw


def test_exact_hold_blocks():
    m, cw = _scalar_model()
    ds = exact_discretize(m, cw, 0.5)
    g = np.exp(-1.0)
    assert np.allclose(ds.F, [[g, 0.0], [(1.0 - g) / 2.0, 1.0]], atol=1e-14)
    top = (1.0 - g) / 2.0
    bottom = (0.5 - top) / 2.0
    assert np.allclose(ds.B_tilde, [[top], [bottom]], atol=1e-14)
    drive = 1.0 * 10.0
    assert np.allclose(ds.n_tilde, [top * drive, bottom * drive], atol=1e-12)
    assert np.allclose(ds.n_vec,
                       ds.n_tilde + ds.B_tilde @ cw.u_bar, atol=1e-14)


def test_first_order_hold_blocks():
    m, cw = _scalar_model()
    ds = first_order_discretize(m, cw, 0.01)
    assert np.allclose(ds.F, [[0.98, 0.0], [0.01, 1.0]], atol=1e-14)
    assert np.allclose(ds.B_tilde, [[0.01], [0.0]], atol=1e-14)


def test_exact_hold_matches_dense_integration():
    rng = np.random.default_rng(23)
    m = ModelSpec(lambda_s=[0.6, 1.1], lambda_d=[0.9, 1.7], N=[8.0, 12.0])
    cw = CostWeights(c1=1.0, c3=1.0, c4=0.5, u_bar=[-0.1, -0.3])
    sys = build_system(m, cw, np.eye(2))
    Delta = 0.37
    ds = exact_discretize(m, cw, Delta)
    for _ in range(4):
        z = rng.normal(size=4)
        w = rng.normal(size=2)
        # dense RK4 with constant w over one hold interval
        zi = z.copy()
        steps = 400
        h = Delta / steps
        for _ in range(steps):
            f = lambda zz: sys.A @ zz + sys.B @ w + sys.c
            k1 = f(zi)
            k2 = f(zi + 0.5 * h * k1)
            k3 = f(zi + 0.5 * h * k2)
            k4 = f(zi + h * k3)
            zi = zi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        hold = ds.F @ z + ds.B_tilde @ w + ds.n_vec
        assert np.max(np.abs(hold - zi)) < 1e-10


def test_policy_terminal_weight_and_default_rho():
    m, cw = _scalar_model()
    ds = exact_discretize(m, cw, 0.1)
    Qf = np.array([[0.0, 0.0], [0.0, 2.0]])
    pol = finite_horizon_policy(ds, None, Qf, 8)
    assert pol.control_weight == ds.Delta
    assert np.allclose(pol.S[8], Qf)
    assert pol.gain.shape == (8, 1, 2)
    assert not pol.indefinite


def test_one_step_recursion_manual():
    m, cw = _scalar_model()
    ds = exact_discretize(m, cw, 0.2)
    rng = np.random.default_rng(4)
    G = rng.normal(size=(2, 2))
    Qf = G @ G.T + 0.5 * np.eye(2)
    rho = 0.7
    pol = finite_horizon_policy(ds, None, Qf, 1, control_weight=rho)
    Bt, F, n = ds.B_tilde, ds.F, ds.n_vec
    M = np.linalg.solve(rho * np.eye(1) + Bt.T @ Qf @ Bt, Bt.T)
    gain = M @ Qf @ F
    offset = M @ (Qf @ n)
    assert np.allclose(pol.gain[0], gain, atol=1e-12)
    assert np.allclose(pol.offset[0], offset, atol=1e-12)
    shrink = np.eye(2) - Bt @ M @ Qf
    S0 = F.T @ Qf @ shrink @ F
    assert np.allclose(pol.S[0], 0.5 * (S0 + S0.T), atol=1e-12)


def test_rollout_cost_beats_perturbed_sequences():
    sc = load_scenario("fig1_uniform")
    m, cw, tau = scaled_problem(sc)
    R = build_R(cw, m)
    K = m.K
    Qf = np.zeros((2 * K, 2 * K))
    Qf[K:, K:] = R
    L = 64
    ds = exact_discretize(m, cw, tau / L)
    pol = finite_horizon_policy(ds, None, Qf, L)
    traj = dt_rollout(ds, pol, None, m, cw)
    rng = np.random.default_rng(42)
    for _ in range(5):
        noise = 0.05 * rng.normal(size=(L, K))
        z = np.zeros(2 * K)
        running = 0.0
        for l in range(L):
            w = -(pol.gain[l] @ z) - pol.offset[l] + noise[l]
            running += float(w @ w)
            z = ds.F @ z + ds.B_tilde @ w + ds.n_vec
        perturbed = float(z @ Qf @ z) + pol.control_weight * running
        assert perturbed > traj.cost


def test_dt_tracks_ct_solution(fig2_005_run):
    sc, m, cw, tau, sol, ct_traj = fig2_005_run
    R = build_R(cw, m)
    Qf = np.zeros((6, 6))
    Qf[3:, 3:] = R
    L = 1024
    ds = exact_discretize(m, cw, tau / L)
    pol = finite_horizon_policy(ds, None, Qf, L)
    traj = dt_rollout(ds, pol, None, m, cw)
    assert pol.indefinite  # this terminal weight is not PSD
    assert abs(traj.cost - ct_traj.cost) / abs(ct_traj.cost) < 0.01
    Xi = np.stack([np.interp(traj.t, ct_traj.t, ct_traj.X[:, i])
                   for i in range(3)], axis=1)
    assert np.max(np.abs(traj.X - Xi)) < 0.01


def test_euler_hold_converges_slower_but_converges(fig2_005_run):
    sc, m, cw, tau, sol, ct_traj = fig2_005_run
    R = build_R(cw, m)
    Qf = np.zeros((6, 6))
    Qf[3:, 3:] = R
    dists = []
    for L in (256, 1024):
        ds = first_order_discretize(m, cw, tau / L)
        pol = finite_horizon_policy(ds, None, Qf, L)
        traj = dt_rollout(ds, pol, None, m, cw)
        Xi = np.stack([np.interp(traj.t, ct_traj.t, ct_traj.X[:, i])
                       for i in range(3)], axis=1)
        dists.append(float(np.max(np.abs(traj.X - Xi))))
    assert dists[1] < dists[0]


def test_control_weight_must_be_positive():
    m, cw = _scalar_model()
    ds = exact_discretize(m, cw, 0.1)
    with pytest.raises(ValueError):
        finite_horizon_policy(ds, None, np.zeros((2, 2)), 4,
                              control_weight=0.0)
    with pytest.raises(ValueError):
        finite_horizon_policy(ds, None, np.zeros((2, 2)), 4,
                              control_weight=-1.0)


def test_scalar_dare_root():
    rng = np.random.default_rng(12)
    for _ in range(30):
        g = rng.uniform(0.05, 0.95)
        b = rng.uniform(0.05, 3.0)
        q = rng.uniform(0.0, 30.0)
        S = scalar_dare(g, b, q)
        assert S >= 0
        # fixed point of the one-dimensional Riccati map
        assert abs(q + g * g * S / (1.0 + b * b * S) - S) < 1e-10
    assert scalar_dare(0.5, 1.0, 0.0) == 0.0
    with pytest.raises(ValueError):
        scalar_dare(1.5, 1.0, 4.0)
    with pytest.raises(ValueError):
        scalar_dare(0.5, 0.0, 4.0)


def test_dt_scalar_policy_reference_values():
    pol = dt_scalar_policy(lam=3.0, mu=3.0, N=10.0, u_bar=-1.0, q=16.0,
                           Delta=0.01)
    assert np.isclose(pol.S, 208.11498227992806, rtol=1e-12)
    assert abs(pol.x_inf - 9.88) < 1e-9
    # S Delta approaches the continuous gain p = 2 from above
    vals = [dt_scalar_policy(3.0, 3.0, 10.0, -1.0, 16.0, d).S * d
            for d in (0.1, 0.01, 0.001, 1e-4)]
    assert np.allclose(vals, [2.913275, 2.081150, 2.008011, 2.000800],
                       atol=5e-6)
    assert abs(vals[-1] - 2.0) <= 0.01
    assert all(np.diff(vals) < 0)


def test_dt_scalar_fixed_point_iteration():
    pol = dt_scalar_policy(3.0, 3.0, 10.0, -1.0, 16.0, 0.05)
    z = -pol.N
    for _ in range(2000):
        w = -pol.feedback_gain * z - pol.feedforward * pol.n
        z = pol.g * z + pol.b * w + pol.n
    assert abs(z - pol.z_inf) < 1e-12
    assert abs((pol.z_inf + pol.N) - pol.x_inf) < 1e-12
    u = pol.u_bar - pol.feedback_gain * pol.z_inf - pol.feedforward * pol.n
    assert abs(u - pol.u_inf) < 1e-12


def test_small_delta_limits_expressions():
    lim = small_delta_limits(lam=3.0, mu=3.0, N=10.0, u_bar=-1.0, q=16.0,
                             Delta=1e-6)
    assert lim.p == 2.0 and lim.sigma == 5.0
    assert lim.u_gain == lim.p
    assert np.isclose(lim.u_ubar_coeff, 3.0 / 5.0, rtol=1e-14)
    expect_nc = (1.0 - 3.0 / 5.0) * (3.0 - 3.0) + 3.0 - 5.0
    assert np.isclose(lim.u_N_coeff, expect_nc, rtol=1e-14)
    # display form drifts to N as the step vanishes; the recursion's own
    # limit keeps the u_bar correction and matches the continuous x_inf
    assert abs(lim.x_inf_display - 10.0) < 1e-5
    assert np.isclose(lim.x_inf_limit, 9.88, atol=1e-12)
    pol = dt_scalar_policy(3.0, 3.0, 10.0, -1.0, 16.0, 1e-5)
    assert abs(pol.x_inf - lim.x_inf_limit) < 1e-6


def test_dt_rollout_records_trajectory(fig2_005_run):
    sc, m, cw, tau, sol, ct_traj = fig2_005_run
    R = build_R(cw, m)
    Qf = np.zeros((6, 6))
    Qf[3:, 3:] = R
    L = 256
    ds = exact_discretize(m, cw, tau / L)
    pol = finite_horizon_policy(ds, None, Qf, L)
    traj = dt_rollout(ds, pol, None, m, cw)
    assert traj.t.shape == (L + 1,)
    assert traj.X.shape == (L + 1, 3)
    assert np.allclose(traj.t[1] - traj.t[0], ds.Delta)
    # terminal control step carries no feedback, only the reference
    assert np.allclose(traj.u[-1], cw.u_bar)
    assert np.all(np.diff(traj.D) >= -1e-12)
