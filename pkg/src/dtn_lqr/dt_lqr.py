"""Discrete-time LQ counterparts: sampled dynamics and policies.

Sampling the augmented system at step Delta gives

    Z_{l+1} = F Z_l + B_tilde w_l + n,   w_l = u_l - u_bar,

with the exact zero-order-hold matrices (Y := exp(-Lambda_out Delta))

    F = [[Y, 0], [Lo^{-1}(I-Y), I]],
    B_tilde = [Lo^{-1}(I-Y); Lo^{-1}(Delta I - Lo^{-1}(I-Y))],
    n_tilde = same integral map applied to (Lambda_in N, 0),
    n = n_tilde + B_tilde u_bar.

The finite-horizon cost is Z_{L+1}^T Q_f Z_{L+1} + rho sum_l (w_l^T w_l +
Z_l^T Q Z_l): the per-step control weight rho is explicit because the two
natural choices differ materially. rho = 1 charges each step equally, which
per unit time diverges as Delta shrinks, so the optimum degenerates to the
uncontrolled flow as Delta -> 0. rho = Delta is the Riemann weight whose
sum approximates the continuous integral penalty; with it the discrete
optimum converges to the continuous LQ solution at first order, and it is
the default. The infinite-horizon scalar problem weights state and control
identically per step, so its policy limit is Delta-independent either way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (ControlledTrajectory, CostWeights, ModelSpec,
                    check_constraints, delivery_lower_bound)

__all__ = [
    "DiscreteSystem",
    "DiscretePolicy",
    "DtScalarPolicy",
    "SmallDeltaLimits",
    "exact_discretize",
    "first_order_discretize",
    "finite_horizon_policy",
    "dt_rollout",
    "scalar_dare",
    "dt_scalar_policy",
    "small_delta_limits",
]


@dataclass(frozen=True)
class DiscreteSystem:
    """Sampled augmented dynamics Z_{l+1} = F Z_l + B_tilde w_l + n_vec."""

    Delta: float
    F: np.ndarray
    B_tilde: np.ndarray
    n_vec: np.ndarray
    n_tilde: np.ndarray

    @property
    def K(self) -> int:
        return self.B_tilde.shape[1]


def _hold_blocks(m: ModelSpec, Delta: float):
    lam = m.lambda_d
    k = m.K
    Y = np.exp(-lam * Delta)
    top = -np.expm1(-lam * Delta) / lam          # Lo^{-1}(I - Y), stable
    bottom = (Delta - top) / lam                  # Lo^{-1}(Delta I - Lo^{-1}(I-Y))
    F = np.zeros((2 * k, 2 * k))
    F[:k, :k] = np.diag(Y)
    F[k:, :k] = np.diag(top)
    F[k:, k:] = np.eye(k)
    B_tilde = np.zeros((2 * k, k))
    B_tilde[:k, :] = np.diag(top)
    B_tilde[k:, :] = np.diag(bottom)
    return F, B_tilde, top, bottom


def exact_discretize(m: ModelSpec, cw: CostWeights,
                     Delta: float) -> DiscreteSystem:
    """Zero-order-hold discretization; exact for piecewise-constant w."""
    if Delta < 0:
        raise ValueError("Delta must be nonnegative")
    k = m.K
    F, B_tilde, top, bottom = _hold_blocks(m, Delta)
    drive = m.lambda_s * m.N
    n_tilde = np.concatenate([top * drive, bottom * drive])
    n_vec = n_tilde + B_tilde @ cw.u_bar
    return DiscreteSystem(Delta=float(Delta), F=F, B_tilde=B_tilde,
                          n_vec=n_vec, n_tilde=n_tilde)


def first_order_discretize(m: ModelSpec, cw: CostWeights,
                           Delta: float) -> DiscreteSystem:
    """Euler discretization F = I + A Delta, B_tilde = B Delta, n = c Delta."""
    if Delta < 0:
        raise ValueError("Delta must be nonnegative")
    from .model import build_dynamics

    A, B, c = build_dynamics(m, cw)
    k = m.K
    F = np.eye(2 * k) + A * Delta
    B_tilde = B * Delta
    c_tilde = np.zeros(2 * k)
    c_tilde[:k] = m.lambda_s * m.N
    n_tilde = c_tilde * Delta
    n_vec = n_tilde + B_tilde @ cw.u_bar
    return DiscreteSystem(Delta=float(Delta), F=F, B_tilde=B_tilde,
                          n_vec=n_vec, n_tilde=n_tilde)


@dataclass
class DiscretePolicy:
    """Backward-recursion output; w_l = -gain[l] Z_l - offset[l].

    S[l], s[l] for l = 0..L (S[L] = Q_f, s[L] = 0); gain/offset for
    l = 0..L-1. indefinite reports whether any S_l left the PSD cone.
    """

    S: np.ndarray
    s: np.ndarray
    gain: np.ndarray
    offset: np.ndarray
    L: int
    control_weight: float
    indefinite: bool = False
    Q: np.ndarray | None = None


def finite_horizon_policy(ds: DiscreteSystem, Q: np.ndarray | None,
                          Q_f: np.ndarray, L: int,
                          control_weight: float | None = None) -> DiscretePolicy:
    """Backward LQ recursion over L steps with terminal weight Q_f.

    With rho = control_weight (None -> ds.Delta; see module docstring):

        P_l = [rho I + B~^T S_{l+1} B~]^{-1} B~^T
        S_l = rho Q + F^T S_{l+1} [I - B~ P_l S_{l+1}] F
        s_l = F^T [I - B~ P_l S_{l+1}]^T [s_{l+1} + S_{l+1} n]
        w_l = -P_l S_{l+1} F Z_l - P_l (s_{l+1} + S_{l+1} n)

    Each S_l is symmetrized; an S_l that leaves the PSD cone is reported
    via the indefinite flag (indefinite terminal weights are allowed).
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    rho = ds.Delta if control_weight is None else float(control_weight)
    if rho <= 0:
        raise ValueError("control_weight must be positive")
    n2 = ds.F.shape[0]
    k = ds.B_tilde.shape[1]
    Qm = np.zeros((n2, n2)) if Q is None else np.asarray(Q, dtype=float)
    S = np.zeros((L + 1, n2, n2))
    s = np.zeros((L + 1, n2))
    gain = np.zeros((L, k, n2))
    offset = np.zeros((L, k))
    S[L] = 0.5 * (Q_f + Q_f.T)
    indefinite = bool(np.linalg.eigvalsh(S[L])[0] < -1e-12)
    F, Bt, n = ds.F, ds.B_tilde, ds.n_vec
    for ell in range(L - 1, -1, -1):
        Snext = S[ell + 1]
        M = rho * np.eye(k) + Bt.T @ Snext @ Bt
        try:
            P = np.linalg.solve(M, Bt.T)
        except np.linalg.LinAlgError as exc:
            raise RuntimeError(
                f"singular control-weight normal matrix at step {ell} "
                "(S left the PSD cone)") from exc
        shrink = np.eye(n2) - Bt @ P @ Snext
        Snew = rho * Qm + F.T @ Snext @ shrink @ F
        S[ell] = 0.5 * (Snew + Snew.T)
        s[ell] = F.T @ shrink.T @ (s[ell + 1] + Snext @ n)
        gain[ell] = P @ Snext @ F
        offset[ell] = P @ (s[ell + 1] + Snext @ n)
        if not indefinite and np.linalg.eigvalsh(S[ell])[0] < -1e-12:
            indefinite = True
    return DiscretePolicy(S=S, s=s, gain=gain, offset=offset, L=L,
                          control_weight=rho, indefinite=indefinite, Q=Qm)


def dt_rollout(ds: DiscreteSystem, policy: DiscretePolicy,
               Z0: np.ndarray | None, m: ModelSpec,
               cw: CostWeights) -> ControlledTrajectory:
    """Forward recursion under the policy; grid t_l = l Delta.

    cost = Z_L^T Q_f Z_L + rho sum_l (w_l^T w_l + Z_l^T Q Z_l), matching
    the recursion's weighting.
    """
    L = policy.L
    n2 = ds.F.shape[0]
    k = ds.B_tilde.shape[1]
    z = np.zeros(n2) if Z0 is None else np.asarray(Z0, dtype=float).copy()
    Z = np.zeros((L + 1, n2))
    W = np.zeros((L + 1, k))
    Z[0] = z
    running = 0.0
    for ell in range(L):
        w = -policy.gain[ell] @ z - policy.offset[ell]
        W[ell] = w
        running += float(w @ w + z @ policy.Q @ z)
        z = ds.F @ z + ds.B_tilde @ w + ds.n_vec
        Z[ell + 1] = z
    # the horizon only applies w_0..w_{L-1}; the terminal row stays zero
    t = np.arange(L + 1) * ds.Delta
    X = Z[:, :k]
    Xhat = Z[:, k:]
    u = W + cw.u_bar[None, :]
    D = delivery_lower_bound(np.maximum(Xhat, 0.0), m.lambda_d)
    traj = ControlledTrajectory(t=t, X=X, Xhat=Xhat, u=u, w=W, D=D)
    traj.violations = check_constraints(traj, m)
    Qf = policy.S[L]
    traj.cost = float(z @ Qf @ z + policy.control_weight * running)
    return traj


def scalar_dare(g: float, b: float, q: float) -> float:
    """Closed-form stabilizing root of the scalar DARE.

    S = (1/2b^2)[b^2 q + g^2 - 1 + sqrt((b^2 q + g^2 - 1)^2 + 4 q b^2)],
    the fixed point of S = q + g^2 S / (1 + S b^2).
    """
    if b <= 0:
        raise ValueError("b must be positive")
    if q < 0:
        raise ValueError("q must be nonnegative")
    if not 0 < g < 1:
        raise ValueError("g must lie in (0, 1)")
    a = b * b * q + g * g - 1.0
    return (a + np.sqrt(a * a + 4.0 * q * b * b)) / (2.0 * b * b)


@dataclass(frozen=True)
class DtScalarPolicy:
    """Scalar infinite-horizon discrete policy for one class."""

    lam: float
    mu: float
    N: float
    u_bar: float
    q: float
    Delta: float
    g: float
    b: float
    n: float
    S: float
    feedback_gain: float   # b S g / (1 + S b^2), on z = x - N
    feedforward: float     # b S / (1 - g + b^2 S), on n
    z_inf: float
    x_inf: float
    u_inf: float


def dt_scalar_policy(lam: float, mu: float, N: float, u_bar: float,
                     q: float, Delta: float) -> DtScalarPolicy:
    """Stationary policy w = -gain z - feedforward n and its steady state.

    g = e^{-lam Delta}, b = (1 - g)/lam, n = b[(mu - lam) N + u_bar];
    z follows z_{l+1} = (g/(1+S b^2)) z_l + ((1-g)/(1-g+S b^2)) n with
    steady state z_inf = (1-g)(1+S b^2) n / (1-g+S b^2)^2, x_inf = z_inf + N.
    """
    if lam <= 0 or Delta <= 0:
        raise ValueError("lam and Delta must be positive")
    g = float(np.exp(-lam * Delta))
    b = float(-np.expm1(-lam * Delta) / lam)
    n = b * ((mu - lam) * N + u_bar)
    S = scalar_dare(g, b, q)
    gain = b * S * g / (1.0 + S * b * b)
    ff = b * S / (1.0 - g + b * b * S)
    z_inf = (1.0 - g) * (1.0 + S * b * b) * n / (1.0 - g + S * b * b) ** 2
    u_inf = u_bar - gain * z_inf - ff * n
    return DtScalarPolicy(lam=lam, mu=mu, N=N, u_bar=u_bar, q=q,
                          Delta=Delta, g=g, b=b, n=n, S=S,
                          feedback_gain=gain, feedforward=ff,
                          z_inf=z_inf, x_inf=z_inf + N, u_inf=u_inf)


@dataclass(frozen=True)
class SmallDeltaLimits:
    """Small-step asymptotics of the scalar discrete policy.

    u_gain/u_ubar_coeff/u_N_coeff are the displayed limiting-control
    coefficients u = -u_gain x + u_ubar_coeff u_bar - u_N_coeff N.
    x_inf_display is the displayed O(Delta) steady-state expansion, whose
    Delta -> 0 value is N. x_inf_limit is the actual Delta -> 0 limit of
    dt_scalar_policy's steady state, N + lam G / sigma^2 with
    G = (mu - lam) N + u_bar, which coincides with the continuous-time
    steady state; the two agree only when G = 0.
    """

    p: float
    sigma: float
    u_gain: float
    u_ubar_coeff: float
    u_N_coeff: float
    x_inf_display: float
    x_inf_limit: float


def small_delta_limits(lam: float, mu: float, N: float, u_bar: float,
                       q: float, Delta: float) -> SmallDeltaLimits:
    """Evaluate the displayed small-Delta expressions at a given Delta."""
    sigma = float(np.hypot(lam, np.sqrt(q)))
    p = -lam + sigma
    u_gain = p
    u_ubar_coeff = lam / sigma
    u_N_coeff = (1.0 - lam / sigma) * (mu - lam) + lam - sigma
    x_inf_display = (N + (lam * (mu - lam) * N / sigma) * Delta
                     + (lam / sigma) * u_bar * Delta)
    G = (mu - lam) * N + u_bar
    x_inf_limit = N + lam * G / sigma ** 2
    return SmallDeltaLimits(p=p, sigma=sigma, u_gain=u_gain,
                            u_ubar_coeff=u_ubar_coeff, u_N_coeff=u_N_coeff,
                            x_inf_display=x_inf_display,
                            x_inf_limit=x_inf_limit)
