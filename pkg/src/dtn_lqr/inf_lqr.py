"""Infinite-horizon scalar controllers for slowly evolving files.

Per class i the problem decouples into a scalar affine-quadratic regulator

    dx/dt = -lambda x + u + mu N,
    J = int_0^inf [ q (x - N)^2 + (u - u_bar)^2 ] dt,

whose stabilizing solution is the affine law u(x) = -p x + C with gain
p = -lambda + sigma, sigma = sqrt(lambda^2 + q), and offset
k_off = p (mu N - lambda N + u_bar) / sigma. The closed loop decays at rate
lambda + p = sigma. Steady states follow from the fixed point of the closed
loop; physical admissibility asks 0 < x_inf < N and u_bar < u_inf < 0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "ScalarPolicy",
    "BoundsVerdict",
    "scalar_gain",
    "scalar_offset",
    "make_policy",
    "control_law",
    "steady_state",
    "bounds_check",
    "linear_form_alpha",
    "closed_loop_rollout",
]


def scalar_gain(lam: float, q: float) -> float:
    """Stabilizing gain p = -lambda + sqrt(lambda^2 + q).

    Solves the scalar algebraic Riccati equation -2 p lambda - p^2 + q = 0.
    """
    if q < 0 or lam < 0 or (q == 0 and lam == 0):
        raise ValueError("need q >= 0, lambda >= 0, not both zero")
    return -lam + np.hypot(lam, np.sqrt(q))


def scalar_offset(lam: float, mu: float, N: float, u_bar: float,
                  q: float) -> float:
    """Affine offset k_off = p (mu N - lambda N + u_bar) / sigma."""
    p = scalar_gain(lam, q)
    sigma = np.hypot(lam, np.sqrt(q))
    return p * (mu * N - lam * N + u_bar) / sigma


@dataclass(frozen=True)
class ScalarPolicy:
    """One class of the decoupled infinite-horizon controller."""

    lam: float
    mu: float
    N: float
    u_bar: float
    q: float
    p: float
    k_off: float
    sigma: float
    C: float       # affine constant of u(x) = -p x + C
    x_inf: float
    u_inf: float
    alpha: float   # pure-linear form u = -(p + alpha) x


def make_policy(lam: float, mu: float, N: float, u_bar: float,
                q: float) -> ScalarPolicy:
    """Build the full policy: gain, offset, steady states, linear form."""
    if q <= 0:
        raise ValueError("q must be positive for a stabilizing policy")
    p = scalar_gain(lam, q)
    sigma = lam + p
    k_off = scalar_offset(lam, mu, N, u_bar, q)
    # u(x) = u_bar - p (x - N + (u_bar + (mu - lam) N) / (lam + p))
    #      = -p x + C
    C = u_bar + p * N - p * (u_bar + (mu - lam) * N) / sigma
    # fixed point of dx/dt = -lam x + u(x) + mu N = -(lam + p) x + C + mu N
    x_inf = (C + mu * N) / sigma
    u_inf = lam * x_inf - mu * N
    alpha = -C / x_inf if x_inf != 0 else float("nan")
    return ScalarPolicy(lam=lam, mu=mu, N=N, u_bar=u_bar, q=q, p=p,
                        k_off=k_off, sigma=sigma, C=C, x_inf=x_inf,
                        u_inf=u_inf, alpha=alpha)


def control_law(policy: ScalarPolicy, x) -> np.ndarray | float:
    """u(x) = u_bar - p (x - N + (u_bar + (mu - lam) N) / (lam + p))."""
    pol = policy
    return pol.u_bar - pol.p * (
        np.asarray(x, dtype=float) - pol.N
        + (pol.u_bar + (pol.mu - pol.lam) * pol.N) / (pol.lam + pol.p))


def steady_state(policy: ScalarPolicy) -> tuple[float, float]:
    """(x_inf, u_inf) from the closed-loop fixed point."""
    return policy.x_inf, policy.u_inf


@dataclass
class BoundsVerdict:
    """Strict-inequality check of the steady state.

    verdict is "pass", "fail" or "infeasible-boundary" (some inequality
    holds only with equality, none strictly violated). failures lists the
    inequalities that are violated or on the boundary.
    """

    verdict: str
    failures: list[str]
    x_inf: float
    u_inf: float


def bounds_check(policy: ScalarPolicy, tol: float = 1e-12) -> BoundsVerdict:
    """Evaluate 0 < x_inf < N and u_bar < u_inf < 0 numerically."""
    x, u = policy.x_inf, policy.u_inf
    checks = [
        ("0 < x_inf", x - 0.0),
        ("x_inf < N", policy.N - x),
        ("u_bar < u_inf", u - policy.u_bar),
        ("u_inf < 0", 0.0 - u),
    ]
    violated, boundary = [], []
    for name, gap in checks:
        if gap <= -tol:
            violated.append(name)
        elif gap < tol:
            boundary.append(name)
    if violated:
        return BoundsVerdict("fail", violated + boundary, x, u)
    if boundary:
        return BoundsVerdict("infeasible-boundary", boundary, x, u)
    return BoundsVerdict("pass", [], x, u)


def linear_form_alpha(policy: ScalarPolicy) -> float:
    """alpha with u = -(p + alpha) x matching the affine law at steady state.

    alpha = -C / x_inf; the pure-linear law reproduces u_inf at x_inf
    exactly: -(p + alpha) x_inf = -p x_inf + C = u_inf.
    """
    if policy.x_inf == 0:
        raise ValueError("alpha undefined: x_inf = 0")
    return -policy.C / policy.x_inf


def closed_loop_rollout(policy: ScalarPolicy, x0: float, T: float,
                        n_steps: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """RK4 rollout of dx/dt = -lam x + u(x) + mu N; returns (t, x)."""
    t = np.linspace(0.0, T, n_steps + 1)
    h = T / n_steps
    x = np.empty(n_steps + 1)
    x[0] = x0

    def rhs(xx: float) -> float:
        return -policy.lam * xx + control_law(policy, xx) + policy.mu * policy.N

    for j in range(n_steps):
        k1 = rhs(x[j])
        k2 = rhs(x[j] + 0.5 * h * k1)
        k3 = rhs(x[j] + 0.5 * h * k2)
        k4 = rhs(x[j] + h * k3)
        x[j + 1] = x[j] + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return t, x
