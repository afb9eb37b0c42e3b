"""Continuous-time finite-horizon LQ solver for the augmented dynamics.

With Z = (X, X_hat), w = u - u_bar, the problem is

    dZ/dt = A Z + B w + c,   J = Z(tau)^T Q_f Z(tau) + int_0^tau w^T w dt,

Q_f = blockdiag(0, R). The optimal control is w = -B^T (P Z + k) where P
solves the backward Riccati equation dP/dt + PA + A^T P - P B B^T P = 0,
P(tau) = Q_f, the offset solves dk/dt + A^T k + P c - P B B^T k = 0,
k(tau) = 0, and the scalar residue dm/dt + k^T c - (1/2) k^T B B^T k = 0,
m(tau) = 0, yields the optimal value

    min J = Z(0)^T P(0) Z(0) + 2 k(0)^T Z(0) + 2 m(0).

P also has a closed form P = P2 P1^{-1} built from the Hamiltonian matrix
exponential; both the block-assembled form and the raw P2 P1^{-1} route are
implemented and agree to 1e-10 (the ODE solver is the independent check).

Indefinite R is allowed but the backward pass can then hit a conjugate
point (P1 singular); integration stops with a blow-up diagnostic instead of
silently producing garbage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import (AugmentedState, ControlledTrajectory, CostWeights,
                    ModelSpec, check_constraints, delivery_lower_bound,
                    evaluate_cost)
from .feasibility import build_R

__all__ = [
    "AugmentedSystem",
    "CtSolution",
    "BlowUp",
    "BlowUpError",
    "SingularClosedFormError",
    "build_system",
    "solve_riccati_backward",
    "solve_k_backward",
    "solve_m_backward",
    "solve_ct",
    "closed_form_P",
    "closed_form_P_hamiltonian",
    "feedback",
    "rollout",
    "rollout_open_loop",
    "min_j_identity",
]

DEFAULT_STEPS = 4096
DEFAULT_GUARD = 1e12


class BlowUpError(RuntimeError):
    """Raised when a computation needs a Riccati solution past its escape."""

    def __init__(self, time: float, norm: float):
        self.time = time
        self.norm = norm
        super().__init__(
            f"Riccati solution escaped at t = {time:.6g} (norm {norm:.3e}); "
            "the horizon crosses a conjugate point of the indefinite "
            "terminal weight")


class SingularClosedFormError(RuntimeError):
    """Raised when the closed-form block M_x is numerically singular."""


@dataclass
class BlowUp:
    """Diagnostic for a finite-escape backward pass."""

    time: float  # forward time at which the norm guard tripped
    norm: float


@dataclass(frozen=True)
class AugmentedSystem:
    """Constant matrices of the augmented LQ problem."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray
    Qf: np.ndarray

    @property
    def K(self) -> int:
        return self.B.shape[1]


@dataclass
class CtSolution:
    """Backward-pass output on a uniform grid t_grid[i] = i * tau / n.

    P has shape (n+1, 2K, 2K), k (n+1, 2K). When blow_up is set, entries of
    P/k at times t <= blow_up.time are NaN and m0 is NaN.
    """

    t_grid: np.ndarray
    P: np.ndarray
    k: np.ndarray | None
    m0: float
    blow_up: BlowUp | None
    sys: AugmentedSystem

    @property
    def P0_smallest_eigenvalue(self) -> float:
        if self.blow_up is not None:
            return float("nan")
        return float(np.linalg.eigvalsh(self.P[0])[0])


def build_system(m: ModelSpec, cw: CostWeights,
                 R: np.ndarray | None = None) -> AugmentedSystem:
    """Assemble (A, B, c, Qf) with Qf = blockdiag(0, R)."""
    from .model import build_dynamics

    if R is None:
        R = build_R(cw, m)
    k = m.K
    A, B, c = build_dynamics(m, cw)
    Qf = np.zeros((2 * k, 2 * k))
    Qf[k:, k:] = 0.5 * (R + R.T)
    return AugmentedSystem(A=A, B=B, c=c, Qf=Qf)


def _riccati_rhs_backward(G: np.ndarray, A: np.ndarray,
                          BBt: np.ndarray) -> np.ndarray:
    # G(s) = P(tau - s), so dG/ds = GA + A^T G - G BB^T G
    return G @ A + A.T @ G - G @ BBt @ G


def solve_riccati_backward(sys: AugmentedSystem, tau: float,
                           n_steps: int = DEFAULT_STEPS,
                           guard: float = DEFAULT_GUARD):
    """Fixed-step RK4 backward pass for P on n_steps+1 grid points.

    Returns (t_grid, P, blow_up). The iterate is symmetrized after every
    step; when its max-abs entry exceeds `guard` (or turns non-finite) the
    pass stops, the remaining entries are NaN and blow_up records the
    forward time and norm at the trip.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    n2 = sys.A.shape[0]
    h = tau / n_steps
    t_grid = np.linspace(0.0, tau, n_steps + 1)
    P = np.full((n_steps + 1, n2, n2), np.nan)
    BBt = sys.B @ sys.B.T
    G = sys.Qf.copy()
    P[n_steps] = G
    blow_up = None
    for j in range(1, n_steps + 1):
        k1 = _riccati_rhs_backward(G, sys.A, BBt)
        k2 = _riccati_rhs_backward(G + 0.5 * h * k1, sys.A, BBt)
        k3 = _riccati_rhs_backward(G + 0.5 * h * k2, sys.A, BBt)
        k4 = _riccati_rhs_backward(G + h * k3, sys.A, BBt)
        G = G + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        G = 0.5 * (G + G.T)
        norm = float(np.max(np.abs(G))) if np.all(np.isfinite(G)) else np.inf
        if not np.isfinite(norm) or norm > guard:
            blow_up = BlowUp(time=float(tau - j * h), norm=norm)
            break
        P[n_steps - j] = G
    return t_grid, P, blow_up


def _interp_grid(t_grid: np.ndarray, values: np.ndarray, t: float):
    """Linear interpolation of grid-stored tensors (P slices or k rows)."""
    n = t_grid.size - 1
    tau = t_grid[-1]
    s = min(max(t / tau * n, 0.0), float(n))
    j = int(np.floor(s))
    if j >= n:
        return values[n]
    frac = s - j
    return (1.0 - frac) * values[j] + frac * values[j + 1]


def solve_k_backward(sys: AugmentedSystem, t_grid: np.ndarray, P: np.ndarray,
                     blow_up: BlowUp | None = None) -> np.ndarray:
    """Fixed-step RK4 backward pass for the affine offset k.

    Uses the stored P grid (linearly interpolated at RK4 half steps).
    A blown-up Riccati pass propagates: this raises BlowUpError.
    """
    if blow_up is not None:
        raise BlowUpError(blow_up.time, blow_up.norm)
    n = t_grid.size - 1
    tau = float(t_grid[-1])
    h = tau / n
    BBt = sys.B @ sys.B.T
    k = np.zeros((n + 1, sys.A.shape[0]))

    def rhs(s: float, kap: np.ndarray) -> np.ndarray:
        # kappa(s) = k(tau - s): dkappa/ds = A^T kappa + P c - P BB^T kappa
        Pt = _interp_grid(t_grid, P, tau - s)
        return sys.A.T @ kap + Pt @ sys.c - Pt @ (BBt @ kap)

    kap = np.zeros(sys.A.shape[0])
    for j in range(1, n + 1):
        s = (j - 1) * h
        k1 = rhs(s, kap)
        k2 = rhs(s + 0.5 * h, kap + 0.5 * h * k1)
        k3 = rhs(s + 0.5 * h, kap + 0.5 * h * k2)
        k4 = rhs(s + h, kap + h * k3)
        kap = kap + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        k[n - j] = kap
    return k


def solve_m_backward(sys: AugmentedSystem, t_grid: np.ndarray,
                     k: np.ndarray) -> float:
    """m(0) = int_0^tau (k^T c - 0.5 k^T B B^T k) dt by trapezoid."""
    BBt = sys.B @ sys.B.T
    integrand = k @ sys.c - 0.5 * np.einsum("ij,jk,ik->i", k, BBt, k)
    return float(np.trapezoid(integrand, t_grid))


def solve_ct(m: ModelSpec, cw: CostWeights, tau: float,
             R: np.ndarray | None = None, n_steps: int = DEFAULT_STEPS,
             guard: float = DEFAULT_GUARD) -> CtSolution:
    """Full backward pass: P, k and the scalar residue m(0)."""
    sys = build_system(m, cw, R)
    t_grid, P, blow_up = solve_riccati_backward(sys, tau, n_steps, guard)
    if blow_up is not None:
        return CtSolution(t_grid=t_grid, P=P, k=None, m0=float("nan"),
                          blow_up=blow_up, sys=sys)
    k = solve_k_backward(sys, t_grid, P)
    m0 = solve_m_backward(sys, t_grid, k)
    return CtSolution(t_grid=t_grid, P=P, k=k, m0=m0, blow_up=None, sys=sys)


def _sinh_minus_y(y: np.ndarray) -> np.ndarray:
    """sinh(y) - y, series-switched against cancellation for small |y|."""
    out = np.empty_like(y)
    small = np.abs(y) < 0.05
    ys = y[small]
    y2 = ys * ys
    out[small] = (ys * y2 / 6.0) * (1.0 + y2 / 20.0 * (1.0 + y2 / 42.0))
    out[~small] = np.sinh(y[~small]) - y[~small]
    return out


def _closed_form_blocks(m: ModelSpec, R: np.ndarray, t: float, tau: float):
    lam = m.lambda_d
    x = t - tau  # in [-tau, 0]
    y = lam * x
    e_pos = np.exp(y)
    ch_m1 = 2.0 * np.sinh(0.5 * y) ** 2          # cosh(y) - 1
    sh_m_y = _sinh_minus_y(y)                    # sinh(y) - y
    expm1_pos = np.expm1(y)                      # e^{y} - 1
    G = (sh_m_y - ch_m1 * expm1_pos) / lam ** 3  # diagonal of the M_x factor
    W = -expm1_pos / lam                         # Lo^{-1}(I - e^{Lo x})
    M = np.eye(m.K) + G[:, None] * R
    return M, W, e_pos, ch_m1, sh_m_y, expm1_pos


def closed_form_P(m: ModelSpec, R: np.ndarray, t: float,
                  tau: float) -> np.ndarray:
    """Closed-form Riccati solution at forward time t, x = t - tau.

    P22 = R M_x^{-1}, P21 = P22 W, P12 = W P22, P11 = W P22 W with
    W = Lo^{-1}(I - e^{Lo x}) and
    M_x = I + Lo^{-3}[(sinh(Lo x) - x Lo) - (cosh(Lo x) - I)(e^{Lo x} - I)] R.
    """
    M, W, *_ = _closed_form_blocks(m, R, t, tau)
    cond = np.linalg.cond(M)
    if not np.isfinite(cond) or cond > 1e13:
        raise SingularClosedFormError(
            f"M_x is singular at t = {t:.6g} (condition estimate {cond:.3e}); "
            "the horizon crosses a conjugate point")
    S = R @ np.linalg.inv(M)
    S = 0.5 * (S + S.T)
    k = m.K
    P = np.zeros((2 * k, 2 * k))
    P[:k, :k] = W[:, None] * S * W[None, :]
    P[:k, k:] = W[:, None] * S
    P[k:, :k] = S * W[None, :]
    P[k:, k:] = S
    return 0.5 * (P + P.T)


def closed_form_P_hamiltonian(m: ModelSpec, R: np.ndarray, t: float,
                              tau: float) -> np.ndarray:
    """Independent assembly route P = P2 P1^{-1} from the e^{Hx} blocks."""
    lam = m.lambda_d
    x = t - tau
    y = lam * x
    M, W, e_pos, ch_m1, sh_m_y, expm1_pos = _closed_form_blocks(m, R, t, tau)
    k = m.K
    e_neg = np.exp(-y)
    E14 = ch_m1 / lam ** 2
    E21 = -np.expm1(-y) / lam          # Lo^{-1}(I - e^{-Lo x})
    E24 = sh_m_y / lam ** 3
    E34 = -expm1_pos / lam             # -Lo^{-1}(e^{Lo x} - I)
    P1 = np.zeros((2 * k, 2 * k))
    P1[:k, :k] = np.diag(e_neg)
    P1[:k, k:] = E14[:, None] * R
    P1[k:, :k] = np.diag(E21)
    P1[k:, k:] = np.eye(k) + E24[:, None] * R
    P2 = np.zeros((2 * k, 2 * k))
    P2[:k, k:] = E34[:, None] * R
    P2[k:, k:] = R
    cond = np.linalg.cond(P1)
    if not np.isfinite(cond) or cond > 1e13:
        raise SingularClosedFormError(
            f"P1 is singular at t = {t:.6g} (condition estimate {cond:.3e})")
    P = P2 @ np.linalg.inv(P1)
    return 0.5 * (P + P.T)


def feedback(P: np.ndarray, k: np.ndarray, z: np.ndarray,
             u_bar: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Optimal control at one state: w = -B^T(Pz + k), u = w + u_bar.

    B^T picks the top K rows, so no explicit B is needed.
    """
    n_half = z.size // 2
    w = -(P @ z + k)[:n_half]
    return w + u_bar, w


def rollout(m: ModelSpec, cw: CostWeights, sol: CtSolution,
            Z0: AugmentedState | np.ndarray | None = None,
            n_steps: int | None = None) -> ControlledTrajectory:
    """Forward RK4 under the optimal feedback, on the solution grid.

    Z0 defaults to the empty network (no copies yet). Records X, X_hat, u,
    w, the delivery bound D (computed on X_hat clipped at zero; negative
    excursions show up in `violations`, not in D), grid constraint
    violations, and the realized cost.
    """
    if sol.blow_up is not None:
        raise BlowUpError(sol.blow_up.time, sol.blow_up.norm)
    tau = float(sol.t_grid[-1])
    if n_steps is None:
        n_steps = sol.t_grid.size - 1
    t = np.linspace(0.0, tau, n_steps + 1)
    h = tau / n_steps
    A, B, c = sol.sys.A, sol.sys.B, sol.sys.c
    k2 = A.shape[0]
    kk = k2 // 2

    def w_at(tt: float, z: np.ndarray) -> np.ndarray:
        Pt = _interp_grid(sol.t_grid, sol.P, tt)
        kt = _interp_grid(sol.t_grid, sol.k, tt)
        return -(Pt @ z + kt)[:kk]

    def rhs(tt: float, z: np.ndarray) -> np.ndarray:
        return A @ z + B @ w_at(tt, z) + c

    z = np.zeros(k2)
    if Z0 is not None:
        z = Z0.z if isinstance(Z0, AugmentedState) else np.asarray(Z0, float).copy()
    Z = np.zeros((n_steps + 1, k2))
    W = np.zeros((n_steps + 1, kk))
    Z[0] = z
    W[0] = w_at(0.0, z)
    for j in range(n_steps):
        tj = t[j]
        k1 = rhs(tj, z)
        k2_ = rhs(tj + 0.5 * h, z + 0.5 * h * k1)
        k3 = rhs(tj + 0.5 * h, z + 0.5 * h * k2_)
        k4 = rhs(tj + h, z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2_ + 2.0 * k3 + k4)
        Z[j + 1] = z
        W[j + 1] = w_at(t[j + 1], z)
    X = Z[:, :kk]
    Xhat = Z[:, kk:]
    u = W + cw.u_bar[None, :]
    D = delivery_lower_bound(np.maximum(Xhat, 0.0), m.lambda_d)
    traj = ControlledTrajectory(t=t, X=X, Xhat=Xhat, u=u, w=W, D=D)
    traj.violations = check_constraints(traj, m)
    traj.cost = evaluate_cost(traj, cw, sol.sys.Qf[kk:, kk:])
    return traj


def rollout_open_loop(m: ModelSpec, cw: CostWeights, u_fn, tau: float,
                      n_steps: int = DEFAULT_STEPS,
                      R: np.ndarray | None = None,
                      Z0: np.ndarray | None = None) -> ControlledTrajectory:
    """Forward RK4 under an arbitrary control law u_fn(t, X) -> u vector.

    Used for optimality spot checks (perturbed schedules) and for replaying
    piecewise-constant schedules outside the feedback loop.
    """
    sys = build_system(m, cw, R)
    A, B, c = sys.A, sys.B, sys.c
    kk = m.K
    t = np.linspace(0.0, tau, n_steps + 1)
    h = tau / n_steps

    def rhs(tt: float, z: np.ndarray) -> np.ndarray:
        u = np.asarray(u_fn(tt, z[:kk]), dtype=float)
        return A @ z + B @ (u - cw.u_bar) + c

    z = np.zeros(2 * kk) if Z0 is None else np.asarray(Z0, float).copy()
    Z = np.zeros((n_steps + 1, 2 * kk))
    U = np.zeros((n_steps + 1, kk))
    Z[0] = z
    U[0] = np.asarray(u_fn(0.0, z[:kk]), dtype=float)
    for j in range(n_steps):
        tj = t[j]
        k1 = rhs(tj, z)
        k2_ = rhs(tj + 0.5 * h, z + 0.5 * h * k1)
        k3 = rhs(tj + 0.5 * h, z + 0.5 * h * k2_)
        k4 = rhs(tj + h, z + h * k3)
        z = z + (h / 6.0) * (k1 + 2.0 * k2_ + 2.0 * k3 + k4)
        Z[j + 1] = z
        U[j + 1] = np.asarray(u_fn(t[j + 1], z[:kk]), dtype=float)
    X = Z[:, :kk]
    Xhat = Z[:, kk:]
    D = delivery_lower_bound(np.maximum(Xhat, 0.0), m.lambda_d)
    traj = ControlledTrajectory(t=t, X=X, Xhat=Xhat, u=U,
                                w=U - cw.u_bar[None, :], D=D)
    traj.violations = check_constraints(traj, m)
    traj.cost = evaluate_cost(traj, cw, sys.Qf[kk:, kk:])
    return traj


def min_j_identity(sol: CtSolution,
                   Z0: AugmentedState | np.ndarray | None = None) -> float:
    """Predicted optimal cost Z0^T P(0) Z0 + 2 k(0)^T Z0 + 2 m(0)."""
    if sol.blow_up is not None:
        raise BlowUpError(sol.blow_up.time, sol.blow_up.norm)
    z0 = np.zeros(sol.sys.A.shape[0])
    if Z0 is not None:
        z0 = Z0.z if isinstance(Z0, AugmentedState) else np.asarray(Z0, float)
    return float(z0 @ sol.P[0] @ z0 + 2.0 * sol.k[0] @ z0 + 2.0 * sol.m0)
