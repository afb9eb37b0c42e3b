"""Mean-field model of two-hop relay forwarding with per-class timer control.

State per class i: X_i(t) is the expected number of relay nodes of class i
holding a message copy, X_hat_i(t) = integral of X_i over [0, t]. The
controlled mean-field dynamics are

    dX_i/dt = lambda_s_i (N_i - X_i) - Mbar_i X_i
            = lambda_in_i N_i - lambda_out_i X_i + u_i,

with u_i = -M_i X_i, M_i = lambda_s_i - lambda_d_i + Mbar_i, so the timer
(discard) rate Mbar_i is recovered from the control via
Mbar_i = -u_i/X_i - lambda_s_i + lambda_d_i. Physical admissibility needs
0 <= X_i <= N_i, u_i <= 0 and Mbar_i >= 0.

The augmented state Z = (X, X_hat) follows affine dynamics
dZ/dt = A Z + B w + c with w = u - u_bar (see build_dynamics).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ModelSpec",
    "CostWeights",
    "AugmentedState",
    "ControlledTrajectory",
    "Violation",
    "InfeasibleControlError",
    "build_dynamics",
    "drift",
    "delivery_lower_bound",
    "timer_rates_from_control",
    "check_constraints",
    "evaluate_cost",
    "uncontrolled_mean",
]


class InfeasibleControlError(ValueError):
    """Raised when a control value cannot be realized by any timer rate."""


def _as_float_vector(x, name, k=None):
    v = np.atleast_1d(np.asarray(x, dtype=float))
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {v.shape}")
    if k is not None and v.size != k:
        raise ValueError(f"{name} must have length {k}, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must be finite")
    return v.copy()


@dataclass(frozen=True)
class ModelSpec:
    """Per-class contact rates and populations.

    lambda_s[i]: meeting rate of the source with a class-i node (1/s).
        Doubles as the i-th diagonal entry of Lambda_in.
    lambda_d[i]: meeting rate of a class-i node with the destination (1/s).
        Doubles as the i-th diagonal entry of the decay matrix Lambda_out,
        which must be invertible, hence the strict positivity.
    N[i]: number of class-i nodes (excluding source and destination).
    """

    lambda_s: np.ndarray
    lambda_d: np.ndarray
    N: np.ndarray

    def __post_init__(self):
        lam_s = _as_float_vector(self.lambda_s, "lambda_s")
        k = lam_s.size
        if k < 1:
            raise ValueError("need at least one class")
        lam_d = _as_float_vector(self.lambda_d, "lambda_d", k)
        n = _as_float_vector(self.N, "N", k)
        if np.any(lam_s < 0):
            raise ValueError("lambda_s must be nonnegative componentwise")
        if np.any(lam_d <= 0):
            raise ValueError("lambda_d must be positive componentwise")
        if np.any(n <= 0):
            raise ValueError("N must be positive componentwise")
        object.__setattr__(self, "lambda_s", lam_s)
        object.__setattr__(self, "lambda_d", lam_d)
        object.__setattr__(self, "N", n)

    @property
    def K(self) -> int:
        return self.lambda_s.size

    def rescaled(self, time_unit: float) -> "ModelSpec":
        """Return the spec with rates expressed per `time_unit` seconds."""
        return ModelSpec(self.lambda_s * time_unit, self.lambda_d * time_unit, self.N)


@dataclass(frozen=True)
class CostWeights:
    """Weights of the quadratic cost.

    J = -c1 Xtilde(tau)^2 + c2 sum_i int (u_i - u_bar_i)^2 dt
        + c3 sum_i X_hat_i(tau)^2 + c4 sum_i (lambda_d_i X_hat_i(tau))^2

    with Xtilde = sum_i lambda_d_i X_hat_i. c2 is a normalization fixed to 1.
    q holds the per-class state weights of the infinite-horizon problem and Q
    an optional running-cost matrix on the augmented state for discrete time.
    time_unit is the unit of time, in seconds, in which the weights (and q)
    are expressed; solvers rescale rates and horizon accordingly.
    """

    c1: float
    c3: float
    c4: float
    u_bar: np.ndarray
    c2: float = 1.0
    q: np.ndarray | None = None
    Q: np.ndarray | None = None
    time_unit: float = 1.0

    def __post_init__(self):
        for name in ("c1", "c3", "c4"):
            v = float(getattr(self, name))
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and nonnegative")
            object.__setattr__(self, name, v)
        c2 = float(self.c2)
        if c2 != 1.0:
            raise ValueError("c2 is a normalization fixed to 1.0")
        object.__setattr__(self, "c2", c2)
        u_bar = _as_float_vector(self.u_bar, "u_bar")
        if np.any(u_bar > 0):
            raise ValueError("u_bar must be nonpositive componentwise")
        object.__setattr__(self, "u_bar", u_bar)
        if self.q is not None:
            q = _as_float_vector(self.q, "q")
            if np.any(q <= 0):
                raise ValueError("q must be positive componentwise")
            object.__setattr__(self, "q", q)
        if self.Q is not None:
            Q = np.asarray(self.Q, dtype=float)
            if Q.ndim != 2 or Q.shape[0] != Q.shape[1]:
                raise ValueError("Q must be a square matrix")
            if not np.allclose(Q, Q.T):
                raise ValueError("Q must be symmetric")
            object.__setattr__(self, "Q", Q.copy())
        tu = float(self.time_unit)
        if not np.isfinite(tu) or tu <= 0:
            raise ValueError("time_unit must be positive")
        object.__setattr__(self, "time_unit", tu)


@dataclass(frozen=True)
class AugmentedState:
    """Augmented state Z = (X, X_hat)."""

    X: np.ndarray
    Xhat: np.ndarray

    def __post_init__(self):
        x = _as_float_vector(self.X, "X")
        xh = _as_float_vector(self.Xhat, "Xhat", x.size)
        object.__setattr__(self, "X", x)
        object.__setattr__(self, "Xhat", xh)

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([self.X, self.Xhat])

    @staticmethod
    def from_z(z: np.ndarray) -> "AugmentedState":
        z = np.asarray(z, dtype=float)
        k = z.size // 2
        return AugmentedState(z[:k], z[k:])


@dataclass
class Violation:
    """One flagged constraint violation at a trajectory grid point."""

    time: float
    kind: str  # one of "X<0", "X>N", "u>0", "timer<0"
    class_index: int
    value: float


@dataclass
class ControlledTrajectory:
    """A rolled-out trajectory on a uniform time grid.

    All arrays have leading dimension len(t); X, Xhat, u, w have a trailing
    class dimension. D is the delivery-probability lower bound per grid
    point; cost is the realized quadratic cost of the rollout.
    """

    t: np.ndarray
    X: np.ndarray
    Xhat: np.ndarray
    u: np.ndarray
    w: np.ndarray
    D: np.ndarray
    cost: float | None = None
    violations: list = field(default_factory=list)


def build_dynamics(m: ModelSpec, cw: CostWeights):
    """Return (A, B, c) of the affine augmented dynamics dZ/dt = AZ + Bw + c.

    A = [[-Lambda_out, 0], [I, 0]], B = [I; 0],
    c = (Lambda_in N + u_bar, 0) with w = u - u_bar.
    """
    k = m.K
    A = np.zeros((2 * k, 2 * k))
    A[:k, :k] = -np.diag(m.lambda_d)
    A[k:, :k] = np.eye(k)
    B = np.zeros((2 * k, k))
    B[:k, :] = np.eye(k)
    c = np.zeros(2 * k)
    c[:k] = m.lambda_s * m.N + cw.u_bar
    return A, B, c


def drift(Z, w, m: ModelSpec, cw: CostWeights) -> np.ndarray:
    """Time derivative of the augmented state for deviation control w."""
    z = Z.z if isinstance(Z, AugmentedState) else np.asarray(Z, dtype=float)
    A, B, c = build_dynamics(m, cw)
    return A @ z + B @ np.asarray(w, dtype=float) + c


def delivery_lower_bound(Xhat, lambda_d) -> np.ndarray | float:
    """Lower bound D = 1 - exp(-sum_i lambda_d_i X_hat_i) on P(T_d <= t).

    Accepts a single X_hat vector (shape (K,)) or a stack (n, K); negative
    X_hat entries are rejected since the bound is only meaningful for
    physical trajectories.
    """
    xh = np.asarray(Xhat, dtype=float)
    lam = np.asarray(lambda_d, dtype=float)
    if np.any(xh < 0):
        raise ValueError("Xhat must be nonnegative for the delivery bound")
    h = xh @ lam
    return 1.0 - np.exp(-h)


def timer_rates_from_control(u, X, m: ModelSpec, clamp: bool = False,
                             tol: float = 1e-9) -> np.ndarray:
    """Recover per-class timer rates Mbar from a control vector.

    Mbar_i = -u_i/X_i - lambda_s_i + lambda_d_i where X_i > 0. Negative
    results are returned as-is so callers can flag them; with clamp=True
    they are zeroed instead. Where X_i is (numerically) zero, a
    nonnegative u_i means no copies to discard and Mbar_i = 0; a strictly
    negative u_i cannot be realized by any finite timer rate.
    """
    u = np.asarray(u, dtype=float)
    x = np.asarray(X, dtype=float)
    mbar = np.zeros(m.K)
    tiny = x <= tol
    bad = tiny & (u < -tol)
    if np.any(bad):
        idx = np.flatnonzero(bad)
        raise InfeasibleControlError(
            f"u < 0 with X = 0 in classes {idx.tolist()}: "
            "no timer rate can remove copies that are not there")
    ok = ~tiny
    mbar[ok] = -u[ok] / x[ok] - m.lambda_s[ok] + m.lambda_d[ok]
    if clamp:
        mbar = np.maximum(mbar, 0.0)
    return mbar


def check_constraints(traj: ControlledTrajectory, m: ModelSpec,
                      tol: float = 1e-9) -> list[Violation]:
    """List every grid point where a physical constraint fails.

    Kinds: "X<0" (X_i < -tol), "X>N" (X_i > N_i + tol), "u>0" (u_i > tol),
    "timer<0" (recovered Mbar_i < -tol, including controls that no timer
    rate can realize).
    """
    out: list[Violation] = []
    for j, t in enumerate(traj.t):
        x = traj.X[j]
        u = traj.u[j]
        for i in range(m.K):
            if x[i] < -tol:
                out.append(Violation(float(t), "X<0", i, float(x[i])))
            if x[i] > m.N[i] + tol:
                out.append(Violation(float(t), "X>N", i, float(x[i])))
            if u[i] > tol:
                out.append(Violation(float(t), "u>0", i, float(u[i])))
        try:
            mbar = timer_rates_from_control(u, np.maximum(x, 0.0), m, tol=tol)
        except InfeasibleControlError:
            for i in np.flatnonzero((np.maximum(x, 0.0) <= tol) & (u < -tol)):
                out.append(Violation(float(t), "timer<0", int(i), -np.inf))
            continue
        for i in np.flatnonzero(mbar < -tol):
            out.append(Violation(float(t), "timer<0", int(i), float(mbar[i])))
    return out


def evaluate_cost(traj: ControlledTrajectory, cw: CostWeights,
                  R: np.ndarray) -> float:
    """Trapezoidal control energy plus terminal X_hat penalty.

    cost = c2 * int sum_i (u_i - u_bar_i)^2 dt + X_hat(tau)^T R X_hat(tau).
    """
    w = traj.u - cw.u_bar[None, :]
    energy = np.trapezoid(np.sum(w * w, axis=1), traj.t)
    xh = traj.Xhat[-1]
    return float(cw.c2 * energy + xh @ R @ xh)


def uncontrolled_mean(m: ModelSpec, t) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form mean field with timers off (Mbar = 0).

    With Mbar = 0 the control exactly cancels the decay asymmetry and
    dX_i/dt = lambda_s_i (N_i - X_i), so X_i(t) = N_i(1 - e^{-lambda_s_i t})
    and X_hat_i(t) = N_i (t - (1 - e^{-lambda_s_i t})/lambda_s_i).
    Classes with lambda_s_i = 0 stay empty.
    """
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    X = np.zeros((tt.size, m.K))
    Xhat = np.zeros((tt.size, m.K))
    for i in range(m.K):
        lam = m.lambda_s[i]
        if lam > 0:
            g = -np.expm1(-lam * tt)  # 1 - e^{-lam t}, stable for small lam t
            X[:, i] = m.N[i] * g
            Xhat[:, i] = m.N[i] * (tt - g / lam)
    if np.ndim(t) == 0:
        return X[0], Xhat[0]
    return X, Xhat
