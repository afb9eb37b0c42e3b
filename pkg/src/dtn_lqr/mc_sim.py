"""Monte-Carlo contact simulator for the controlled two-hop relay system.

Each run simulates the continuous-time Markov jump process of per-class
copy counts xi_i(t) in {0, ..., N_i}: every susceptible class-i node meets
the source at rate lambda_s_i (gaining a copy), every infected node
discards its copy at the timer rate Mbar_i (returning to the susceptible
pool). Rates are held piecewise constant on the control grid and events
are sampled exactly within each step via competing exponential clocks.

Delivery does not alter the relay dynamics: the destination sees an
inhomogeneous Poisson process with rate sum_i lambda_d_i xi_i(t), so the
cumulative hazard H(t) = sum_i lambda_d_i int_0^t xi_i is accumulated
exactly (piecewise linear between jumps) and the delivery time T_d is
sampled by drawing E ~ Exp(1) up front and inverting H(T_d) = E. The
per-path delivery probability is Psi(t) = 1 - e^{-H(t)}.

The timer schedule is open loop: Mbar is derived from the control values
u(t) against the mean-field X at each grid step, not from the realized xi.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import InfeasibleControlError, ModelSpec, timer_rates_from_control

__all__ = [
    "SimConfig",
    "SamplePath",
    "SimEnsemble",
    "JensenReport",
    "build_grid",
    "rate_schedule",
    "mean_field_reference",
    "simulate_once",
    "monte_carlo",
    "jensen_report",
]


@dataclass(frozen=True)
class SimConfig:
    """Ensemble settings.

    rate_grid is the control-grid step: rates are piecewise constant on it
    and sample paths are observed at its boundaries. With
    clamp_negative_timer False (default) a schedule demanding Mbar < 0
    aborts; True clamps those rates to zero instead.
    """

    runs: int
    base_seed: int
    rate_grid: float
    horizon: float
    clamp_negative_timer: bool = False

    def __post_init__(self):
        if int(self.runs) < 1:
            raise ValueError("runs must be >= 1")
        object.__setattr__(self, "runs", int(self.runs))
        object.__setattr__(self, "base_seed", int(self.base_seed))
        if not self.rate_grid > 0:
            raise ValueError("rate_grid must be positive")
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        object.__setattr__(self, "rate_grid", float(self.rate_grid))
        object.__setattr__(self, "horizon", float(self.horizon))


@dataclass
class SamplePath:
    """One realization observed at the grid boundaries."""

    t: np.ndarray
    xi: np.ndarray      # (n_obs, K) integer copy counts
    H: np.ndarray       # (n_obs,) cumulative hazard
    psi: np.ndarray     # (n_obs,) 1 - exp(-H)
    T_d: float          # delivery time, inf if not delivered by the horizon


@dataclass
class SimEnsemble:
    """Aggregated runs on the shared observation grid.

    mean_xi/se_xi are per-time per-class sample means and standard errors;
    mean_psi/se_psi the same for the per-path Psi(t); empirical_cdf is the
    fraction of delivery times <= t; H keeps every per-path hazard curve.
    ode_X/ode_Xhat/D are the mean-field reference under the identical
    Mbar schedule.
    """

    t: np.ndarray
    mean_xi: np.ndarray
    se_xi: np.ndarray
    mean_psi: np.ndarray
    se_psi: np.ndarray
    empirical_cdf: np.ndarray
    T_d: np.ndarray
    H: np.ndarray
    ode_X: np.ndarray
    ode_Xhat: np.ndarray
    D: np.ndarray
    runs: int
    config: SimConfig | None = None


def build_grid(cfg: SimConfig) -> np.ndarray:
    """Step edges 0, h, 2h, ..., horizon (last step may be shorter)."""
    h = cfg.rate_grid
    n_full = int(np.floor(cfg.horizon / h + 1e-12))
    edges = np.arange(n_full + 1) * h
    if edges[-1] < cfg.horizon - 1e-12 * max(1.0, cfg.horizon):
        edges = np.append(edges, cfg.horizon)
    else:
        edges[-1] = cfg.horizon
    return edges


def _affine_mean_start_of_step(m: ModelSpec, u_steps: np.ndarray,
                               edges: np.ndarray) -> np.ndarray:
    """Mean-field X at each step start under the piecewise-constant controls.

    Within a step dX/dt = lambda_s N - lambda_d X + u is affine with u
    constant, so the update is exact.
    """
    n_steps = edges.size - 1
    lam = m.lambda_d
    drive_base = m.lambda_s * m.N
    X = np.zeros((n_steps, m.K))
    x = np.zeros(m.K)
    for j in range(n_steps):
        X[j] = x
        dt = edges[j + 1] - edges[j]
        g = -np.expm1(-lam * dt) / lam  # (1 - e^{-lam dt}) / lam
        x = x * np.exp(-lam * dt) + (drive_base + u_steps[j]) * g
    return X


def rate_schedule(m: ModelSpec, control_schedule: np.ndarray | None,
                  cfg: SimConfig) -> tuple[np.ndarray, np.ndarray]:
    """Derive the per-step timer rates Mbar from the control values.

    Returns (edges, mbar) with mbar of shape (n_steps, K). Controls are
    evaluated against the mean-field X at each step start. Schedules that
    require a negative timer rate abort with a diagnostic listing the
    offending steps unless cfg.clamp_negative_timer is set.
    """
    edges = build_grid(cfg)
    n_steps = edges.size - 1
    if control_schedule is None:
        return edges, np.zeros((n_steps, m.K))
    u = np.asarray(control_schedule, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[0] < n_steps or u.shape[1] != m.K:
        raise ValueError(
            f"control schedule must cover [0, horizon]: need at least "
            f"{n_steps} steps of {m.K} classes, got shape {u.shape}")
    X_start = _affine_mean_start_of_step(m, u, edges)
    mbar = np.zeros((n_steps, m.K))
    offending: list[tuple[int, float, int, float]] = []
    for j in range(n_steps):
        rates = timer_rates_from_control(u[j], X_start[j], m,
                                         clamp=cfg.clamp_negative_timer)
        if not cfg.clamp_negative_timer:
            for i in np.flatnonzero(rates < -1e-9):
                offending.append((j, float(edges[j]), int(i), float(rates[i])))
        mbar[j] = np.maximum(rates, 0.0) if cfg.clamp_negative_timer else rates
    if offending:
        head = ", ".join(
            f"(step {j}, t={t:.6g}, class {i}, Mbar={v:.6g})"
            for j, t, i, v in offending[:8])
        more = "" if len(offending) <= 8 else f" and {len(offending) - 8} more"
        raise InfeasibleControlError(
            f"schedule requires negative timer rates at {len(offending)} "
            f"step/class pairs: {head}{more}; enable clamp_negative_timer "
            "to zero them")
    return edges, mbar


def mean_field_reference(m: ModelSpec, mbar: np.ndarray, edges: np.ndarray):
    """Exact mean-field (X, Xhat, D) at the grid edges for a Mbar schedule.

    Per step dX_i/dt = lambda_s_i N_i - a_i X_i with
    a_i = lambda_s_i + Mbar_i constant, integrated in closed form; Xhat
    accumulates the exact integral of X over each step.
    """
    n_obs = edges.size
    X = np.zeros((n_obs, m.K))
    Xhat = np.zeros((n_obs, m.K))
    x = np.zeros(m.K)
    xh = np.zeros(m.K)
    drive = m.lambda_s * m.N
    for j in range(n_obs - 1):
        dt = edges[j + 1] - edges[j]
        a = m.lambda_s + mbar[j]
        pos = a > 0
        g = np.where(pos, -np.expm1(-np.where(pos, a, 1.0) * dt)
                     / np.where(pos, a, 1.0), dt)
        # integral of X over the step; where a = 0 the drive is zero too
        # (lambda_s = 0 and Mbar = 0), so X is constant there
        seg = np.where(pos, x * g + drive * (dt - g) / np.where(pos, a, 1.0),
                       x * dt)
        xh = xh + seg
        x = np.where(pos, x * np.exp(-a * dt) + drive * g, x)
        X[j + 1] = x
        Xhat[j + 1] = xh
    D = 1.0 - np.exp(-(Xhat @ m.lambda_d))
    return X, Xhat, D


def _rng_for_run(cfg: SimConfig, run_index: int) -> np.random.Generator:
    seq = np.random.SeedSequence(cfg.base_seed, spawn_key=(int(run_index),))
    return np.random.default_rng(seq)


def _uncontrolled_path(m: ModelSpec, cfg: SimConfig, edges: np.ndarray,
                       rng: np.random.Generator) -> SamplePath:
    """Pure-birth fast path: with Mbar = 0, each node gains its copy at an
    independent Exp(lambda_s_i) time and never loses it, so the whole path
    is a function of the per-node infection times."""
    E = rng.exponential()
    n_obs = edges.size
    xi = np.zeros((n_obs, m.K))
    H = np.zeros(n_obs)
    times_per_class: list[np.ndarray] = []
    for i in range(m.K):
        n_i = int(round(m.N[i]))
        if m.lambda_s[i] > 0:
            t_inf = np.sort(rng.exponential(1.0 / m.lambda_s[i], size=n_i))
        else:
            t_inf = np.full(n_i, np.inf)
        times_per_class.append(t_inf)
        idx = np.searchsorted(t_inf, edges, side="right")
        xi[:, i] = idx
        csum = np.concatenate([[0.0], np.cumsum(np.where(np.isfinite(t_inf),
                                                         t_inf, 0.0))])
        # sum over infected nodes of (t - t_inf)+ at each edge
        H += m.lambda_d[i] * (idx * edges - csum[idx])
    psi = -np.expm1(-H)
    # invert H(t) = E on the piecewise-linear hazard (slope changes at
    # each infection time)
    T_d = np.inf
    events = []
    for i, t_inf in enumerate(times_per_class):
        finite = t_inf[np.isfinite(t_inf)]
        events.append(np.stack([finite, np.full(finite.size, m.lambda_d[i])],
                               axis=1))
    ev = np.concatenate(events) if events else np.zeros((0, 2))
    if ev.size:
        order = np.argsort(ev[:, 0], kind="stable")
        ev = ev[order]
    h_acc = 0.0
    slope = 0.0
    t_cur = 0.0
    for t_next, lam_d in ev:
        if t_next > cfg.horizon:
            break
        if slope > 0 and h_acc + slope * (t_next - t_cur) >= E:
            T_d = t_cur + (E - h_acc) / slope
            break
        h_acc += slope * (t_next - t_cur)
        slope += lam_d
        t_cur = t_next
    if not np.isfinite(T_d):
        if slope > 0 and h_acc + slope * (cfg.horizon - t_cur) >= E:
            T_d = t_cur + (E - h_acc) / slope
    return SamplePath(t=edges.copy(), xi=xi, H=H, psi=psi, T_d=float(T_d))


def _controlled_path(m: ModelSpec, cfg: SimConfig, edges: np.ndarray,
                     mbar: np.ndarray, rng: np.random.Generator) -> SamplePath:
    """Event-driven exact simulation with piecewise-constant rates."""
    E = rng.exponential()
    k = m.K
    n_obs = edges.size
    n_cap = np.rint(m.N).astype(int)
    xi = np.zeros(k, dtype=int)
    xi_path = np.zeros((n_obs, k))
    H_path = np.zeros(n_obs)
    h_acc = 0.0
    T_d = np.inf
    for j in range(n_obs - 1):
        t_cur = edges[j]
        t_end = edges[j + 1]
        mb = mbar[j]
        while True:
            rate_inf = m.lambda_s * (n_cap - xi)
            rate_dis = mb * xi
            total = rate_inf.sum() + rate_dis.sum()
            h_slope = float(m.lambda_d @ xi)
            if total <= 0:
                dt_seg = t_end - t_cur
                if (not np.isfinite(T_d) and h_slope > 0
                        and h_acc + h_slope * dt_seg >= E):
                    T_d = t_cur + (E - h_acc) / h_slope
                h_acc += h_slope * dt_seg
                break
            dt_event = rng.exponential(1.0 / total)
            dt_seg = min(dt_event, t_end - t_cur)
            if (not np.isfinite(T_d) and h_slope > 0
                    and h_acc + h_slope * dt_seg >= E):
                T_d = t_cur + (E - h_acc) / h_slope
            h_acc += h_slope * dt_seg
            if dt_event >= t_end - t_cur:
                break
            t_cur += dt_event
            rates = np.concatenate([rate_inf, rate_dis])
            r = rng.random() * total
            idx = int(np.searchsorted(np.cumsum(rates), r, side="right"))
            idx = min(idx, 2 * k - 1)
            if idx < k:
                xi[idx] += 1
            else:
                xi[idx - k] -= 1
            if np.any(xi < 0) or np.any(xi > n_cap):
                raise RuntimeError("simulation left the state space "
                                   f"(xi = {xi.tolist()})")
        xi_path[j + 1] = xi
        H_path[j + 1] = h_acc
    psi = -np.expm1(-H_path)
    return SamplePath(t=edges.copy(), xi=xi_path, H=H_path, psi=psi,
                      T_d=float(T_d))


def simulate_once(m: ModelSpec, control_schedule: np.ndarray | None,
                  cfg: SimConfig, run_index: int) -> SamplePath:
    """One sample path; deterministic given (base_seed, run_index).

    control_schedule None means uncontrolled (Mbar = 0), which uses the
    pure-birth sampler; an explicit schedule (even all zeros) runs the
    event-driven simulator.
    """
    edges, mbar = rate_schedule(m, control_schedule, cfg)
    rng = _rng_for_run(cfg, run_index)
    if control_schedule is None:
        return _uncontrolled_path(m, cfg, edges, rng)
    return _controlled_path(m, cfg, edges, mbar, rng)


def _run_block(m: ModelSpec, control_schedule, cfg: SimConfig,
               edges: np.ndarray, mbar: np.ndarray, start: int, stop: int):
    k = m.K
    n_obs = edges.size
    xi = np.zeros((stop - start, n_obs, k))
    H = np.zeros((stop - start, n_obs))
    Td = np.zeros(stop - start)
    for r in range(start, stop):
        rng = _rng_for_run(cfg, r)
        if control_schedule is None:
            path = _uncontrolled_path(m, cfg, edges, rng)
        else:
            path = _controlled_path(m, cfg, edges, mbar, rng)
        xi[r - start] = path.xi
        H[r - start] = path.H
        Td[r - start] = path.T_d
    return start, xi, H, Td


def monte_carlo(m: ModelSpec, control_schedule: np.ndarray | None,
                cfg: SimConfig, workers: int = 1) -> SimEnsemble:
    """Aggregate cfg.runs independent paths into a SimEnsemble.

    Row r of every per-run array is the path with run_index r, so results
    are independent of execution order and of the worker count.
    """
    edges, mbar = rate_schedule(m, control_schedule, cfg)
    runs = cfg.runs
    n_obs = edges.size
    xi_runs = np.zeros((runs, n_obs, m.K))
    H_runs = np.zeros((runs, n_obs))
    Td = np.zeros(runs)
    if workers <= 1 or runs < 4:
        _, xi_runs, H_runs, Td = _run_block(
            m, control_schedule, cfg, edges, mbar, 0, runs)
    else:
        from concurrent.futures import ProcessPoolExecutor

        bounds = np.linspace(0, runs, workers + 1).astype(int)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futs = [pool.submit(_run_block, m, control_schedule, cfg,
                                edges, mbar, int(a), int(b))
                    for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
            for fut in futs:
                start, xi_b, H_b, Td_b = fut.result()
                stop = start + Td_b.size
                xi_runs[start:stop] = xi_b
                H_runs[start:stop] = H_b
                Td[start:stop] = Td_b
    mean_xi = xi_runs.mean(axis=0)
    psi_runs = -np.expm1(-H_runs)
    mean_psi = psi_runs.mean(axis=0)
    if runs > 1:
        se_xi = xi_runs.std(axis=0, ddof=1) / np.sqrt(runs)
        se_psi = psi_runs.std(axis=0, ddof=1) / np.sqrt(runs)
    else:
        se_xi = np.zeros_like(mean_xi)
        se_psi = np.zeros_like(mean_psi)
    cdf = (Td[None, :] <= edges[:, None]).mean(axis=1)
    ode_X, ode_Xhat, D = mean_field_reference(m, mbar, edges)
    return SimEnsemble(t=edges, mean_xi=mean_xi, se_xi=se_xi,
                       mean_psi=mean_psi, se_psi=se_psi, empirical_cdf=cdf,
                       T_d=Td, H=H_runs, ode_X=ode_X, ode_Xhat=ode_Xhat,
                       D=D, runs=runs, config=cfg)


@dataclass
class JensenReport:
    """Per-time comparison of the sampled E[Psi(t)] against the bound D(t).

    difference = mean_psi - D; flags holds -1/0/+1 where the difference
    exceeds 3 standard errors in either direction.
    """

    t: np.ndarray
    mean_psi: np.ndarray
    D: np.ndarray
    difference: np.ndarray
    se: np.ndarray
    flags: np.ndarray

    @property
    def flagged(self) -> list[tuple[float, int]]:
        idx = np.flatnonzero(self.flags != 0)
        return [(float(self.t[j]), int(self.flags[j])) for j in idx]


def jensen_report(ensemble: SimEnsemble, D_curve: np.ndarray) -> JensenReport:
    """Tabulate mean Psi against D on the shared grid.

    Raises on a grid-size mismatch; flags entries where |mean_psi - D|
    exceeds 3 standard errors, signed by the direction of the excess.
    """
    D = np.asarray(D_curve, dtype=float)
    if D.shape != ensemble.mean_psi.shape:
        raise ValueError(
            f"grid mismatch: D_curve has shape {D.shape}, ensemble grid "
            f"has shape {ensemble.mean_psi.shape}")
    diff = ensemble.mean_psi - D
    thresh = 3.0 * ensemble.se_psi
    flags = np.zeros(diff.size, dtype=int)
    exceed = np.abs(diff) > thresh
    flags[exceed] = np.sign(diff[exceed]).astype(int)
    return JensenReport(t=ensemble.t.copy(), mean_psi=ensemble.mean_psi.copy(),
                        D=D.copy(), difference=diff, se=ensemble.se_psi.copy(),
                        flags=flags)
