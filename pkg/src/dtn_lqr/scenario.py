"""Scenario files: JSON schema, validation, and unit handling.

A scenario is a single JSON object:

    {
      "name": "...",                          (optional)
      "model":   {"lambda_s": [...], "lambda_d": [...], "N": [...]},
      "weights": {"c1": ..., "c3": ..., "c4": ..., "u_bar": [...],
                  "c2": 1.0, "q": [...], "time_unit_s": 1.0},
      "horizon": <seconds>,
      "grids":   {"ode_step": ..., "control_step": ..., "Delta": ...},
      "sim":     {"runs": ..., "base_seed": ..., "rate_grid": ...,
                  "horizon": ..., "clamp_negative_timer": false},
      "outputs": {"directory": "...", "prefix": "..."},
      "feasibility": {"lambda_d": [...], "lambda_out": [...]}
    }

model, weights and horizon are required; everything else is optional.
Unknown keys anywhere are rejected by name. Dynamics-layer quantities
(rates, horizon, grid steps, u_bar) are in SI seconds; the cost weights
c1/c3/c4/q are expressed per weights.time_unit_s seconds of time, and
scaled_problem() nondimensionalizes the model into that unit before
solving (lambda -> lambda T, tau -> tau/T, u_bar -> u_bar T, q -> q T^2).
The optional feasibility section decouples (Lambda_d, Lambda_out) from the
model for the frontier commands, which need direction/decay pairs that the
two-hop model itself ties together.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from .model import ControlledTrajectory, CostWeights, ModelSpec
from .mc_sim import SimConfig

__all__ = [
    "ScenarioError",
    "GridSettings",
    "SimSettings",
    "OutputSettings",
    "Scenario",
    "parse_scenario",
    "parse_scenario_text",
    "load_scenario",
    "bundled_scenario_names",
    "scaled_problem",
    "trajectory_to_si",
]

EXIT_MISSING_FILE = 2
EXIT_SCHEMA = 3


class ScenarioError(Exception):
    """Scenario ingestion failure carrying the CLI exit code."""

    def __init__(self, message: str, exit_code: int = EXIT_SCHEMA):
        super().__init__(message)
        self.exit_code = exit_code


@dataclass(frozen=True)
class GridSettings:
    """Raw step sizes in seconds; None means use the documented default."""

    ode_step: float | None = None
    control_step: float | None = None
    Delta: float | None = None


@dataclass(frozen=True)
class SimSettings:
    runs: int = 1000
    base_seed: int = 12345
    rate_grid: float | None = None       # default: control_step
    horizon: float | None = None         # default: scenario horizon
    clamp_negative_timer: bool = False


@dataclass(frozen=True)
class OutputSettings:
    directory: str | None = None
    prefix: str | None = None


@dataclass(frozen=True)
class Scenario:
    name: str
    model: ModelSpec
    weights: CostWeights
    horizon: float
    grids: GridSettings = field(default_factory=GridSettings)
    sim: SimSettings = field(default_factory=SimSettings)
    outputs: OutputSettings = field(default_factory=OutputSettings)
    feas_lambda_d: np.ndarray | None = None
    feas_lambda_out: np.ndarray | None = None
    source: str = "<memory>"

    def resolved_ode_step(self) -> float:
        return self.grids.ode_step or self.horizon / 4096.0

    def resolved_control_step(self) -> float:
        return self.grids.control_step or self.horizon / 256.0

    def resolved_delta(self) -> float:
        return self.grids.Delta or self.horizon / 1024.0

    def sim_config(self, runs: int | None = None,
                   base_seed: int | None = None) -> SimConfig:
        """SimConfig with CLI overrides applied and defaults resolved."""
        return SimConfig(
            runs=runs if runs is not None else self.sim.runs,
            base_seed=base_seed if base_seed is not None else self.sim.base_seed,
            rate_grid=(self.sim.rate_grid if self.sim.rate_grid is not None
                       else self.resolved_control_step()),
            horizon=(self.sim.horizon if self.sim.horizon is not None
                     else self.horizon),
            clamp_negative_timer=self.sim.clamp_negative_timer)


def _schema_error(msg: str) -> ScenarioError:
    return ScenarioError(msg, EXIT_SCHEMA)


def _check_object(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise _schema_error(f"{path}: expected a JSON object, "
                            f"got {type(value).__name__}")
    return value


def _check_keys(obj: dict, path: str, required: tuple, optional: tuple):
    unknown = sorted(set(obj) - set(required) - set(optional))
    if unknown:
        raise _schema_error(f"unknown keys in {path}: {', '.join(unknown)}")
    missing = sorted(set(required) - set(obj))
    if missing:
        raise _schema_error(
            f"{path}: missing required fields: {', '.join(missing)}")


def _number(obj: dict, key: str, path: str, *, positive=False,
            nonnegative=False, default=None):
    if key not in obj:
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise _schema_error(f"{path}.{key}: expected a number")
    v = float(v)
    if not np.isfinite(v):
        raise _schema_error(f"{path}.{key}: must be finite")
    if positive and v <= 0:
        raise _schema_error(f"{path}.{key}: must be positive")
    if nonnegative and v < 0:
        raise _schema_error(f"{path}.{key}: must be nonnegative")
    return v


def _integer(obj: dict, key: str, path: str, *, minimum=None, default=None):
    if key not in obj:
        return default
    v = obj[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise _schema_error(f"{path}.{key}: expected an integer")
    if minimum is not None and v < minimum:
        raise _schema_error(f"{path}.{key}: must be >= {minimum}")
    return int(v)


def _boolean(obj: dict, key: str, path: str, default=False):
    if key not in obj:
        return default
    v = obj[key]
    if not isinstance(v, bool):
        raise _schema_error(f"{path}.{key}: expected true or false")
    return v


def _string(obj: dict, key: str, path: str, default=None):
    if key not in obj:
        return default
    v = obj[key]
    if not isinstance(v, str):
        raise _schema_error(f"{path}.{key}: expected a string")
    return v


def _vector(obj: dict, key: str, path: str, *, length=None, positive=False,
            nonnegative=False, nonpositive=False, required=True):
    if key not in obj:
        if required:
            raise _schema_error(f"{path}: missing required fields: {key}")
        return None
    v = obj[key]
    if not isinstance(v, list) or not v:
        raise _schema_error(f"{path}.{key}: expected a non-empty array "
                            "of numbers")
    for j, entry in enumerate(v):
        if isinstance(entry, bool) or not isinstance(entry, (int, float)):
            raise _schema_error(f"{path}.{key}[{j}]: expected a number")
        if not np.isfinite(float(entry)):
            raise _schema_error(f"{path}.{key}[{j}]: must be finite")
        if positive and entry <= 0:
            raise _schema_error(f"{path}.{key}[{j}]: must be positive")
        if nonnegative and entry < 0:
            raise _schema_error(f"{path}.{key}[{j}]: must be nonnegative")
        if nonpositive and entry > 0:
            raise _schema_error(f"{path}.{key}[{j}]: must be nonpositive")
    arr = np.asarray(v, dtype=float)
    if length is not None and arr.size != length:
        raise _schema_error(f"{path}.{key}: expected length {length}, "
                            f"got {arr.size}")
    return arr


def _parse_model(obj: dict) -> ModelSpec:
    _check_keys(obj, "model", ("lambda_s", "lambda_d", "N"), ())
    lam_s = _vector(obj, "lambda_s", "model", nonnegative=True)
    k = lam_s.size
    lam_d = _vector(obj, "lambda_d", "model", length=k, positive=True)
    n = _vector(obj, "N", "model", length=k, positive=True)
    try:
        return ModelSpec(lambda_s=lam_s, lambda_d=lam_d, N=n)
    except ValueError as exc:
        raise _schema_error(f"model: {exc}") from exc


def _parse_weights(obj: dict, k: int) -> CostWeights:
    _check_keys(obj, "weights", ("c1", "c3", "c4", "u_bar"),
                ("c2", "q", "time_unit_s"))
    c1 = _number(obj, "c1", "weights", nonnegative=True)
    c3 = _number(obj, "c3", "weights", nonnegative=True)
    c4 = _number(obj, "c4", "weights", nonnegative=True)
    for key, v in (("c1", c1), ("c3", c3), ("c4", c4)):
        if v is None:
            raise _schema_error(f"weights: missing required fields: {key}")
    c2 = _number(obj, "c2", "weights", default=1.0)
    if c2 != 1.0:
        raise _schema_error("weights.c2: fixed normalization, must be 1.0")
    u_bar = _vector(obj, "u_bar", "weights", length=k, nonpositive=True)
    q = _vector(obj, "q", "weights", length=k, positive=True, required=False)
    tu = _number(obj, "time_unit_s", "weights", positive=True, default=1.0)
    try:
        return CostWeights(c1=c1, c3=c3, c4=c4, u_bar=u_bar, c2=c2, q=q,
                           time_unit=tu)
    except ValueError as exc:
        raise _schema_error(f"weights: {exc}") from exc


def parse_scenario_text(text: str, source: str = "<memory>") -> Scenario:
    """Validate a scenario JSON document; raises ScenarioError."""
    try:
        root = json.loads(text)
    except json.JSONDecodeError as exc:
        raise _schema_error(f"{source}: invalid JSON: {exc}") from exc
    root = _check_object(root, "scenario")
    _check_keys(root, "scenario", ("model", "weights", "horizon"),
                ("name", "grids", "sim", "outputs", "feasibility"))
    model = _parse_model(_check_object(root["model"], "model"))
    weights = _parse_weights(_check_object(root["weights"], "weights"),
                             model.K)
    horizon = _number(root, "horizon", "scenario", positive=True)

    grids = GridSettings()
    if "grids" in root:
        g = _check_object(root["grids"], "grids")
        _check_keys(g, "grids", (), ("ode_step", "control_step", "Delta"))
        grids = GridSettings(
            ode_step=_number(g, "ode_step", "grids", positive=True),
            control_step=_number(g, "control_step", "grids", positive=True),
            Delta=_number(g, "Delta", "grids", positive=True))

    sim = SimSettings()
    if "sim" in root:
        s = _check_object(root["sim"], "sim")
        _check_keys(s, "sim", (), ("runs", "base_seed", "rate_grid",
                                   "horizon", "clamp_negative_timer"))
        sim = SimSettings(
            runs=_integer(s, "runs", "sim", minimum=1, default=1000),
            base_seed=_integer(s, "base_seed", "sim", minimum=0,
                               default=12345),
            rate_grid=_number(s, "rate_grid", "sim", positive=True),
            horizon=_number(s, "horizon", "sim", positive=True),
            clamp_negative_timer=_boolean(s, "clamp_negative_timer", "sim"))

    outputs = OutputSettings()
    if "outputs" in root:
        o = _check_object(root["outputs"], "outputs")
        _check_keys(o, "outputs", (), ("directory", "prefix"))
        outputs = OutputSettings(directory=_string(o, "directory", "outputs"),
                                 prefix=_string(o, "prefix", "outputs"))

    feas_d = feas_o = None
    if "feasibility" in root:
        f = _check_object(root["feasibility"], "feasibility")
        _check_keys(f, "feasibility", ("lambda_d", "lambda_out"), ())
        feas_d = _vector(f, "lambda_d", "feasibility")
        feas_o = _vector(f, "lambda_out", "feasibility",
                         length=feas_d.size, positive=True)
        if not np.any(feas_d):
            raise _schema_error("feasibility.lambda_d: must not be all zero")

    name = _string(root, "name", "scenario",
                   default=os.path.splitext(os.path.basename(source))[0])
    return Scenario(name=name, model=model, weights=weights, horizon=horizon,
                    grids=grids, sim=sim, outputs=outputs,
                    feas_lambda_d=feas_d, feas_lambda_out=feas_o,
                    source=source)


def parse_scenario(path: str) -> Scenario:
    """Load and validate a scenario file (missing file -> exit code 2)."""
    if not os.path.isfile(path):
        raise ScenarioError(f"scenario file not found: {path}",
                            EXIT_MISSING_FILE)
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_scenario_text(text, source=path)


def bundled_scenario_names() -> list[str]:
    """Names of the scenarios shipped inside the package."""
    pkg = resources.files("dtn_lqr").joinpath("scenarios")
    return sorted(p.name[:-5] for p in pkg.iterdir()
                  if p.name.endswith(".json"))


def load_scenario(name_or_path: str) -> Scenario:
    """Resolve a filesystem path or a bundled scenario name."""
    if os.path.isfile(name_or_path):
        return parse_scenario(name_or_path)
    base = name_or_path[:-5] if name_or_path.endswith(".json") \
        else name_or_path
    candidate = resources.files("dtn_lqr").joinpath("scenarios",
                                                    base + ".json")
    if candidate.is_file():
        return parse_scenario_text(candidate.read_text(encoding="utf-8"),
                                   source=f"bundled:{base}")
    raise ScenarioError(
        f"scenario file not found: {name_or_path} (bundled scenarios: "
        f"{', '.join(bundled_scenario_names())})", EXIT_MISSING_FILE)


def scaled_problem(sc: Scenario) -> tuple[ModelSpec, CostWeights, float]:
    """Nondimensionalize into the weights' time unit.

    Returns (model, weights, horizon) with rates per time_unit_s seconds,
    the horizon in those units, u_bar and q rescaled to match, and
    time_unit reset to 1 so downstream solvers never rescale twice.
    """
    T = sc.weights.time_unit
    m = sc.model.rescaled(T)
    q = sc.weights.q * T * T if sc.weights.q is not None else None
    cw = CostWeights(c1=sc.weights.c1, c3=sc.weights.c3, c4=sc.weights.c4,
                     u_bar=sc.weights.u_bar * T, c2=sc.weights.c2, q=q,
                     Q=sc.weights.Q, time_unit=1.0)
    return m, cw, sc.horizon / T


def trajectory_to_si(traj: ControlledTrajectory,
                     time_unit: float) -> ControlledTrajectory:
    """Map a trajectory solved in scaled units back to SI seconds.

    t and Xhat scale by T, controls by 1/T; X and D are unit-free. The
    cost stays in scaled units (the objective's natural system); the
    violation list is not carried over since its entries reference scaled
    quantities -- rerun check_constraints on the result if needed.
    """
    T = float(time_unit)
    return ControlledTrajectory(
        t=traj.t * T, X=traj.X.copy(), Xhat=traj.Xhat * T,
        u=traj.u / T, w=traj.w / T, D=traj.D.copy(), cost=traj.cost,
        violations=[])
