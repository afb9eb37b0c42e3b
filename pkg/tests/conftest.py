"""Shared fixtures: cached scenario solves and a tmp scenario writer."""

from __future__ import annotations

import json

import pytest

from dtn_lqr import load_scenario, rollout, scaled_problem, solve_ct

_SOLVE_CACHE = {}


def solve_bundled(name: str, n_steps: int = 4096):
    """Solve a bundled scenario once per session (scaled units).

    Returns (scenario, model, weights, tau, solution, trajectory).
    """
    key = (name, n_steps)
    if key not in _SOLVE_CACHE:
        sc = load_scenario(name)
        m, cw, tau = scaled_problem(sc)
        sol = solve_ct(m, cw, tau, n_steps=n_steps)
        traj = rollout(m, cw, sol)
        _SOLVE_CACHE[key] = (sc, m, cw, tau, sol, traj)
    return _SOLVE_CACHE[key]


@pytest.fixture(scope="session")
def fig2_005_run():
    return solve_bundled("fig2_c4_005")


@pytest.fixture(scope="session")
def fig2_05_run():
    return solve_bundled("fig2_c4_05")


@pytest.fixture
def scenario_file(tmp_path):
    """Write a scenario payload to a tmp JSON file, return its path."""

    def _write(payload, name="case.json"):
        p = tmp_path / name
        p.write_text(json.dumps(payload, indent=1), encoding="utf-8")
        return str(p)

    return _write


def small_scenario_payload(**overrides):
    """A fast K=1 scenario for CLI and parser tests."""
    payload = {
        "name": "small",
        "model": {"lambda_s": [0.5], "lambda_d": [0.5], "N": [20.0]},
        "weights": {"c1": 0.5, "c3": 1.0, "c4": 0.5, "u_bar": [0.0],
                    "q": [4.0]},
        "horizon": 2.0,
        "grids": {"ode_step": 2.0 / 512},
        "sim": {"runs": 64, "base_seed": 99, "rate_grid": 0.25},
    }
    payload.update(overrides)
    return payload
