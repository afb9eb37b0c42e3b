"""Definiteness analysis of the running-cost weight matrix R.

R := -c1 Lambda_d Lambda_d^T + c3 I + c4 Lambda_out^2 appears in the
terminal cost of the finite-horizon problem. The cost is bounded below
(and the Riccati backward pass is guaranteed to exist on any horizon) when
R is positive semi-definite; indefinite R can still integrate on short
horizons but hits a conjugate point at |x*| ~ (3/|min eig|)^(1/3) time
units before the terminal time, so definiteness is reported as a warning,
never a hard error.

Core routines take explicit (lambda_d, lambda_out) vectors because the
weight analysis is meaningful for any positive diagonal decay matrix;
wrappers taking a ModelSpec tie both vectors to m.lambda_d.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import CostWeights, ModelSpec

__all__ = [
    "FeasibilityReport",
    "r_matrix",
    "build_R",
    "is_positive_definite",
    "is_positive_semidefinite",
    "sufficient_c4_bound",
    "sufficient_c4_bound_vectors",
    "min_c4_ratio",
    "min_c4_ratio_vectors",
    "frontier_sweep",
    "analyze",
]

PD_TOL = 1e-10  # relative to the largest |eigenvalue|


@dataclass
class FeasibilityReport:
    """Definiteness verdict for one weight combination."""

    R: np.ndarray
    eigenvalues: np.ndarray  # ascending
    is_pd: bool
    is_psd: bool
    sufficient_bound: float
    alpha_bound: float
    min_c4_ratio: float | None = None


def r_matrix(c1: float, c3: float, c4: float, lambda_d, lambda_out) -> np.ndarray:
    """R = -c1 Ld Ld^T + c3 I + c4 diag(lambda_out)^2, symmetric exactly."""
    ld = np.asarray(lambda_d, dtype=float)
    lo = np.asarray(lambda_out, dtype=float)
    R = -c1 * np.outer(ld, ld) + c3 * np.eye(ld.size) + c4 * np.diag(lo * lo)
    return 0.5 * (R + R.T)


def build_R(cw: CostWeights, m: ModelSpec) -> np.ndarray:
    """Weight matrix for a model where Lambda_out = diag(lambda_d)."""
    return r_matrix(cw.c1, cw.c3, cw.c4, m.lambda_d, m.lambda_d)


def _eig_verdict(R: np.ndarray, tol: float, strict: bool) -> tuple[bool, np.ndarray]:
    eigs = np.linalg.eigvalsh(np.asarray(R, dtype=float))
    scale = max(np.max(np.abs(eigs)), 1.0)
    thresh = tol * scale
    if strict:
        return bool(np.all(eigs > thresh)), eigs
    return bool(np.all(eigs >= -thresh)), eigs


def is_positive_definite(R, tol: float = PD_TOL) -> tuple[bool, np.ndarray]:
    """(verdict, ascending eigenvalues); tolerance relative to max |eig|."""
    return _eig_verdict(R, tol, strict=True)


def is_positive_semidefinite(R, tol: float = PD_TOL) -> tuple[bool, np.ndarray]:
    return _eig_verdict(R, tol, strict=False)


def sufficient_c4_bound_vectors(c1: float, c3: float, lambda_d,
                                lambda_out) -> tuple[float, float]:
    """Thresholds on c4 from testing R along the Lambda_d direction.

    Returns (generalized, alpha_form):
      generalized = (c1 ||Ld||^2 - c3) ||Ld||^2 / ||Lo Ld||^2,
      alpha_form  = alpha (c1 - c3) with alpha = sum ld_i^2 / sum ld_i^4.
    Testing v = Ld in v^T R v > 0 makes the generalized threshold
    necessary for R > 0 whenever it is positive; it is also sufficient
    (equals the true PD frontier) exactly when Ld is an eigenvector of
    Lo^2, e.g. Lambda_out with uniform entries or K = 1. The alpha form
    is the same quantity specialized to Lambda_out = diag(lambda_d) AND
    ||Ld|| = 1; off the normalized manifold it can report a negative
    threshold for an indefinite R, so the generalized form is the one the
    analysis trusts.
    """
    ld = np.asarray(lambda_d, dtype=float)
    lo = np.asarray(lambda_out, dtype=float)
    lold = lo * ld
    n2 = float(ld @ ld)
    d2 = float(lold @ lold)
    if d2 <= 0:
        raise ValueError("||Lambda_out Lambda_d|| must be positive")
    generalized = (c1 * n2 - c3) * n2 / d2
    p4 = float(np.sum(ld ** 4))
    alpha = n2 / p4 if p4 > 0 else np.inf
    return generalized, alpha * (c1 - c3)


def sufficient_c4_bound(cw: CostWeights, m: ModelSpec) -> tuple[float, float]:
    return sufficient_c4_bound_vectors(cw.c1, cw.c3, m.lambda_d, m.lambda_d)


def min_c4_ratio_vectors(c1_over_c3: float, lambda_d, lambda_out,
                         tol: float = 1e-6) -> float:
    """Smallest c4/c3 making R positive definite, by bisection.

    Works at c3 = 1, c1 = c1_over_c3; the frontier scales with c3. The
    bracket upper end starts at the direction bound and doubles
    geometrically (at most 60 times) until the predicate holds.
    """
    if c1_over_c3 < 0:
        raise ValueError("c1_over_c3 must be nonnegative")
    ld = np.asarray(lambda_d, dtype=float)
    lo = np.asarray(lambda_out, dtype=float)

    def pd_at(c4: float) -> bool:
        ok, _ = is_positive_definite(r_matrix(c1_over_c3, 1.0, c4, ld, lo))
        return ok

    if pd_at(0.0):
        return 0.0
    bound, _ = sufficient_c4_bound_vectors(c1_over_c3, 1.0, ld, lo)
    hi = max(bound, tol)
    doublings = 0
    while not pd_at(hi):
        hi *= 2.0
        doublings += 1
        if doublings > 60:
            raise RuntimeError(
                "no positive-definite c4 found below bracket "
                f"{hi:.3e} after 60 doublings")
    lo_br = 0.0
    while hi - lo_br > tol:
        mid = 0.5 * (lo_br + hi)
        if pd_at(mid):
            hi = mid
        else:
            lo_br = mid
    return 0.5 * (lo_br + hi)


def min_c4_ratio(c1_over_c3: float, m: ModelSpec, tol: float = 1e-6) -> float:
    return min_c4_ratio_vectors(c1_over_c3, m.lambda_d, m.lambda_d, tol)


def frontier_sweep(ratios, lambda_d, lambda_out,
                   tol: float = 1e-6) -> np.ndarray:
    """Rows (c1_over_c3, min_c4_over_c3, sufficient_bound) per ratio."""
    rows = []
    for r in np.asarray(ratios, dtype=float):
        mc4 = min_c4_ratio_vectors(float(r), lambda_d, lambda_out, tol)
        bound, _ = sufficient_c4_bound_vectors(float(r), 1.0, lambda_d, lambda_out)
        rows.append((float(r), mc4, bound))
    return np.asarray(rows)


def analyze(cw: CostWeights, m: ModelSpec, lambda_d=None, lambda_out=None,
            with_frontier: bool = False) -> FeasibilityReport:
    """Full report for one weight combination.

    lambda_d/lambda_out override the model vectors for decoupled analysis
    (both must be given together or neither).
    """
    if (lambda_d is None) != (lambda_out is None):
        raise ValueError("lambda_d and lambda_out must be overridden together")
    ld = m.lambda_d if lambda_d is None else np.asarray(lambda_d, dtype=float)
    lo = m.lambda_d if lambda_out is None else np.asarray(lambda_out, dtype=float)
    R = r_matrix(cw.c1, cw.c3, cw.c4, ld, lo)
    is_pd, eigs = is_positive_definite(R)
    is_psd, _ = is_positive_semidefinite(R)
    bound, alpha_bound = sufficient_c4_bound_vectors(cw.c1, cw.c3, ld, lo)
    mc4 = None
    if with_frontier and cw.c3 > 0:
        mc4 = min_c4_ratio_vectors(cw.c1 / cw.c3, ld, lo)
    return FeasibilityReport(R=R, eigenvalues=eigs, is_pd=is_pd, is_psd=is_psd,
                             sufficient_bound=bound, alpha_bound=alpha_bound,
                             min_c4_ratio=mc4)
