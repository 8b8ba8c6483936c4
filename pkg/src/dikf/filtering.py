"""Scalar-measurement iterated Kalman update.

One constraint at a time: relinearize the observation model around the
current iterate, recompute the gain from the entry covariance, and move the
mean. The covariance is updated once, after the inner loop settles, with the
gain and gradient of the final pass, then symmetrized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .constraints import (
    Prediction,
    SingularGeometryError,
    SparseJacobian,
    predict_coords,
    wrap_angle,
)
from .model import Constraint, ConstraintKind, CovarianceMatrix, SolveConfig, StateVector


class NumericalBreakdownError(RuntimeError):
    """The gain denominator lost positivity; the covariance is no longer PSD."""


@dataclass(frozen=True)
class UpdateOutcome:
    """Result of applying one scalar measurement."""

    state: StateVector
    covariance: CovarianceMatrix
    inner_iterations: int
    innovation: float  # measured minus predicted at entry (wrapped for dihedrals)
    skipped: bool


def _gain_parts(C: np.ndarray, indices: np.ndarray, values: np.ndarray, v: float):
    """Return (C @ H^T, H C H^T + v) using the sparse support of H."""
    u = C[:, indices] @ values
    den = float(values @ u[indices]) + v
    if den <= 0.0 or not math.isfinite(den):
        raise NumericalBreakdownError(
            f"gain denominator {den:.3e} is not positive; covariance lost PSD"
        )
    return u, den


def kalman_gain(C: CovarianceMatrix, H: SparseJacobian, v: float) -> np.ndarray:
    """Scalar-measurement gain vector C H^T / (H C H^T + v)."""
    if v <= 0:
        raise ValueError(f"measurement variance must be positive, got {v}")
    if H.indices.size and H.indices[-1] >= C.dim:
        raise ValueError("jacobian index out of range for the covariance dimension")
    u, den = _gain_parts(C.entries, H.indices, H.values, v)
    return u / den


def iterate_scalar_update(
    x: np.ndarray,
    C: np.ndarray,
    measure: Callable[[np.ndarray], Prediction],
    z: float,
    v: float,
    inner_tol: float,
    inner_max_iters: int,
    wrap: bool = False,
) -> tuple[int, float]:
    """Apply one scalar measurement in place and return (iterations, innovation).

    ``measure`` evaluates the observation model on a flat coordinate array.
    A SingularGeometryError from the entry evaluation propagates to the
    caller (the constraint should be skipped); one raised while relinearizing
    ends the loop at the last good iterate.

    The iteration count reports how many relinearizations actually moved the
    state: a pass that lands within ``inner_tol`` of the previous iterate
    only confirms convergence, so a linear measurement counts as one.
    """
    pred = measure(x)
    residual0 = z - pred.value
    if wrap:
        residual0 = wrap_angle(residual0)
    indices = pred.jacobian.indices
    x_entry = x.copy()
    entry_slice = x_entry[indices]

    passes = 0
    confirmed = False
    u = np.empty(0)
    den = v
    while True:
        values = pred.jacobian.values
        u, den = _gain_parts(C, indices, values, v)
        if passes == 0:
            innov = residual0
        else:
            # relinearized innovation: the measurement residual at the current
            # iterate, corrected back to the entry mean
            r = z - pred.value
            if wrap:
                r = wrap_angle(r)
            innov = r - float(values @ (entry_slice - x[indices]))
        x_new = x_entry + u * (innov / den)
        delta = float(np.max(np.abs(x_new - x)))
        x[:] = x_new
        passes += 1
        if delta < inner_tol:
            confirmed = passes > 1
            break
        if passes >= inner_max_iters:
            break
        try:
            pred = measure(x)
        except SingularGeometryError:
            # relinearization point went degenerate: keep the last good pass
            break

    # Covariance update with the final pass's gain: C - K H C is the rank-1
    # subtraction outer(u, u) / den because C is symmetric.
    C -= np.outer(u, u / den)
    C += C.T
    C *= 0.5

    iterations = passes - 1 if confirmed else passes
    return max(iterations, 1), residual0


def apply_constraint_in_place(
    x: np.ndarray, C: np.ndarray, c: Constraint, cfg: SolveConfig
) -> tuple[int, float, bool]:
    """Allocation-light variant of ``apply_constraint`` mutating raw arrays.

    Returns (inner_iterations, entry innovation, skipped). Skips, leaving the
    arrays untouched, when the constraint geometry is singular at entry.
    """
    try:
        iterations, innovation = iterate_scalar_update(
            x,
            C,
            lambda coords: predict_coords(c, coords),
            c.measured,
            c.variance,
            cfg.inner_tol,
            cfg.inner_max_iters,
            wrap=c.kind is ConstraintKind.DIHEDRAL,
        )
    except SingularGeometryError:
        return 0, math.nan, True
    return iterations, innovation, False


def apply_constraint(
    x: StateVector, C: CovarianceMatrix, c: Constraint, cfg: SolveConfig
) -> UpdateOutcome:
    """Fold one constraint into (mean, covariance) and return the new pair.

    The inputs are not modified. Singular geometry at entry yields a skipped
    outcome carrying the unchanged inputs.
    """
    if x.n_atoms != C.n_atoms:
        raise ValueError(
            f"state has {x.n_atoms} atoms but covariance has {C.n_atoms}"
        )
    if max(c.atoms) >= x.n_atoms:
        raise ValueError(
            f"constraint atoms {c.atoms} out of range for {x.n_atoms} atoms"
        )
    x_arr = x.coords.copy()
    C_arr = C.entries.copy()
    iterations, innovation, skipped = apply_constraint_in_place(x_arr, C_arr, c, cfg)
    return UpdateOutcome(
        state=StateVector(x_arr, x.n_atoms),
        covariance=CovarianceMatrix(C_arr, C.n_atoms),
        inner_iterations=iterations,
        innovation=innovation,
        skipped=skipped,
    )
