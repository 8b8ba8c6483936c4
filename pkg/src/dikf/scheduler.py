"""Outer estimation loop: serial constraint cycles with covariance reheating.

Every cycle feeds each constraint once through the scalar Kalman update.
If the standardized errors at the end of the cycle do not meet the stopping
test, the covariance is reset to its initial value ("reheated") and the
constraints are reintroduced in a fresh order, by default worst error first.
The best state seen across cycles, judged by average error, is returned.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .constraints import SingularGeometryError, standardized_error
from .evaluate import superpose_rmsd
from .filtering import NumericalBreakdownError, apply_constraint_in_place
from .model import (
    Constraint,
    ConstraintKind,
    CovarianceMatrix,
    CycleReport,
    OrderingStrategy,
    SolveConfig,
    StateVector,
    init_covariance,
    init_state,
)

# Seed-stream tag separating the solver's randomness from dataset generation
# seeded with the same integer.
_SOLVE_STREAM = 0x50C7E

UpdateHook = Callable[[int, Constraint, np.ndarray, np.ndarray], None]


@dataclass
class Solution:
    """Best state found by ``solve``, with the full per-cycle trace."""

    state: StateVector
    covariance: CovarianceMatrix
    trace: list[CycleReport]
    per_constraint_errors: list[tuple[int, float]]  # (constraint id, signed SD)
    converged: bool
    cycles_run: int


def order_constraints(
    constraints: Sequence[Constraint],
    errors: Sequence[float],
    strategy: OrderingStrategy,
    rng: np.random.Generator | None = None,
) -> list[int]:
    """Permutation of positions for the next cycle.

    ``errors`` are the standardized errors aligned with ``constraints``;
    skipped constraints carry ``inf`` so the sorted strategy feeds them
    first. Ties break by ascending constraint id.
    """
    if len(errors) != len(constraints):
        raise ValueError(
            f"got {len(errors)} errors for {len(constraints)} constraints"
        )
    n = len(constraints)
    if strategy is OrderingStrategy.FIXED:
        return list(range(n))
    if strategy is OrderingStrategy.RANDOM:
        if rng is None:
            raise ValueError("random ordering needs a generator")
        return [int(p) for p in rng.permutation(n)]
    return sorted(range(n), key=lambda p: (-abs(errors[p]), constraints[p].id))


def check_stop(avg_error: float, max_error: float, cfg: SolveConfig) -> bool:
    """Stopping test: average OR maximum standardized error is low enough."""
    return avg_error <= cfg.avg_stop or max_error <= cfg.max_stop


def _cycle_in_place(
    x: np.ndarray,
    C: np.ndarray,
    ordered: Sequence[Constraint],
    cfg: SolveConfig,
    n_atoms: int,
    on_update: UpdateHook | None = None,
) -> tuple[list[float], int]:
    """One serial pass over ``ordered``, mutating x and C.

    Returns the end-of-cycle standardized errors (aligned with ``ordered``,
    inf where the geometry is singular) and the number of skipped updates.
    """
    skipped = 0
    for pos, c in enumerate(ordered):
        _, _, skip = apply_constraint_in_place(x, C, c, cfg)
        skipped += skip
        if on_update is not None:
            on_update(pos, c, x, C)
    state = StateVector(x, n_atoms)  # shares the array; read-only use below
    errors = []
    for c in ordered:
        try:
            errors.append(standardized_error(c, state))
        except SingularGeometryError:
            errors.append(math.inf)
    return errors, skipped


def run_cycle(
    x: StateVector,
    C: CovarianceMatrix,
    constraints: Sequence[Constraint],
    cfg: SolveConfig,
    on_update: UpdateHook | None = None,
) -> tuple[StateVector, CovarianceMatrix, list[float], int]:
    """Apply every constraint once, functionally.

    Returns (new state, new covariance, end-of-cycle standardized errors,
    skipped count). The inputs are left untouched.
    """
    if x.n_atoms != C.n_atoms:
        raise ValueError(f"state has {x.n_atoms} atoms but covariance has {C.n_atoms}")
    x_arr = x.coords.copy()
    C_arr = C.entries.copy()
    errors, skipped = _cycle_in_place(x_arr, C_arr, constraints, cfg, x.n_atoms, on_update)
    return (
        StateVector(x_arr, x.n_atoms),
        CovarianceMatrix(C_arr, C.n_atoms),
        errors,
        skipped,
    )


def _error_summary(errors: Sequence[float]) -> tuple[float, float]:
    if not errors:
        return 0.0, 0.0
    magnitudes = [abs(e) for e in errors]
    return float(np.mean(magnitudes)), float(max(magnitudes))


def solve(
    dataset,
    cfg: SolveConfig,
    target: np.ndarray | None = None,
    initial_state: StateVector | None = None,
    on_update: UpdateHook | None = None,
) -> Solution:
    """Estimate coordinates and covariance from a constraint dataset.

    ``target`` (an (N, 3) array) is only used to report per-cycle RMSD; it
    defaults to the dataset's own target when one is embedded. An explicit
    ``initial_state`` overrides the seeded random initialization.

    Raises NumericalBreakdownError with the partial trace attached (as the
    ``partial_trace`` attribute) if an update loses positive definiteness.
    """
    constraints = list(dataset.constraints)
    n_atoms = dataset.n_atoms
    if initial_state is not None and initial_state.n_atoms != n_atoms:
        raise ValueError(
            f"initial state has {initial_state.n_atoms} atoms, dataset has {n_atoms}"
        )
    if target is None and dataset.target is not None:
        target = dataset.target
    target_pts = None
    if target is not None:
        target_pts = np.asarray(target, dtype=np.float64).reshape(n_atoms, 3)
    # Distance-only data cannot fix chirality, so RMSD may align a mirror
    # image; any dihedral pins handedness.
    allow_reflection = not any(c.kind is ConstraintKind.DIHEDRAL for c in constraints)

    init_ss, order_ss = np.random.SeedSequence([cfg.seed, _SOLVE_STREAM]).spawn(2)
    if initial_state is not None:
        x = initial_state.coords.copy()
    else:
        x = init_state(n_atoms, cfg.init_coord_range, init_ss).coords
    C0 = init_covariance(n_atoms, cfg.init_variance).entries
    C = C0.copy()
    order_rng = np.random.default_rng(order_ss)

    ordered = constraints
    trace: list[CycleReport] = []
    best_avg = math.inf
    best_x = x.copy()
    best_C = C.copy()
    best_errors: list[tuple[int, float]] = []
    converged = False

    for cycle in range(1, cfg.max_outer_cycles + 1):
        t0 = time.perf_counter()
        hook = None
        if on_update is not None:
            hook = lambda pos, c, xa, Ca: on_update(cycle, c, xa, Ca)
        try:
            errors, _ = _cycle_in_place(x, C, ordered, cfg, n_atoms, hook)
        except NumericalBreakdownError as err:
            err.partial_trace = trace
            err.cycle = cycle
            raise
        avg_error, max_error = _error_summary(errors)
        rmsd = None
        if target_pts is not None:
            rmsd = superpose_rmsd(
                x.reshape(n_atoms, 3), target_pts, allow_reflection=allow_reflection
            ).rmsd
        trace.append(
            CycleReport(cycle, avg_error, max_error, rmsd, time.perf_counter() - t0)
        )
        if avg_error < best_avg:
            best_avg = avg_error
            best_x = x.copy()
            best_C = C.copy()
            best_errors = sorted(
                (c.id, e) for c, e in zip(ordered, errors)
            )
        if check_stop(avg_error, max_error, cfg):
            converged = True
            break
        if cycle < cfg.max_outer_cycles:
            C[:] = C0  # reheat: every entry back to its initial value
            perm = order_constraints(ordered, errors, cfg.ordering, order_rng)
            ordered = [ordered[p] for p in perm]

    return Solution(
        state=StateVector(best_x, n_atoms),
        covariance=CovarianceMatrix(best_C, n_atoms),
        trace=trace,
        per_constraint_errors=best_errors,
        converged=converged,
        cycles_run=len(trace),
    )
