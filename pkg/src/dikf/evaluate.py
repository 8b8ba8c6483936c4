"""Quality measures for an estimate: error statistics, RMSD after optimal
superposition, inter-atom covariance map, and per-atom uncertainty ellipsoids.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .constraints import SingularGeometryError, standardized_error
from .filtering import NumericalBreakdownError
from .model import Constraint, CovarianceMatrix, StateVector


@dataclass(frozen=True)
class ErrorStats:
    """Summary of |standardized error| over a constraint set."""

    avg: float
    max: float
    histogram: list[tuple[float, int]]  # (bin lower edge in SD, count)
    bin_width: float
    n_skipped: int  # constraints whose geometry was singular at the estimate


@dataclass(frozen=True)
class Superposition:
    """Rigid transform mapping an estimate onto a target.

    A point p aligns as ``rotation @ p + translation``. ``reflected`` marks
    an improper transform (determinant -1), only possible when reflection
    was allowed.
    """

    rotation: np.ndarray
    translation: np.ndarray
    rmsd: float
    reflected: bool


@dataclass(frozen=True)
class Ellipsoid:
    """Per-atom confidence ellipsoid at some number of standard deviations.

    ``axes`` rows are unit direction vectors paired with ``semi_axes``,
    longest first.
    """

    center: np.ndarray
    semi_axes: np.ndarray
    axes: np.ndarray


def error_stats(
    constraints: Sequence[Constraint], x: StateVector, bin_width: float = 0.5
) -> ErrorStats:
    """Average, maximum and histogram of |standardized error| at ``x``.

    Constraints that cannot be evaluated (singular geometry) are excluded
    from the statistics and counted in ``n_skipped``.
    """
    if bin_width <= 0:
        raise ValueError(f"bin_width must be positive, got {bin_width}")
    magnitudes = []
    skipped = 0
    for c in constraints:
        try:
            magnitudes.append(abs(standardized_error(c, x)))
        except SingularGeometryError:
            skipped += 1
    if not magnitudes:
        return ErrorStats(0.0, 0.0, [], bin_width, skipped)
    mags = np.array(magnitudes)
    top = int(mags.max() // bin_width)
    counts = np.bincount((mags // bin_width).astype(int), minlength=top + 1)
    histogram = [(i * bin_width, int(n)) for i, n in enumerate(counts)]
    return ErrorStats(float(mags.mean()), float(mags.max()), histogram, bin_width, skipped)


def superpose_rmsd(
    estimate: np.ndarray, target: np.ndarray, allow_reflection: bool = True
) -> Superposition:
    """Least-squares rigid superposition of ``estimate`` onto ``target``.

    Both inputs are (N, 3) with matching atom order. With
    ``allow_reflection`` the mirror image is also tried and the better fit
    returned, which is the right default for distance-only data where
    chirality is unobservable.
    """
    P = np.asarray(estimate, dtype=np.float64)
    Q = np.asarray(target, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != 3 or P.shape != Q.shape:
        raise ValueError(f"expected matching (N, 3) arrays, got {P.shape} and {Q.shape}")
    n = P.shape[0]
    if n < 3:
        raise ValueError(f"superposition needs at least 3 atoms, got {n}")
    cp = P.mean(axis=0)
    cq = Q.mean(axis=0)
    Pc = P - cp
    Qc = Q - cq
    if np.linalg.matrix_rank(Pc) < 2 or np.linalg.matrix_rank(Qc) < 2:
        raise ValueError("superposition is ill-posed for collinear configurations")

    H = Pc.T @ Qc
    U, _, Vt = np.linalg.svd(H)
    sign = 1.0 if np.linalg.det(Vt.T @ U.T) > 0 else -1.0

    def branch(last: float) -> tuple[np.ndarray, float]:
        R = Vt.T @ np.diag([1.0, 1.0, last]) @ U.T
        dev = Pc @ R.T - Qc
        return R, float(np.sqrt(np.mean(np.sum(dev * dev, axis=1))))

    R, rmsd = branch(sign)  # proper rotation, determinant +1
    reflected = False
    if allow_reflection:
        R_m, rmsd_m = branch(-sign)
        if rmsd_m < rmsd:
            R, rmsd = R_m, rmsd_m
            reflected = True
    return Superposition(R, cq - R @ cp, rmsd, reflected)


def covariance_map(C: CovarianceMatrix) -> np.ndarray:
    """(N, N) matrix of Frobenius norms of the 3x3 inter-atom blocks."""
    n = C.n_atoms
    blocks = C.entries.reshape(n, 3, n, 3)
    return np.sqrt(np.einsum("iajb,iajb->ij", blocks, blocks))


def uncertainty_ellipsoids(
    x: StateVector, C: CovarianceMatrix, k_sd: float = 2.0
) -> list[Ellipsoid]:
    """Per-atom ellipsoids with semi-axes ``k_sd`` standard deviations long.

    Tiny negative eigenvalues from roundoff are clamped to zero; anything
    below -1e-6 means the covariance has genuinely broken down.
    """
    if x.n_atoms != C.n_atoms:
        raise ValueError(f"state has {x.n_atoms} atoms but covariance has {C.n_atoms}")
    if k_sd <= 0:
        raise ValueError(f"k_sd must be positive, got {k_sd}")
    out = []
    points = x.as_points()
    for i in range(x.n_atoms):
        block = C.entries[3 * i : 3 * i + 3, 3 * i : 3 * i + 3]
        block = 0.5 * (block + block.T)
        eigvals, eigvecs = np.linalg.eigh(block)
        if eigvals[0] < -1e-6:
            raise NumericalBreakdownError(
                f"atom {i} covariance block has eigenvalue {eigvals[0]:.3e}"
            )
        eigvals = np.clip(eigvals, 0.0, None)
        order = np.argsort(eigvals)[::-1]
        semi = k_sd * np.sqrt(eigvals[order])
        axes = eigvecs[:, order].T
        out.append(Ellipsoid(points[i].copy(), semi, axes))
    return out
