"""Core value types shared by the whole package.

Coordinates are stored atom-major: axis ``a`` of atom ``i`` lives at flat
index ``3*i + a``. Distances are in Angstroms, angles in radians, variances
in the squared unit of the measurement.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

#: Smallest admissible constraint variance (A^2 or rad^2). A zero variance
#: would make the scalar gain denominator singular, so constraints clamp to
#: this value on construction.
VARIANCE_FLOOR = 1e-8


class ConstraintKind(Enum):
    """Supported scalar observation models."""

    DISTANCE = "distance"
    ANGLE = "angle"
    DIHEDRAL = "dihedral"

    @property
    def arity(self) -> int:
        """Number of atoms the constraint couples."""
        return _ARITIES[self]


_ARITIES = {
    ConstraintKind.DISTANCE: 2,
    ConstraintKind.ANGLE: 3,
    ConstraintKind.DIHEDRAL: 4,
}


class OrderingStrategy(Enum):
    """How the outer loop reorders constraints between cycles."""

    SORTED = "sorted"  # decreasing |standardized error|, ties by ascending id
    RANDOM = "random"  # fresh shuffle every cycle
    FIXED = "fixed"  # keep the dataset order throughout


@dataclass
class StateVector:
    """Mean position estimate for ``n_atoms`` points, flattened to length 3N."""

    coords: np.ndarray
    n_atoms: int

    def __post_init__(self) -> None:
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")
        coords = np.ascontiguousarray(self.coords, dtype=np.float64)
        if coords.ndim != 1 or coords.size != 3 * self.n_atoms:
            raise ValueError(
                f"expected a flat vector of {3 * self.n_atoms} coordinates, "
                f"got shape {np.shape(self.coords)}"
            )
        if not np.isfinite(coords).all():
            raise ValueError("coordinates must be finite")
        self.coords = coords

    @classmethod
    def from_points(cls, points: np.ndarray) -> "StateVector":
        points = np.asarray(points, dtype=np.float64)
        if points.ndim != 2 or points.shape[1] != 3:
            raise ValueError(f"expected an (N, 3) array, got shape {points.shape}")
        return cls(points.reshape(-1).copy(), points.shape[0])

    def as_points(self) -> np.ndarray:
        """View of the coordinates as an (N, 3) array."""
        return self.coords.reshape(self.n_atoms, 3)

    def atom(self, i: int) -> np.ndarray:
        if not 0 <= i < self.n_atoms:
            raise ValueError(f"atom index {i} out of range for {self.n_atoms} atoms")
        return self.coords[3 * i : 3 * i + 3].copy()

    def copy(self) -> "StateVector":
        return StateVector(self.coords.copy(), self.n_atoms)


@dataclass
class CovarianceMatrix:
    """Full 3N x 3N covariance over the flattened coordinates.

    Symmetry is maintained by explicit symmetrization after filter updates;
    ``validate`` checks the invariants up to roundoff.
    """

    entries: np.ndarray
    n_atoms: int

    def __post_init__(self) -> None:
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")
        entries = np.ascontiguousarray(self.entries, dtype=np.float64)
        dim = 3 * self.n_atoms
        if entries.shape != (dim, dim):
            raise ValueError(
                f"expected a ({dim}, {dim}) matrix, got shape {np.shape(self.entries)}"
            )
        self.entries = entries

    @property
    def dim(self) -> int:
        return 3 * self.n_atoms

    def validate(self, sym_tol: float = 1e-9, diag_tol: float = 1e-9) -> None:
        """Raise ValueError if symmetry or diagonal nonnegativity is violated.

        Tolerances absorb the roundoff a long sequence of rank-1 updates can
        leave behind.
        """
        asym = np.max(np.abs(self.entries - self.entries.T))
        if asym > sym_tol:
            raise ValueError(f"covariance asymmetry {asym:.3e} exceeds {sym_tol:.1e}")
        min_diag = float(np.min(np.diagonal(self.entries)))
        if min_diag < -diag_tol:
            raise ValueError(f"covariance diagonal entry {min_diag:.3e} below -{diag_tol:.1e}")

    def copy(self) -> "CovarianceMatrix":
        return CovarianceMatrix(self.entries.copy(), self.n_atoms)


@dataclass(frozen=True)
class Constraint:
    """One scalar geometric measurement with its declared variance.

    ``atoms`` is the ordered index tuple the observation model expects:
    (i, j) endpoints for a distance, (i, j, k) with vertex j for an angle,
    (i, j, k, l) along the chain for a dihedral.
    """

    kind: ConstraintKind
    atoms: tuple[int, ...]
    measured: float
    variance: float
    id: int

    def __post_init__(self) -> None:
        atoms = tuple(int(a) for a in self.atoms)
        object.__setattr__(self, "atoms", atoms)
        if len(atoms) != self.kind.arity:
            raise ValueError(
                f"{self.kind.value} constraint needs {self.kind.arity} atoms, got {len(atoms)}"
            )
        if len(set(atoms)) != len(atoms):
            raise ValueError(f"constraint atoms must be distinct, got {atoms}")
        if any(a < 0 for a in atoms):
            raise ValueError(f"constraint atoms must be nonnegative, got {atoms}")
        if not np.isfinite(self.measured):
            raise ValueError("measured value must be finite")
        if self.variance < 0:
            raise ValueError(f"variance must be nonnegative, got {self.variance}")
        object.__setattr__(self, "variance", max(float(self.variance), VARIANCE_FLOOR))
        object.__setattr__(self, "measured", float(self.measured))


@dataclass(frozen=True)
class SolveConfig:
    """Tunables for the outer estimation loop. Defaults are the standard run."""

    ordering: OrderingStrategy = OrderingStrategy.SORTED
    max_outer_cycles: int = 100
    avg_stop: float = 0.3  # SD units
    max_stop: float = 1.0  # SD units
    inner_tol: float = 0.01  # Angstroms, infinity norm of the state change
    inner_max_iters: int = 3
    init_variance: float = 100.0  # A^2 on every coordinate
    init_coord_range: tuple[float, float] = (0.0, 50.0)
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_outer_cycles < 1:
            raise ValueError("max_outer_cycles must be >= 1")
        if self.inner_max_iters < 1:
            raise ValueError("inner_max_iters must be >= 1")
        for name in ("avg_stop", "max_stop", "inner_tol", "init_variance"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        low, high = self.init_coord_range
        if low > high:
            raise ValueError(f"init_coord_range low {low} exceeds high {high}")


@dataclass(frozen=True)
class CycleReport:
    """Per-cycle trace record emitted by the solver."""

    cycle: int
    avg_error: float  # mean |standardized error|, SD units
    max_error: float
    rmsd_to_target: float | None  # Angstroms, None when no target is known
    wall_time: float  # seconds

    def __post_init__(self) -> None:
        if self.cycle < 1:
            raise ValueError("cycle numbers start at 1")
        if self.avg_error < 0 or self.max_error < 0:
            raise ValueError("error summaries must be nonnegative")
        # Allow one ulp of slack: the mean of n equal values can round above
        # their maximum.
        if self.avg_error > self.max_error * (1 + 1e-12) + 1e-15:
            raise ValueError("avg_error cannot exceed max_error")


def init_state(
    n_atoms: int,
    coord_range: tuple[float, float] = (0.0, 50.0),
    seed: int | np.random.SeedSequence = 0,
) -> StateVector:
    """Draw every coordinate i.i.d. uniform over ``coord_range``.

    The same seed always yields the same state. A degenerate range
    (low == high) pins all coordinates to that value.
    """
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    low, high = coord_range
    if low > high:
        raise ValueError(f"coord_range low {low} exceeds high {high}")
    rng = np.random.default_rng(seed)
    coords = rng.uniform(low, high, size=3 * n_atoms)
    return StateVector(coords, n_atoms)


def init_covariance(n_atoms: int, sigma2: float = 100.0) -> CovarianceMatrix:
    """Diagonal covariance with ``sigma2`` on every coordinate."""
    if n_atoms < 1:
        raise ValueError("n_atoms must be >= 1")
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be positive, got {sigma2}")
    return CovarianceMatrix(np.eye(3 * n_atoms) * float(sigma2), n_atoms)


def atom_block(C: CovarianceMatrix, i: int, j: int) -> np.ndarray:
    """Copy of the 3x3 cross-covariance block between atoms ``i`` and ``j``."""
    for a in (i, j):
        if not 0 <= a < C.n_atoms:
            raise ValueError(f"atom index {a} out of range for {C.n_atoms} atoms")
    return C.entries[3 * i : 3 * i + 3, 3 * j : 3 * j + 3].copy()
