"""Scalar observation models and their sparse gradients.

Each model maps the flat coordinate vector to a predicted measurement plus
the gradient restricted to the coordinates of the constrained atoms. The
gradient entries are emitted in strictly increasing flat-index order, three
per atom, even when individual components vanish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import Constraint, ConstraintKind, StateVector

#: Below this separation (A) two atoms are treated as coincident.
EPS_SEPARATION = 1e-8
#: Below this normalized cross-product magnitude two directions are parallel.
EPS_PARALLEL = 1e-10

_TWO_PI = 2.0 * math.pi


class SingularGeometryError(RuntimeError):
    """The constraint geometry is degenerate at the evaluation point."""


@dataclass(frozen=True)
class SparseJacobian:
    """Gradient of a scalar observation, stored as (flat index, value) pairs."""

    indices: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        indices = np.asarray(self.indices, dtype=np.intp)
        values = np.asarray(self.values, dtype=np.float64)
        if indices.ndim != 1 or indices.shape != values.shape:
            raise ValueError("indices and values must be matching 1-d arrays")
        if indices.size and np.any(np.diff(indices) <= 0):
            raise ValueError("jacobian indices must be strictly increasing")
        if indices.size and indices[0] < 0:
            raise ValueError("jacobian indices must be nonnegative")
        object.__setattr__(self, "indices", indices)
        object.__setattr__(self, "values", values)

    def to_dense(self, dim: int) -> np.ndarray:
        row = np.zeros(dim)
        row[self.indices] = self.values
        return row


@dataclass(frozen=True)
class Prediction:
    """Predicted measurement and its sparse gradient at the evaluation point."""

    value: float
    jacobian: SparseJacobian


def wrap_angle(delta: float) -> float:
    """Map an angle difference into (-pi, pi]."""
    wrapped = math.remainder(delta, _TWO_PI)
    if wrapped <= -math.pi:
        wrapped += _TWO_PI
    return wrapped


def _assemble(pairs: list[tuple[int, np.ndarray]]) -> SparseJacobian:
    # Emit all three components per atom, sorted by flat coordinate index.
    pairs = sorted(pairs, key=lambda p: p[0])
    indices = np.empty(3 * len(pairs), dtype=np.intp)
    values = np.empty(3 * len(pairs))
    for slot, (atom, grad) in enumerate(pairs):
        base = 3 * atom
        indices[3 * slot : 3 * slot + 3] = (base, base + 1, base + 2)
        values[3 * slot : 3 * slot + 3] = grad
    return SparseJacobian(indices, values)


def distance_prediction(coords: np.ndarray, i: int, j: int) -> Prediction:
    """Euclidean distance between atoms ``i`` and ``j`` on a flat array."""
    bi, bj = 3 * i, 3 * j
    dx = coords[bi] - coords[bj]
    dy = coords[bi + 1] - coords[bj + 1]
    dz = coords[bi + 2] - coords[bj + 2]
    r = math.sqrt(dx * dx + dy * dy + dz * dz)
    if r < EPS_SEPARATION:
        raise SingularGeometryError(f"atoms {i} and {j} nearly coincide")
    gx, gy, gz = dx / r, dy / r, dz / r
    if i < j:
        indices = (bi, bi + 1, bi + 2, bj, bj + 1, bj + 2)
        values = (gx, gy, gz, -gx, -gy, -gz)
    else:
        indices = (bj, bj + 1, bj + 2, bi, bi + 1, bi + 2)
        values = (-gx, -gy, -gz, gx, gy, gz)
    return Prediction(
        r, SparseJacobian(np.array(indices, dtype=np.intp), np.array(values))
    )


def angle_prediction(coords: np.ndarray, i: int, j: int, k: int) -> Prediction:
    """Angle at vertex ``j`` between rays j->i and j->k, in [0, pi]."""
    pi_ = coords[3 * i : 3 * i + 3]
    pj = coords[3 * j : 3 * j + 3]
    pk = coords[3 * k : 3 * k + 3]
    u = pi_ - pj
    w = pk - pj
    ru = math.sqrt(float(u @ u))
    rw = math.sqrt(float(w @ w))
    if ru < EPS_SEPARATION or rw < EPS_SEPARATION:
        raise SingularGeometryError(f"angle ({i},{j},{k}) has a collapsed ray")
    uh = u / ru
    wh = w / rw
    cr = np.cross(uh, wh)
    sin_t = math.sqrt(float(cr @ cr))
    if sin_t < EPS_PARALLEL:
        raise SingularGeometryError(f"angle ({i},{j},{k}) rays are parallel")
    cos_t = float(uh @ wh)
    theta = math.atan2(sin_t, cos_t)
    # d(theta)/d(endpoint) from the derivative of arccos(uh . wh).
    gi = -(wh - cos_t * uh) / (ru * sin_t)
    gk = -(uh - cos_t * wh) / (rw * sin_t)
    gj = -(gi + gk)
    return Prediction(theta, _assemble([(i, gi), (j, gj), (k, gk)]))


def dihedral_prediction(coords: np.ndarray, i: int, j: int, k: int, l: int) -> Prediction:
    """Signed dihedral of the chain i-j-k-l, in (-pi, pi].

    Zero for the cis (eclipsed) arrangement, pi for trans; the sign follows
    the usual convention of the triple product with the central bond.
    """
    pi_ = coords[3 * i : 3 * i + 3]
    pj = coords[3 * j : 3 * j + 3]
    pk = coords[3 * k : 3 * k + 3]
    pl = coords[3 * l : 3 * l + 3]
    b1 = pj - pi_
    b2 = pk - pj
    b3 = pl - pk
    r1 = math.sqrt(float(b1 @ b1))
    r2 = math.sqrt(float(b2 @ b2))
    r3 = math.sqrt(float(b3 @ b3))
    if min(r1, r2, r3) < EPS_SEPARATION:
        raise SingularGeometryError(f"dihedral ({i},{j},{k},{l}) has a collapsed bond")
    n1 = np.cross(b1, b2)  # normal of plane (i, j, k)
    n2 = np.cross(b2, b3)  # normal of plane (j, k, l)
    sq1 = float(n1 @ n1)
    sq2 = float(n2 @ n2)
    if math.sqrt(sq1) / (r1 * r2) < EPS_PARALLEL or math.sqrt(sq2) / (r2 * r3) < EPS_PARALLEL:
        raise SingularGeometryError(f"dihedral ({i},{j},{k},{l}) has collinear bonds")
    y = float(np.cross(n1, n2) @ b2) / r2
    x = float(n1 @ n2)
    phi = math.atan2(y, x)
    if phi <= -math.pi:  # atan2(-0.0, x<0) returns -pi; keep the range (-pi, pi]
        phi = math.pi
    ti = -(r2 / sq1) * n1
    tl = (r2 / sq2) * n2
    # Middle-atom gradients are combinations of the end-atom ones; the
    # coefficients follow from translation and rotation invariance.
    d12 = float(b1 @ b2) / (r2 * r2)
    d32 = float(b3 @ b2) / (r2 * r2)
    tj = -(1.0 + d12) * ti + d32 * tl
    tk = d12 * ti - (1.0 + d32) * tl
    return Prediction(phi, _assemble([(i, ti), (j, tj), (k, tk), (l, tl)]))


def eval_distance(x: StateVector, i: int, j: int) -> Prediction:
    _check_indices(x.n_atoms, (i, j))
    return distance_prediction(x.coords, i, j)


def eval_angle(x: StateVector, i: int, j: int, k: int) -> Prediction:
    _check_indices(x.n_atoms, (i, j, k))
    return angle_prediction(x.coords, i, j, k)


def eval_dihedral(x: StateVector, i: int, j: int, k: int, l: int) -> Prediction:
    _check_indices(x.n_atoms, (i, j, k, l))
    return dihedral_prediction(x.coords, i, j, k, l)


def _check_indices(n_atoms: int, atoms: tuple[int, ...]) -> None:
    if len(set(atoms)) != len(atoms):
        raise ValueError(f"atom indices must be distinct, got {atoms}")
    for a in atoms:
        if not 0 <= a < n_atoms:
            raise ValueError(f"atom index {a} out of range for {n_atoms} atoms")


def predict_coords(c: Constraint, coords: np.ndarray) -> Prediction:
    """Dispatch on the constraint kind, operating on a flat coordinate array."""
    if c.kind is ConstraintKind.DISTANCE:
        return distance_prediction(coords, *c.atoms)
    if c.kind is ConstraintKind.ANGLE:
        return angle_prediction(coords, *c.atoms)
    return dihedral_prediction(coords, *c.atoms)


def predict(c: Constraint, x: StateVector) -> Prediction:
    """Predicted measurement and sparse gradient for ``c`` at state ``x``."""
    _check_indices(x.n_atoms, c.atoms)
    return predict_coords(c, x.coords)


def residual(c: Constraint, predicted: float) -> float:
    """Measured minus predicted, wrapped into (-pi, pi] for dihedrals."""
    raw = c.measured - predicted
    if c.kind is ConstraintKind.DIHEDRAL:
        return wrap_angle(raw)
    return raw


def standardized_error(c: Constraint, x: StateVector) -> float:
    """Signed residual in standard-deviation units of the declared variance."""
    pred = predict(c, x)
    return residual(c, pred.value) / math.sqrt(c.variance)
