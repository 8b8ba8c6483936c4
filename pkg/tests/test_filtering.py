"""Scalar measurement update: exact Gaussian posterior on a linear case,
agreement with a dense-algebra reimplementation, and covariance hygiene."""

import math

import numpy as np
import pytest

from dikf.filtering import (
    NumericalBreakdownError,
    apply_constraint,
    apply_constraint_in_place,
    kalman_gain,
)
from dikf.constraints import predict
from dikf.model import (
    Constraint,
    ConstraintKind,
    CovarianceMatrix,
    SolveConfig,
    StateVector,
    init_covariance,
)

from oracles import dense_iterated_update

CFG = SolveConfig()


def test_conjugate_gaussian_posterior_exact():
    """A linear measurement must reproduce the closed-form 1D posterior.

    Atom 0 is pinned (zero variance), atom 1 sits on the x axis with prior
    N(10, 100) on its x coordinate. A distance measurement z=0 with variance
    100 is then a linear Gaussian observation of that coordinate, so the
    posterior is N(5, 50).
    """
    x = StateVector(np.array([0.0, 0, 0, 10.0, 0, 0]), 2)
    C = np.zeros((6, 6))
    C[3, 3] = 100.0
    cfg = SolveConfig(inner_tol=1e-12, inner_max_iters=5)
    c = Constraint(ConstraintKind.DISTANCE, (0, 1), 0.0, 100.0, 0)

    out = apply_constraint(x, CovarianceMatrix(C, 2), c, cfg)
    assert not out.skipped
    assert abs(out.state.coords[3] - 5.0) < 1e-12
    assert abs(out.covariance.entries[3, 3] - 50.0) < 1e-12
    # nothing else moves
    mask = np.ones(6, dtype=bool)
    mask[3] = False
    assert np.array_equal(out.state.coords[mask], x.coords[mask])
    other = out.covariance.entries.copy()
    other[3, 3] = 0.0
    assert np.array_equal(other, np.zeros((6, 6)))
    # a linear measurement converges in one real pass (plus confirmation)
    assert out.inner_iterations == 1
    assert out.innovation == pytest.approx(-10.0)


def test_sequential_linear_fusion_matches_batch():
    """Two independent linear measurements fused serially equal the batch
    Gaussian product: precisions add, precision-weighted means add."""
    x = StateVector(np.array([0.0, 0, 0, 8.0, 0, 0]), 2)
    C = np.zeros((6, 6))
    C[3, 3] = 25.0
    cfg = SolveConfig(inner_tol=1e-12, inner_max_iters=5)
    state, cov = StateVector(x.coords.copy(), 2), CovarianceMatrix(C.copy(), 2)
    for cid, (z, v) in enumerate([(10.0, 50.0), (2.0, 10.0)]):
        c = Constraint(ConstraintKind.DISTANCE, (0, 1), z, v, cid)
        out = apply_constraint(state, cov, c, cfg)
        state, cov = out.state, out.covariance
    w = 1 / 25.0 + 1 / 50.0 + 1 / 10.0
    mean = (8.0 / 25.0 + 10.0 / 50.0 + 2.0 / 10.0) / w
    assert state.coords[3] == pytest.approx(mean, abs=1e-10)
    assert cov.entries[3, 3] == pytest.approx(1 / w, abs=1e-10)


def _random_psd(rng, dim, scale=30.0):
    A = rng.normal(size=(dim, dim))
    C = A @ A.T * (scale / dim) + 1e-3 * np.eye(dim)
    return 0.5 * (C + C.T)


def _well_separated_points(rng, n):
    while True:
        pts = rng.uniform(-5.0, 5.0, size=(n, 3))
        d = np.linalg.norm(pts[:, None] - pts[None, :], axis=2)
        if (d + 10 * np.eye(n)).min() > 1.5:
            return pts


def test_matches_dense_oracle():
    """The sparse rank-1 implementation must agree with a full dense-matrix
    update to near machine precision, across kinds and random covariances."""
    rng = np.random.default_rng(99)
    kinds = [
        (ConstraintKind.DISTANCE, 2),
        (ConstraintKind.ANGLE, 3),
        (ConstraintKind.DIHEDRAL, 4),
    ]
    for trial in range(30):
        n = int(rng.integers(4, 6))
        pts = _well_separated_points(rng, n)
        kind, arity = kinds[trial % 3]
        atoms = tuple(int(a) for a in rng.choice(n, size=arity, replace=False))
        x0 = pts.ravel()
        truth = predict(
            Constraint(kind, atoms, 1.0, 1.0, 0), StateVector(x0.copy(), n)
        ).value
        z = truth + float(rng.normal(0.0, 0.3))
        if kind is ConstraintKind.ANGLE:
            z = float(np.clip(z, 0.1, math.pi - 0.1))
        v = float(rng.uniform(0.05, 2.0))
        c = Constraint(kind, atoms, z, v, 0)
        C0 = _random_psd(rng, 3 * n)
        cfg = SolveConfig(inner_tol=1e-4, inner_max_iters=3)

        out = apply_constraint(
            StateVector(x0.copy(), n), CovarianceMatrix(C0.copy(), n), c, cfg
        )
        assert not out.skipped

        def measure(vec, c=c, n=n):
            return predict(c, StateVector(vec, n))

        x_ref, C_ref = dense_iterated_update(
            x0.copy(), C0.copy(), measure, z, v,
            cfg.inner_tol, cfg.inner_max_iters,
            wrap=kind is ConstraintKind.DIHEDRAL,
        )
        assert np.max(np.abs(out.state.coords - x_ref)) < 1e-10, trial
        assert np.max(np.abs(out.covariance.entries - C_ref)) < 1e-10, trial


def test_diagonal_never_increases_and_symmetry_holds():
    rng = np.random.default_rng(11)
    n = 5
    pts = _well_separated_points(rng, n)
    x = pts.ravel() + rng.normal(0, 0.5, size=3 * n)
    C = _random_psd(rng, 3 * n, scale=50.0)
    for step in range(60):
        i, j = rng.choice(n, size=2, replace=False)
        d_true = float(np.linalg.norm(pts[i] - pts[j]))
        c = Constraint(
            ConstraintKind.DISTANCE, (int(i), int(j)),
            d_true + float(rng.normal(0, 0.1)), 0.5, step,
        )
        diag_before = np.diagonal(C).copy()
        _, _, skipped = apply_constraint_in_place(x, C, c, CFG)
        assert not skipped
        assert np.all(np.diagonal(C) <= diag_before + 1e-12)
        assert np.max(np.abs(C - C.T)) <= 1e-9


def test_untouched_atoms_stay_put_with_diagonal_prior():
    rng = np.random.default_rng(21)
    n = 6
    x = StateVector(rng.uniform(0, 20, size=3 * n), n)
    C = init_covariance(n, 100.0)
    c = Constraint(ConstraintKind.DISTANCE, (1, 4), 5.0, 0.1, 0)
    out = apply_constraint(x, C, c, CFG)
    moved = {1, 4}
    for a in range(n):
        sl = slice(3 * a, 3 * a + 3)
        if a in moved:
            assert not np.array_equal(out.state.coords[sl], x.coords[sl])
        else:
            assert np.array_equal(out.state.coords[sl], x.coords[sl])
            # variance of uninvolved atoms is untouched too
            assert np.array_equal(
                out.covariance.entries[sl, sl], C.entries[sl, sl]
            )


def test_huge_variance_barely_moves_state():
    rng = np.random.default_rng(31)
    n = 4
    x0 = _well_separated_points(rng, n).ravel()
    C = init_covariance(n, 100.0)
    c = Constraint(ConstraintKind.DISTANCE, (0, 3), 40.0, 1e12, 0)
    out = apply_constraint(StateVector(x0.copy(), n), C, c, CFG)
    assert np.max(np.abs(out.state.coords - x0)) < 1e-6
    assert np.max(np.abs(out.covariance.entries - C.entries)) < 1e-4


def test_singular_entry_geometry_skips():
    x = StateVector(np.zeros(6), 2)
    C = init_covariance(2)
    c = Constraint(ConstraintKind.DISTANCE, (0, 1), 3.8, 1.0, 0)
    out = apply_constraint(x, C, c, CFG)
    assert out.skipped
    assert math.isnan(out.innovation)
    assert np.array_equal(out.state.coords, x.coords)
    assert np.array_equal(out.covariance.entries, C.entries)


def test_indefinite_covariance_breaks_down():
    x = StateVector(np.array([0.0, 0, 0, 10.0, 0, 0]), 2)
    C = -1.0 * np.eye(6)
    c = Constraint(ConstraintKind.DISTANCE, (0, 1), 10.0, 0.5, 0)
    with pytest.raises(NumericalBreakdownError):
        apply_constraint(x, CovarianceMatrix(C, 2), c, CFG)


def test_kalman_gain_validation():
    C = init_covariance(2, 100.0)
    x = StateVector(np.array([0.0, 0, 0, 10.0, 0, 0]), 2)
    pred = predict(Constraint(ConstraintKind.DISTANCE, (0, 1), 10.0, 1.0, 0), x)
    K = kalman_gain(C, pred.jacobian, 100.0)
    # gain along x of atom 1: 100 / (200 + 100)... two atoms contribute
    assert K[3] == pytest.approx(100.0 / 300.0)
    assert K[0] == pytest.approx(-100.0 / 300.0)
    with pytest.raises(ValueError):
        kalman_gain(C, pred.jacobian, 0.0)


def test_inner_iteration_cap_respected():
    rng = np.random.default_rng(41)
    n = 3
    pts = _well_separated_points(rng, n)
    x0 = pts.ravel()
    c = Constraint(ConstraintKind.DISTANCE, (0, 2), 12.0, 0.01, 0)
    for cap in (1, 2, 3, 5):
        cfg = SolveConfig(inner_tol=1e-15, inner_max_iters=cap)
        out = apply_constraint(
            StateVector(x0.copy(), n), init_covariance(n), c, cfg
        )
        assert 1 <= out.inner_iterations <= cap
