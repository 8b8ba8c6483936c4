"""Synthetic test structures and constraint datasets.

Targets are compact self-avoiding random walks with a fixed step, sized and
packed like a small globular protein backbone. Datasets take some fraction
of all pairwise distances and optionally corrupt them with one of three
noise models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence

import numpy as np

from .model import VARIANCE_FLOOR, Constraint, ConstraintKind

#: Step length between consecutive walk atoms (A).
BOND_LENGTH = 3.8
#: Minimum separation enforced between non-consecutive atoms (A).
MIN_SEPARATION = 4.0
#: Confinement ball radius = COMPACTNESS_SCALE * n_atoms ** (1/3) (A).
#: Globular chains occupy a volume proportional to their length; 3.5 gives
#: a 46-atom walk the radius of gyration of a small protein backbone
#: (~9 A) instead of an expanded coil.
COMPACTNESS_SCALE = 3.5

#: Default variance declared for noise-free distances (A^2).
EXACT_VARIANCE = 1e-4

# Seed-stream tags keeping target generation, subset sampling and noise
# draws decoupled even when seeded with the same integer.
_TARGET_STREAM = 0x7A26E7
_SAMPLE_STREAM = 0x5A3B1E
_NOISE_STREAM = 0x4015E


class GenerationFailedError(RuntimeError):
    """The self-avoiding walk ran out of retries."""


class NoiseModel(Enum):
    EXACT = "exact"
    UNIFORM_VARIANCE_GAUSSIAN = "uniform_variance_gaussian"
    POSITIVE_BIAS = "positive_bias"


@dataclass(frozen=True)
class NoiseSpec:
    """Noise model plus its single parameter.

    ``param`` means: fixed declared variance for EXACT, the upper bound of
    the uniform variance draw for UNIFORM_VARIANCE_GAUSSIAN, and the mean
    shift for POSITIVE_BIAS.
    """

    model: NoiseModel
    param: float
    seed: int = 0

    def __post_init__(self) -> None:
        if self.param <= 0:
            raise ValueError(f"noise parameter must be positive, got {self.param}")


@dataclass(eq=False)
class Dataset:
    """A constraint set over ``n_atoms`` points, with generation provenance."""

    n_atoms: int
    constraints: tuple[Constraint, ...]
    noise: NoiseSpec
    fraction: float
    seed: int
    target: np.ndarray | None = None  # (N, 3) true coordinates when known

    def __post_init__(self) -> None:
        self.constraints = tuple(self.constraints)
        if self.n_atoms < 1:
            raise ValueError("n_atoms must be >= 1")
        if not 0 < self.fraction <= 1:
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")
        seen = set()
        for c in self.constraints:
            if max(c.atoms, default=-1) >= self.n_atoms:
                raise ValueError(
                    f"constraint {c.id} references atom {max(c.atoms)}, "
                    f"dataset has {self.n_atoms}"
                )
            key = (c.kind, c.atoms)
            if key in seen:
                raise ValueError(f"duplicate constraint {c.kind.value} {c.atoms}")
            seen.add(key)
        if self.target is not None:
            target = np.asarray(self.target, dtype=np.float64)
            if target.shape != (self.n_atoms, 3):
                raise ValueError(
                    f"target shape {target.shape} does not match {self.n_atoms} atoms"
                )
            self.target = target


def generate_target(
    n_atoms: int,
    seed: int | np.random.SeedSequence = 0,
    max_step_tries: int = 400,
    max_restarts: int = 200,
) -> np.ndarray:
    """Compact self-avoiding random walk: ``BOND_LENGTH`` steps,
    non-consecutive atoms kept at least ``MIN_SEPARATION`` apart, the whole
    chain confined to a ball of radius ``COMPACTNESS_SCALE * n_atoms**(1/3)``
    around the first atom so it folds up like a globular protein.

    Each step gets ``max_step_tries`` direction draws; a dead end restarts
    the walk, up to ``max_restarts`` times.
    """
    if n_atoms < 2:
        raise ValueError("a walk needs at least 2 atoms")
    radius = COMPACTNESS_SCALE * n_atoms ** (1.0 / 3.0)
    rng = np.random.default_rng(seed)
    for _ in range(max_restarts + 1):
        points = np.zeros((n_atoms, 3))
        placed = 1
        while placed < n_atoms:
            for _ in range(max_step_tries):
                step = rng.normal(size=3)
                norm = math.sqrt(float(step @ step))
                if norm < 1e-12:
                    continue
                candidate = points[placed - 1] + step * (BOND_LENGTH / norm)
                if math.sqrt(float(candidate @ candidate)) > radius:
                    continue
                if placed >= 2:
                    gaps = np.linalg.norm(points[: placed - 1] - candidate, axis=1)
                    if gaps.min() < MIN_SEPARATION:
                        continue
                points[placed] = candidate
                placed += 1
                break
            else:
                break  # dead end, restart the walk
        if placed == n_atoms:
            return points
    raise GenerationFailedError(
        f"could not build a {n_atoms}-atom self-avoiding walk "
        f"after {max_restarts} restarts"
    )


def enumerate_distances(
    target: np.ndarray, variance: float = EXACT_VARIANCE
) -> list[Constraint]:
    """Exact distance constraints for every atom pair, ids in pair order."""
    points = np.asarray(target, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"expected an (N, 3) target, got shape {points.shape}")
    out = []
    next_id = 0
    for i in range(points.shape[0]):
        gaps = np.linalg.norm(points[i + 1 :] - points[i], axis=1)
        for step, d in enumerate(gaps):
            out.append(
                Constraint(
                    ConstraintKind.DISTANCE,
                    (i, i + 1 + step),
                    float(d),
                    variance,
                    next_id,
                )
            )
            next_id += 1
    return out


def sample_fraction(
    constraints: Sequence[Constraint],
    fraction: float,
    seed: int | np.random.SeedSequence = 0,
) -> list[Constraint]:
    """Uniform sample without replacement of round(fraction * n) constraints.

    The sample keeps the original relative order and ids.
    """
    if not 0 < fraction <= 1:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    k = round(fraction * len(constraints))
    if k < 1:
        raise ValueError(
            f"fraction {fraction} of {len(constraints)} constraints selects none"
        )
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.choice(len(constraints), size=k, replace=False))
    return [constraints[int(i)] for i in chosen]


def apply_noise(constraints: Sequence[Constraint], spec: NoiseSpec) -> list[Constraint]:
    """Return a copy of ``constraints`` corrupted per ``spec``.

    EXACT only rewrites the declared variance. UNIFORM_VARIANCE_GAUSSIAN
    draws a variance v ~ U(0, param) per constraint, floors it, perturbs the
    measurement by N(0, v), and declares the same v. POSITIVE_BIAS shifts
    every measurement by U(0, 2*param) and declares variance param^2.
    """
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, _NOISE_STREAM]))
    out = []
    for c in constraints:
        if spec.model is NoiseModel.EXACT:
            out.append(replace(c, variance=spec.param))
        elif spec.model is NoiseModel.UNIFORM_VARIANCE_GAUSSIAN:
            v = max(float(rng.uniform(0.0, spec.param)), VARIANCE_FLOOR)
            noisy = c.measured + float(rng.normal(0.0, math.sqrt(v)))
            out.append(replace(c, measured=noisy, variance=v))
        else:
            shift = float(rng.uniform(0.0, 2.0 * spec.param))
            out.append(
                replace(c, measured=c.measured + shift, variance=spec.param**2)
            )
    return out


def make_dataset(
    n_atoms: int,
    fraction: float,
    noise: NoiseSpec,
    seed: int = 0,
    target: np.ndarray | None = None,
) -> Dataset:
    """Full pipeline: walk (unless ``target`` is given), enumerate, sample,
    corrupt. Deterministic given (arguments, seeds)."""
    if target is None:
        target = generate_target(n_atoms, np.random.SeedSequence([seed, _TARGET_STREAM]))
    else:
        target = np.asarray(target, dtype=np.float64)
        if target.shape != (n_atoms, 3):
            raise ValueError(
                f"target shape {target.shape} does not match n_atoms={n_atoms}"
            )
    every = enumerate_distances(target)
    subset = sample_fraction(every, fraction, np.random.SeedSequence([seed, _SAMPLE_STREAM]))
    return Dataset(
        n_atoms=n_atoms,
        constraints=tuple(apply_noise(subset, noise)),
        noise=noise,
        fraction=fraction,
        seed=seed,
        target=target,
    )
