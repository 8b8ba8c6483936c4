"""File formats: datasets, solutions, traces, and evaluation reports.

Everything is plain text. Datasets, solutions and reports are JSON with a
``schema`` tag; cycle traces are CSV with ``#``-prefixed provenance lines.
Floats rely on Python's shortest round-trip repr, so load(save(x)) gives
back bit-identical values and rerunning a command yields byte-identical
files. Non-finite reals use the JSON extensions ``Infinity``/``NaN``.

All writes are atomic (temp file in the target directory, then rename).
The ``DIKF_OUTPUT_DIR`` environment variable sets the default output
directory; explicit paths always win.
"""

from __future__ import annotations

import csv
import io as _stdio
import json
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .model import (
    Constraint,
    ConstraintKind,
    CovarianceMatrix,
    CycleReport,
    OrderingStrategy,
    SolveConfig,
    StateVector,
)
from .scheduler import Solution
from .synth import Dataset, NoiseModel, NoiseSpec

DATASET_SCHEMA = "dikf.dataset/1"
SOLUTION_SCHEMA = "dikf.solution/1"
REPORT_SCHEMA = "dikf.report/1"
TRACE_SCHEMA = "dikf.trace/1"

#: Environment variable naming the default output directory.
OUTPUT_DIR_ENV = "DIKF_OUTPUT_DIR"


class FormatError(ValueError):
    """A file failed schema or content validation."""


def default_output_dir() -> Path:
    return Path(os.environ.get(OUTPUT_DIR_ENV, "."))


def resolve_output(path: str | os.PathLike | None, default_name: str) -> Path:
    """Pick the output file location.

    An explicit file path is used as-is; an explicit directory gets
    ``default_name`` appended; no path at all falls back to the default
    output directory.
    """
    if path is None:
        return default_output_dir() / default_name
    p = Path(path)
    if p.is_dir():
        return p / default_name
    return p


def atomic_write_text(path: str | os.PathLike, text: str) -> Path:
    """Write ``text`` to ``path`` via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise
    return path


def _dump_json(payload: dict) -> str:
    return json.dumps(payload, indent=1, sort_keys=True) + "\n"


def _load_json(path: str | os.PathLike, schema: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as err:
        raise FormatError(f"{path}: not valid JSON ({err})") from err
    if not isinstance(payload, dict) or payload.get("schema") != schema:
        raise FormatError(
            f"{path}: expected schema {schema!r}, found {payload.get('schema')!r}"
        )
    return payload


def _noise_to_json(spec: NoiseSpec) -> dict:
    return {"model": spec.model.value, "param": spec.param, "seed": spec.seed}


def _noise_from_json(obj: dict) -> NoiseSpec:
    try:
        return NoiseSpec(NoiseModel(obj["model"]), obj["param"], obj["seed"])
    except (KeyError, ValueError) as err:
        raise FormatError(f"bad noise spec {obj!r}: {err}") from err


def save_dataset(dataset: Dataset, path: str | os.PathLike) -> Path:
    payload = {
        "schema": DATASET_SCHEMA,
        "n_atoms": dataset.n_atoms,
        "fraction": dataset.fraction,
        "seed": dataset.seed,
        "noise": _noise_to_json(dataset.noise),
        "constraints": [
            {
                "id": c.id,
                "kind": c.kind.value,
                "atoms": list(c.atoms),
                "measured": c.measured,
                "variance": c.variance,
            }
            for c in dataset.constraints
        ],
        "target": None if dataset.target is None else dataset.target.tolist(),
    }
    return atomic_write_text(path, _dump_json(payload))


def load_dataset(path: str | os.PathLike) -> Dataset:
    payload = _load_json(path, DATASET_SCHEMA)
    try:
        constraints = tuple(
            Constraint(
                ConstraintKind(rec["kind"]),
                tuple(rec["atoms"]),
                rec["measured"],
                rec["variance"],
                rec["id"],
            )
            for rec in payload["constraints"]
        )
        target = payload["target"]
        return Dataset(
            n_atoms=payload["n_atoms"],
            constraints=constraints,
            noise=_noise_from_json(payload["noise"]),
            fraction=payload["fraction"],
            seed=payload["seed"],
            target=None if target is None else np.asarray(target, dtype=np.float64),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"{path}: invalid dataset ({err})") from err


def config_to_json(cfg: SolveConfig) -> dict:
    out = asdict(cfg)
    out["ordering"] = cfg.ordering.value
    out["init_coord_range"] = list(cfg.init_coord_range)
    return out


def config_from_json(obj: dict) -> SolveConfig:
    try:
        kwargs = dict(obj)
        kwargs["ordering"] = OrderingStrategy(kwargs["ordering"])
        kwargs["init_coord_range"] = tuple(kwargs["init_coord_range"])
        return SolveConfig(**kwargs)
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"bad solve config {obj!r}: {err}") from err


@dataclass
class SolutionRecord:
    """A solution file's contents, reconstructed.

    Mirrors what ``save_solution`` persists: the estimate itself plus the
    config and dataset metadata needed to regenerate it.
    """

    n_atoms: int
    state: StateVector
    covariance: CovarianceMatrix
    per_constraint_errors: list[tuple[int, float]]
    converged: bool
    cycles_run: int
    config: SolveConfig
    dataset_meta: dict


def dataset_meta(dataset: Dataset) -> dict:
    """Generation provenance embedded in downstream files."""
    return {
        "n_atoms": dataset.n_atoms,
        "fraction": dataset.fraction,
        "seed": dataset.seed,
        "noise": _noise_to_json(dataset.noise),
        "n_constraints": len(dataset.constraints),
    }


def save_solution(
    solution: Solution,
    cfg: SolveConfig,
    meta: dict,
    path: str | os.PathLike,
) -> Path:
    """Persist a solve result.

    Stores coordinates, the per-atom 3x3 covariance blocks for quick
    uncertainty lookups, the full covariance matrix (cross-atom analyses
    need the off-diagonal blocks), per-constraint errors, the convergence
    flag, and full provenance (solver config plus dataset metadata).
    """
    n = solution.state.n_atoms
    points = solution.state.as_points()
    C = solution.covariance.entries
    payload = {
        "schema": SOLUTION_SCHEMA,
        "n_atoms": n,
        "converged": solution.converged,
        "cycles_run": solution.cycles_run,
        "coordinates": points.tolist(),
        "atom_covariances": [
            C[3 * i : 3 * i + 3, 3 * i : 3 * i + 3].tolist() for i in range(n)
        ],
        "covariance": C.tolist(),
        "per_constraint_errors": [[i, e] for i, e in solution.per_constraint_errors],
        "config": config_to_json(cfg),
        "dataset": meta,
    }
    return atomic_write_text(path, _dump_json(payload))


def load_solution(path: str | os.PathLike) -> SolutionRecord:
    payload = _load_json(path, SOLUTION_SCHEMA)
    try:
        n = payload["n_atoms"]
        state = StateVector.from_points(np.asarray(payload["coordinates"], dtype=np.float64))
        C = CovarianceMatrix(np.asarray(payload["covariance"], dtype=np.float64), n)
        record = SolutionRecord(
            n_atoms=n,
            state=state,
            covariance=C,
            per_constraint_errors=[
                (int(i), float(e)) for i, e in payload["per_constraint_errors"]
            ],
            converged=payload["converged"],
            cycles_run=payload["cycles_run"],
            config=config_from_json(payload["config"]),
            dataset_meta=payload["dataset"],
        )
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"{path}: invalid solution ({err})") from err
    if state.n_atoms != n:
        raise FormatError(f"{path}: coordinate count does not match n_atoms")
    return record


_TRACE_FIELDS = ("cycle", "avg_error", "max_error", "rmsd_to_target", "wall_time")


def write_trace(
    trace: Sequence[CycleReport],
    path: str | os.PathLike,
    provenance: dict | None = None,
) -> Path:
    """Cycle-by-cycle table as CSV, provenance in leading comment lines."""
    buf = _stdio.StringIO()
    buf.write(f"# schema: {TRACE_SCHEMA}\n")
    for key, value in (provenance or {}).items():
        buf.write(f"# {key}: {json.dumps(value, sort_keys=True)}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_TRACE_FIELDS)
    for rec in trace:
        writer.writerow(
            [
                rec.cycle,
                repr(rec.avg_error),
                repr(rec.max_error),
                "" if rec.rmsd_to_target is None else repr(rec.rmsd_to_target),
                repr(rec.wall_time),
            ]
        )
    return atomic_write_text(path, buf.getvalue())


def read_trace(path: str | os.PathLike) -> tuple[list[CycleReport], dict]:
    """Parse a trace CSV back into records plus its provenance mapping."""
    provenance: dict[str, Any] = {}
    rows: list[CycleReport] = []
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("#"):
            text = line[1:].strip()
            key, sep, value = text.partition(":")
            if sep:
                try:
                    provenance[key.strip()] = json.loads(value.strip())
                except json.JSONDecodeError:
                    provenance[key.strip()] = value.strip()
        elif line:
            body.append(line)
    if provenance.get("schema") != TRACE_SCHEMA:
        raise FormatError(f"{path}: expected schema {TRACE_SCHEMA!r}")
    reader = csv.DictReader(body)
    if tuple(reader.fieldnames or ()) != _TRACE_FIELDS:
        raise FormatError(f"{path}: unexpected trace columns {reader.fieldnames}")
    try:
        for rec in reader:
            rows.append(
                CycleReport(
                    cycle=int(rec["cycle"]),
                    avg_error=float(rec["avg_error"]),
                    max_error=float(rec["max_error"]),
                    rmsd_to_target=(
                        None if rec["rmsd_to_target"] == "" else float(rec["rmsd_to_target"])
                    ),
                    wall_time=float(rec["wall_time"]),
                )
            )
    except (KeyError, TypeError, ValueError) as err:
        raise FormatError(f"{path}: invalid trace row ({err})") from err
    return rows, provenance


def save_report(report: dict, path: str | os.PathLike) -> Path:
    """Persist an evaluation report (see cli.build_report for the shape)."""
    payload = dict(report)
    payload["schema"] = REPORT_SCHEMA
    return atomic_write_text(path, _dump_json(payload))


def load_report(path: str | os.PathLike) -> dict:
    return _load_json(path, REPORT_SCHEMA)
