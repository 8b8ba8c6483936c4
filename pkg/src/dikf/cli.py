"""Command line: generate datasets, solve them, evaluate solutions, and
reproduce the whole benchmark matrix.

Exit code 0 means the requested operation fully succeeded; any validation
failure, numerical breakdown, or benchmark row below threshold exits
non-zero. ``reproduce`` emits a summary whose fields are all deterministic
for fixed seeds, so two runs with the same arguments produce identical
bytes.
"""

from __future__ import annotations

import argparse
import csv
import io as _stdio
import json
import math
import statistics
import sys
from pathlib import Path

import numpy as np

from . import io as dio
from .evaluate import error_stats, superpose_rmsd, covariance_map, uncertainty_ellipsoids
from .filtering import NumericalBreakdownError
from .model import OrderingStrategy, SolveConfig
from .presets import DEFAULT_SEEDS, PRESETS, ExperimentConfig, get_preset
from .scheduler import Solution, solve
from .synth import (
    EXACT_VARIANCE,
    Dataset,
    GenerationFailedError,
    NoiseModel,
    NoiseSpec,
    make_dataset,
)

_NOISE_BY_FLAG = {
    "exact": NoiseModel.EXACT,
    "gaussian": NoiseModel.UNIFORM_VARIANCE_GAUSSIAN,
    "bias": NoiseModel.POSITIVE_BIAS,
}
_DEFAULT_NOISE_PARAM = {
    NoiseModel.EXACT: EXACT_VARIANCE,
    NoiseModel.UNIFORM_VARIANCE_GAUSSIAN: 6.0,
    NoiseModel.POSITIVE_BIAS: 3.0,
}


class CliError(RuntimeError):
    """User-facing failure: message only, no traceback."""


def load_coords_file(path: str) -> np.ndarray:
    """Read reference coordinates: JSON array of [x, y, z] rows, or a
    whitespace-separated text table with three columns."""
    p = Path(path)
    if not p.exists():
        raise CliError(f"coordinates file not found: {path}")
    try:
        if p.suffix == ".json":
            coords = np.asarray(json.loads(p.read_text()), dtype=np.float64)
        else:
            coords = np.loadtxt(p, dtype=np.float64, ndmin=2)
    except (ValueError, json.JSONDecodeError) as err:
        raise CliError(f"could not parse coordinates from {path}: {err}") from err
    if coords.ndim != 2 or coords.shape[1] != 3 or coords.shape[0] < 2:
        raise CliError(
            f"{path}: expected at least two rows of three coordinates, "
            f"got shape {coords.shape}"
        )
    return coords


def _dataset_from_args(args) -> tuple[Dataset, str]:
    """Build the dataset requested by generate/solve arguments.

    Returns (dataset, label) where the label seeds default file names.
    """
    seed = args.seed if args.seed is not None else 0
    target = load_coords_file(args.target) if args.target else None
    if args.preset:
        preset = get_preset(args.preset)
        if target is not None and target.shape[0] != preset.n_atoms:
            preset = ExperimentConfig(
                name=preset.name,
                fraction=preset.fraction,
                noise_model=preset.noise_model,
                noise_param=preset.noise_param,
                ordering=preset.ordering,
                n_atoms=target.shape[0],
            )
        return preset.dataset_for(seed, target=target), f"{args.preset}-s{seed}"
    n_atoms = target.shape[0] if target is not None else args.atoms
    if n_atoms is None:
        raise CliError("need --preset, --atoms, or --target to size the dataset")
    model = _NOISE_BY_FLAG[args.noise or "exact"]
    param = args.noise_param if args.noise_param is not None else _DEFAULT_NOISE_PARAM[model]
    noise = NoiseSpec(model, param, seed=seed)
    fraction = args.fraction if args.fraction is not None else 1.0
    ds = make_dataset(n_atoms, fraction, noise, seed=seed, target=target)
    return ds, f"custom-s{seed}"


def _solve_config_from_args(args, ordering_default: OrderingStrategy) -> SolveConfig:
    return SolveConfig(
        ordering=OrderingStrategy(args.order) if args.order else ordering_default,
        max_outer_cycles=args.max_cycles if args.max_cycles is not None else 100,
        avg_stop=args.avg_tol if args.avg_tol is not None else 0.3,
        max_stop=args.max_tol if args.max_tol is not None else 1.0,
        inner_tol=args.inner_tol if args.inner_tol is not None else 0.01,
        inner_max_iters=args.inner_iters if args.inner_iters is not None else 3,
        seed=args.seed if args.seed is not None else 0,
    )


def cmd_generate(args) -> int:
    dataset, label = _dataset_from_args(args)
    out = dio.resolve_output(args.output, f"{label}.dataset.json")
    dio.save_dataset(dataset, out)
    print(f"wrote {out} ({len(dataset.constraints)} constraints, {dataset.n_atoms} atoms)")
    return 0


def _trace_path_for(solution_path: Path) -> Path:
    name = solution_path.name
    if name.endswith(".solution.json"):
        name = name[: -len(".solution.json")]
    else:
        name = solution_path.stem
    return solution_path.with_name(name + ".trace.csv")


def cmd_solve(args) -> int:
    if args.dataset:
        dataset = dio.load_dataset(args.dataset)
        label = Path(args.dataset).name
        for suffix in (".dataset.json", ".json"):
            if label.endswith(suffix):
                label = label[: -len(suffix)]
                break
        ordering_default = OrderingStrategy.SORTED
        if args.seed is None and dataset.seed is not None:
            args.seed = dataset.seed
    elif args.preset:
        preset = get_preset(args.preset)
        seed = args.seed if args.seed is not None else 0
        dataset = preset.dataset_for(seed)
        label = f"{args.preset}-s{seed}"
        ordering_default = preset.ordering
    else:
        raise CliError("solve needs a dataset file or --preset")

    target = load_coords_file(args.target) if args.target else None
    cfg = _solve_config_from_args(args, ordering_default)
    out = dio.resolve_output(args.output, f"{label}.solution.json")
    trace_path = _trace_path_for(out)
    provenance = {
        "config": dio.config_to_json(cfg),
        "dataset": dio.dataset_meta(dataset),
        "label": label,
    }
    try:
        solution = solve(dataset, cfg, target=target)
    except NumericalBreakdownError as err:
        dio.write_trace(getattr(err, "partial_trace", []), trace_path, provenance)
        raise CliError(
            f"numerical breakdown in cycle {getattr(err, 'cycle', '?')}: {err} "
            f"(partial trace kept at {trace_path})"
        ) from err
    dio.save_solution(solution, cfg, dio.dataset_meta(dataset), out)
    dio.write_trace(solution.trace, trace_path, provenance)
    final_avg = _avg_abs_error(solution)
    rmsd = solution.trace[-1].rmsd_to_target if solution.trace else None
    best_rmsd = _best_rmsd(solution)
    print(
        f"{label}: converged={solution.converged} cycles={solution.cycles_run} "
        f"avg_error={final_avg:.4g} best_rmsd={'n/a' if best_rmsd is None else f'{best_rmsd:.4g}'}"
    )
    print(f"wrote {out}")
    print(f"wrote {trace_path}")
    return 0


def _avg_abs_error(solution: Solution) -> float:
    errs = [abs(e) for _, e in solution.per_constraint_errors]
    return statistics.fmean(errs) if errs else 0.0


def _best_rmsd(solution: Solution) -> float | None:
    vals = [r.rmsd_to_target for r in solution.trace if r.rmsd_to_target is not None]
    return min(vals) if vals else None


def build_report(record: dio.SolutionRecord, dataset: Dataset, target: np.ndarray | None) -> dict:
    """Assemble the evaluation payload for one solved dataset."""
    stats = error_stats(dataset.constraints, record.state)
    superposition = None
    if target is not None:
        allow = all(c.kind.value != "dihedral" for c in dataset.constraints)
        sp = superpose_rmsd(record.state.as_points(), target, allow_reflection=allow)
        superposition = {
            "rmsd": sp.rmsd,
            "reflected": sp.reflected,
            "rotation": sp.rotation.tolist(),
            "translation": sp.translation.tolist(),
        }
    ellipsoids = uncertainty_ellipsoids(record.state, record.covariance, k_sd=2.0)
    return {
        "n_atoms": record.n_atoms,
        "converged": record.converged,
        "cycles_run": record.cycles_run,
        "error_stats": {
            "avg": stats.avg,
            "max": stats.max,
            "bin_width": stats.bin_width,
            "n_skipped": stats.n_skipped,
            "histogram": [[edge, count] for edge, count in stats.histogram],
        },
        "superposition": superposition,
        "covariance_map": covariance_map(record.covariance).tolist(),
        "k_sd": 2.0,
        "ellipsoids": [
            {
                "center": e.center.tolist(),
                "semi_axes": e.semi_axes.tolist(),
                "axes": e.axes.tolist(),
            }
            for e in ellipsoids
        ],
        "provenance": {
            "config": dio.config_to_json(record.config),
            "dataset": record.dataset_meta,
        },
    }


def cmd_evaluate(args) -> int:
    record = dio.load_solution(args.solution)
    dataset = dio.load_dataset(args.dataset)
    if record.n_atoms != dataset.n_atoms:
        raise CliError(
            f"solution has {record.n_atoms} atoms but dataset has {dataset.n_atoms}"
        )
    meta = dio.dataset_meta(dataset)
    for key in ("n_atoms", "n_constraints", "fraction", "seed", "noise"):
        if key in record.dataset_meta and record.dataset_meta[key] != meta[key]:
            raise CliError(
                f"solution was produced from a different dataset "
                f"({key}: {record.dataset_meta[key]!r} != {meta[key]!r})"
            )
    target = dataset.target
    if args.target:
        target = load_coords_file(args.target)
    if target is not None and target.shape[0] != record.n_atoms:
        raise CliError(
            f"target has {target.shape[0]} atoms, solution has {record.n_atoms}"
        )
    report = build_report(record, dataset, target)
    base = Path(args.solution).name
    if base.endswith(".solution.json"):
        base = base[: -len(".solution.json")]
    else:
        base = Path(args.solution).stem
    out = dio.resolve_output(args.output, f"{base}.report.json")
    dio.save_report(report, out)
    sp = report["superposition"]
    rmsd_text = "n/a" if sp is None else f"{sp['rmsd']:.4g}"
    print(
        f"avg_error={report['error_stats']['avg']:.4g} "
        f"max_error={report['error_stats']['max']:.4g} rmsd={rmsd_text}"
    )
    print(f"wrote {out}")
    return 0


def _fmt(value) -> str:
    """Stable cell text for summary tables."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "yes" if value else "no"
    if isinstance(value, float):
        if math.isinf(value):
            return "inf"
        return f"{value:.6g}"
    return str(value)


def _run_preset(preset: ExperimentConfig, seeds) -> list[dict]:
    """Solve one preset for every seed; deterministic summary fields only."""
    rows = []
    for seed in seeds:
        dataset = preset.dataset_for(seed)
        cfg = preset.solve_config_for(seed)
        row = {
            "preset": preset.name,
            "seed": seed,
            "ordering": cfg.ordering.value,
            "n_constraints": len(dataset.constraints),
        }
        try:
            solution = solve(dataset, cfg)
        except NumericalBreakdownError:
            row.update(
                breakdown=True, converged=False, cycles=None,
                hit_cycle=None, best_rmsd=None, avg_error=None,
            )
            rows.append(row)
            continue
        hit = next((r.cycle for r in solution.trace if r.avg_error <= 0.3), None)
        row.update(
            breakdown=False,
            converged=solution.converged,
            cycles=solution.cycles_run,
            hit_cycle=hit,
            best_rmsd=_best_rmsd(solution),
            avg_error=_avg_abs_error(solution),
        )
        rows.append(row)
    return rows


def _summary_rows(results: dict[str, list[dict]]) -> list[dict]:
    """Pass/fail verdicts per preset against the benchmark thresholds."""
    rows = []

    def add(name, metric, value, threshold, ok):
        rows.append(
            {
                "row": name,
                "metric": metric,
                "value": _fmt(value),
                "threshold": threshold,
                "pass": ok,
            }
        )

    def median(name, key):
        vals = [r[key] for r in results[name] if r.get(key) is not None]
        return statistics.median(vals) if vals else None

    if "test1" in results:
        hits = [r["hit_cycle"] for r in results["test1"]]
        worst = None if any(h is None for h in hits) else max(hits)
        ok = worst is not None and worst <= 5
        add("test1", "max cycles to avg<=0.3", worst, "<=5 for every seed", ok)
    for name in ("test2a", "test2b", "test2c"):
        if name not in results:
            continue
        rmsds = [r["best_rmsd"] for r in results[name]]
        ok = all(v is not None and v <= 0.1 for v in rmsds)
        worst = max((v for v in rmsds if v is not None), default=None)
        add(name, "worst best-RMSD (A)", worst, "<=0.1 for every seed", ok)
    if all(n in results for n in ("test2a", "test2b", "test2c")):
        ms, mr, mf = (median(n, "cycles") for n in ("test2a", "test2b", "test2c"))
        ok = None not in (ms, mr, mf) and ms <= mr <= mf + 2
        add(
            "test2-ordering",
            "median cycles (sorted/random/fixed)",
            f"{_fmt(ms)}/{_fmt(mr)}/{_fmt(mf)}",
            "sorted<=random<=fixed+2",
            ok,
        )
    if "test3a" in results:
        m = median("test3a", "best_rmsd")
        add("test3a", "median best-RMSD (A)", m, "<=4.0", m is not None and m <= 4.0)
    if "test3b" in results:
        m = median("test3b", "best_rmsd")
        add("test3b", "median best-RMSD (A)", m, "<=6.0", m is not None and m <= 6.0)
    if "test3a" in results and "test3b" in results:
        ma, mb = median("test3a", "best_rmsd"), median("test3b", "best_rmsd")
        ok = None not in (ma, mb) and ma <= mb
        add("test3-noise", "median RMSD low vs high noise", f"{_fmt(ma)}/{_fmt(mb)}", "low<=high", ok)
    if "test4a" in results:
        mr, me = median("test4a", "best_rmsd"), median("test4a", "avg_error")
        ok = None not in (mr, me) and mr <= 4.0 and me <= 0.5
        add("test4a", "median best-RMSD / avg error", f"{_fmt(mr)}/{_fmt(me)}", "rmsd<=4.0 and avg<=0.5", ok)
    if "test4b" in results:
        clean = all(not r["breakdown"] for r in results["test4b"])
        if "test4a" in results:
            by_seed = {r["seed"]: r["best_rmsd"] for r in results["test4a"]}
            pairs = [
                (r["best_rmsd"], by_seed.get(r["seed"]))
                for r in results["test4b"]
                if r["seed"] in by_seed
            ]
            degraded = bool(pairs) and all(
                b is not None and a is not None and b > a for b, a in pairs
            )
            add(
                "test4b",
                "biased worse than exact on matched seeds",
                degraded and clean,
                "strictly worse, no breakdown",
                degraded and clean,
            )
        else:
            add("test4b", "no numerical breakdown", clean, "no breakdown", clean)
    return rows


_DETAIL_FIELDS = (
    "preset", "seed", "ordering", "n_constraints", "breakdown",
    "converged", "cycles", "hit_cycle", "best_rmsd", "avg_error",
)
_SUMMARY_FIELDS = ("row", "metric", "value", "threshold", "pass")


def _csv_text(fields, rows) -> str:
    buf = _stdio.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fields), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _fmt(row[k]) for k in fields})
    return buf.getvalue()


def cmd_reproduce(args) -> int:
    names = args.preset or sorted(PRESETS)
    seeds = tuple(args.seed) if args.seed else DEFAULT_SEEDS
    results: dict[str, list[dict]] = {}
    details: list[dict] = []
    for name in names:
        preset = get_preset(name)
        results[name] = _run_preset(preset, seeds)
        details.extend(results[name])
    summary = _summary_rows(results)

    out = dio.resolve_output(args.output, "summary.csv")
    detail_path = out.with_name(
        out.name[: -len(out.suffix)] + "-details.csv" if out.suffix else out.name + "-details.csv"
    )
    dio.atomic_write_text(out, _csv_text(_SUMMARY_FIELDS, summary))
    dio.atomic_write_text(detail_path, _csv_text(_DETAIL_FIELDS, details))

    width = max(len(r["row"]) for r in summary) if summary else 4
    for r in summary:
        status = "PASS" if r["pass"] else "FAIL"
        print(f"{r['row']:<{width}}  {status}  {r['metric']} = {r['value']} (want {r['threshold']})")
    print(f"wrote {out}")
    print(f"wrote {detail_path}")
    failed = [r["row"] for r in summary if not r["pass"]]
    if failed:
        print(f"{len(failed)} row(s) below threshold: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def _add_common_dataset_args(sub):
    sub.add_argument("--preset", help="named experiment recipe (e.g. test1)")
    sub.add_argument("--atoms", type=int, help="atom count for custom datasets")
    sub.add_argument("--fraction", type=float, help="fraction of all pair distances to keep")
    sub.add_argument(
        "--noise", choices=sorted(_NOISE_BY_FLAG), help="noise model for custom datasets"
    )
    sub.add_argument("--noise-param", type=float, help="noise model parameter")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dikf",
        description="Estimate 3D point coordinates and their uncertainty "
        "from noisy distance/angle/dihedral constraints.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a synthetic constraint dataset")
    _add_common_dataset_args(gen)
    gen.add_argument("--seed", type=int, help="replicate seed (default 0)")
    gen.add_argument("--target", help="coordinates file to use instead of a generated walk")
    gen.add_argument("-o", "--output", help="output file or directory")
    gen.set_defaults(func=cmd_generate)

    sol = sub.add_parser("solve", help="run the estimator on a dataset")
    sol.add_argument("dataset", nargs="?", help="dataset file (or use --preset)")
    sol.add_argument("--preset", help="generate and solve a named recipe")
    sol.add_argument("--order", choices=[o.value for o in OrderingStrategy],
                     help="constraint reintroduction strategy")
    sol.add_argument("--max-cycles", type=int, help="outer cycle budget (default 100)")
    sol.add_argument("--avg-tol", type=float, help="average-error stop, SD units (default 0.3)")
    sol.add_argument("--max-tol", type=float, help="maximum-error stop, SD units (default 1.0)")
    sol.add_argument("--inner-tol", type=float, help="inner-loop state tolerance, A (default 0.01)")
    sol.add_argument("--inner-iters", type=int, help="inner-loop pass cap (default 3)")
    sol.add_argument("--seed", type=int, help="solver seed (defaults to the dataset seed)")
    sol.add_argument("--target", help="reference coordinates for RMSD tracking")
    sol.add_argument("-o", "--output", help="solution file or directory")
    sol.set_defaults(func=cmd_solve)

    ev = sub.add_parser("evaluate", help="score a solution file against its dataset")
    ev.add_argument("solution", help="solution file from solve")
    ev.add_argument("dataset", help="the dataset it solved")
    ev.add_argument("--target", help="override reference coordinates")
    ev.add_argument("-o", "--output", help="report file or directory")
    ev.set_defaults(func=cmd_evaluate)

    rep = sub.add_parser("reproduce", help="run the benchmark matrix and summarize")
    rep.add_argument("--preset", action="append",
                     help="restrict to this preset (repeatable)")
    rep.add_argument("--seed", action="append", type=int,
                     help="replicate seed (repeatable; default 1..5)")
    rep.add_argument("-o", "--output", help="summary file or directory")
    rep.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        CliError,
        dio.FormatError,
        GenerationFailedError,
        NumericalBreakdownError,
        ValueError,
        OSError,
    ) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
