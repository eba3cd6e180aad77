"""Command-line entry point: classify metrics, run residual systems, trace geodesics, run the acceptance suite.

Exit codes: 0 pass, 1 check failure (with witnesses), 2 usage or config error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import acceptance
from . import analysis as an
from . import expr as ex
from . import geodesics as geo
from .errors import (
    ExprSyntaxError,
    FinslerError,
    ImmediateSingularity,
    KindMismatch,
    MalformedSpec,
    UnboundConstant,
    UnknownSystem,
)
from .metrics import (
    CONIC_TOL,
    CUBIC_TOL,
    CubicMetric,
    KropinaCanonical,
    KropinaGeneral,
    KropinaMetric,
    Metric,
    MetricSpec,
    canonical_profile,
    cubic_discriminant_values,
    make_metric,
    parabolic_phi_check,
)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
SYSTEMS = ("projectivity", "I", "beta", "II-prime", "constant-curvature", "alpha-cubic", "III", "skew", "cubic-exceptional")
VARIANTS = {"I": ("corrected", "printed"), "constant-curvature": ("corrected", "printed")}
FLAGS = ("degenerate", "projective", "minkowski", "parabolic_type", "constant_curvature_necessary")
CONFIG_ERRORS = (MalformedSpec, UnknownSystem, KindMismatch, ExprSyntaxError, UnboundConstant)


class UsageError(Exception):
    """Bad flags or config; maps to exit status 2."""


@dataclass
class RunConfig:
    spec: MetricSpec | None
    grid: an.Grid
    order: int = 4
    out: str | None = None
    fmt: str = "json"
    seed: int | None = None
    threshold_pass: float = 1e-8
    threshold_fail: float = 1e-3

    def metric(self) -> Metric:
        if self.spec is None:
            raise UsageError("this command needs --metric")
        return make_metric(self.spec)

    def echo(self) -> dict:
        return {
            "metric": None if self.spec is None else self.spec.to_dict(),
            "seed": self.seed,
            "order": self.order,
            "thresholds": {"pass": self.threshold_pass, "fail": self.threshold_fail},
        }


# -- config loading ---------------------------------------------------------


def _floats(text: str, count: int, flag: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"{flag} expects {count} comma-separated numbers, got {text!r}") from None
    if len(values) != count:
        raise UsageError(f"{flag} expects {count} comma-separated numbers, got {len(values)}")
    return values


def _read_json(source: str, what: str):
    if source.lstrip().startswith(("{", "[")):
        text = source
    elif Path(source).is_file():
        text = Path(source).read_text()
    else:
        raise UsageError(f"{what} {source!r} is neither a file nor inline JSON")
    try:
        return json.loads(text)
    except json.JSONDecodeError as err:
        raise UsageError(f"{what} is not valid JSON: {err}") from None


def _grid_section(section: dict) -> dict:
    known = {"bounds", "n1", "n2", "ndirs", "seed"}
    unknown = set(section) - known
    if unknown:
        raise UsageError(f"unknown grid fields: {', '.join(sorted(unknown))}")
    return dict(section)


def load_config(args: argparse.Namespace) -> RunConfig:
    """Merge the --metric document with command-line flags; flags win."""
    spec, grid_fields, order = None, {}, 4
    if getattr(args, "metric", None):
        doc = _read_json(args.metric, "--metric")
        if isinstance(doc, dict) and "metric" in doc:
            spec = MetricSpec.from_dict(doc["metric"])
            grid_fields = _grid_section(doc.get("grid") or {})
            order = int(doc.get("order", order))
        else:
            spec = MetricSpec.from_dict(doc)
    if args.grid:
        g = _floats(args.grid, 6, "--grid")
        if g[4] != int(g[4]) or g[5] != int(g[5]):
            raise UsageError("--grid counts must be integers")
        grid_fields.update(bounds=g[:4], n1=int(g[4]), n2=int(g[5]))
    if args.dirs is not None:
        grid_fields["ndirs"] = args.dirs
    if args.seed is not None:
        grid_fields["seed"] = args.seed
    if args.order is not None:
        order = args.order
    if not 2 <= order <= 6:
        raise UsageError(f"jet order must be in 2..6, got {order}")
    workers = args.workers if args.workers is not None else (os.cpu_count() or 1)
    if workers < 1:
        raise UsageError("--workers must be at least 1")
    try:
        bounds = tuple(float(v) for v in grid_fields.get("bounds", (0.1, 0.9, 0.1, 0.9)))
        if len(bounds) != 4:
            raise ValueError("grid bounds need 4 numbers")
        grid = an.Grid(
            bounds,  # type: ignore[arg-type]
            int(grid_fields.get("n1", 11)),
            int(grid_fields.get("n2", 11)),
            int(grid_fields.get("ndirs", 16)),
            None if grid_fields.get("seed") is None else int(grid_fields["seed"]),
            workers,
        )
    except (TypeError, ValueError) as err:
        raise UsageError(f"bad grid: {err}") from None
    if args.threshold_pass <= 0 or args.threshold_fail < args.threshold_pass:
        raise UsageError("need 0 < --threshold-pass <= --threshold-fail")
    return RunConfig(spec, grid, order, args.out, args.format, grid.seed, args.threshold_pass, args.threshold_fail)


# -- output -----------------------------------------------------------------


def _dumps(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _emit(config: RunConfig, text: str) -> None:
    if config.out:
        Path(config.out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _point(at) -> list:
    return (list(at or []) + [""] * 4)[:4]


# -- residuals --------------------------------------------------------------


def _require(metric: Metric, cls: type, system: str) -> None:
    if not isinstance(metric, cls):
        raise KindMismatch(f"system {system!r} does not apply to a {metric.kind} metric")


def _profile(metric: Metric, system: str) -> tuple[ex.Expr, dict]:
    _require(metric, KropinaCanonical, system)
    return canonical_profile(metric), metric.env  # type: ignore[attr-defined]


def run_system(metric: Metric, system: str, grid: an.Grid, variant: str | None = None) -> an.ResidualReport:
    """Dispatch one named residual system."""
    if system not in SYSTEMS:
        raise UnknownSystem(f"unknown system {system!r}; expected one of {', '.join(SYSTEMS)}")
    if variant is not None and variant not in VARIANTS.get(system, ()):
        raise UnknownSystem(f"system {system!r} has no variant {variant!r}")
    kw = {} if variant is None else {"variant": variant}
    if system == "projectivity":
        return an.projectivity_report(metric, grid)
    if system == "I":
        _require(metric, KropinaMetric, system)
        return an.system_I_residuals(metric, grid, **kw)  # type: ignore[arg-type]
    if system == "beta":
        if isinstance(metric, KropinaGeneral):
            return an.system_beta_residuals(metric.fields[3], metric.env, grid)
        _require(metric, KropinaCanonical, system)
        return an.system_beta_residuals(ex.num(0.0), {}, grid)
    if system == "II-prime":
        return an.system_IIprime_residuals(*_profile(metric, system), grid)
    if system == "constant-curvature":
        return an.constant_curvature_residuals(*_profile(metric, system), grid, **kw)
    if system == "alpha-cubic":
        _require(metric, CubicMetric, system)
        return an.cubic_system_alpha_residuals(metric, grid)  # type: ignore[arg-type]
    if system == "III":
        return an.minkowski_report(metric, grid)
    if system == "skew":
        return an.skewness_report(metric, grid)
    if metric.kind != "CubicExceptional":
        raise KindMismatch(f"system 'cubic-exceptional' needs a CubicExceptional metric, not {metric.kind}")
    spec = metric.spec
    k = [spec.constants[f"k{i}"] for i in range(1, 5)]  # type: ignore[union-attr]
    return an.cubic_exceptional_check(k, grid)


def cmd_residuals(config: RunConfig, system: str, variant: str | None) -> int:
    report = run_system(config.metric(), system, config.grid, variant)
    passed = report.passed(config.threshold_pass)
    if config.fmt == "csv":
        rows = [[eq.label, repr(eq.max_residual), *_point(eq.at_point)] for eq in report.equations]
        _emit(config, _csv(["label", "max_residual", "x1", "x2", "X", "Y"], rows))
    else:
        doc = dict(report.to_dict(), **config.echo(), passed=passed)
        _emit(config, _dumps(doc))
    return EXIT_PASS if passed else EXIT_FAIL


# -- classify ---------------------------------------------------------------


def _verdict(config: RunConfig, check: str, residual: float, at=None) -> dict:
    out = {"check": check, "residual": residual, "at_point": None if at is None else list(at)}
    if residual < config.threshold_pass:
        out["verdict"] = "pass"
    else:
        out["verdict"] = "fail"
        if residual <= config.threshold_fail:
            out["inconclusive"] = True
    return out


def _not_applicable(reason: str) -> dict:
    return {"verdict": "not-applicable", "reason": reason}


def _from_report(config: RunConfig, report: an.ResidualReport) -> dict:
    worst = report.worst()
    out = _verdict(config, report.system, worst.max_residual, worst.at_point)
    out["equation"] = worst.label
    return out


def _base_values(fn: Callable, x1: np.ndarray, x2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``fn`` at each base point, dropping points where it cannot be evaluated."""
    try:
        return np.broadcast_to(np.asarray(fn(x1, x2), dtype=float), x1.shape), np.ones(x1.shape, bool)
    except FinslerError:
        pass
    vals, keep = np.zeros(x1.shape), np.zeros(x1.shape, bool)
    for i, (a, b) in enumerate(zip(x1, x2)):
        try:
            vals[i] = float(fn(a, b))
            keep[i] = True
        except FinslerError:
            continue
    return vals, keep


def _degeneracy(metric: Metric, grid: an.Grid) -> dict:
    x1, x2 = grid.base_points()
    if isinstance(metric, KropinaMetric):
        check, tol, fn = "conic invariant AD^2 - BD + C", CONIC_TOL, metric.delta
    elif isinstance(metric, CubicMetric):
        check, tol = "cubic discriminant", CUBIC_TOL

        def fn(a, b):
            return cubic_discriminant_values(*metric.coefficient_values(a, b))
    else:
        return _not_applicable(f"no degeneracy test for {metric.kind}")
    vals, keep = _base_values(fn, x1, x2)
    if not keep.any():
        return {"verdict": "pass", "check": check, "reason": "not evaluable anywhere on the grid"}
    mag = np.where(keep, np.abs(vals), np.inf)
    i = int(np.argmin(mag))
    return {
        "verdict": "pass" if mag[i] < tol else "fail",
        "check": check,
        "min_abs_value": float(mag[i]),
        "at_point": [float(x1[i]), float(x2[i])],
    }


def _parabolic(config: RunConfig, metric: Metric, grid: an.Grid) -> dict:
    if not isinstance(metric, KropinaMetric):
        return _not_applicable("parabolic type is defined for Kropina metrics")
    x1, x2 = grid.base_points()
    vals, keep = _base_values(lambda a, b: parabolic_phi_check(metric, a, b), x1, x2)
    if not keep.any():
        return _not_applicable("4AC - B^2 not evaluable on the grid")
    mag = np.where(keep, np.abs(vals), -np.inf)
    i = int(np.argmax(mag))
    return _verdict(config, "4AC - B^2", float(mag[i]), (float(x1[i]), float(x2[i])))


def classify(config: RunConfig) -> dict:
    metric, grid = config.metric(), config.grid
    flags: dict[str, dict] = {}
    flags["degenerate"] = _degeneracy(metric, grid)
    if flags["degenerate"]["verdict"] == "pass":
        for name in FLAGS[1:]:
            flags[name] = _not_applicable("metric is degenerate")
        return flags
    flags["projective"] = _from_report(config, an.projectivity_report(metric, grid))
    if flags["projective"]["verdict"] == "pass":
        flags["minkowski"] = _from_report(config, an.minkowski_report(metric, grid))
        flags["constant_curvature_necessary"] = _from_report(config, an.skewness_report(metric, grid))
    else:
        reason = "p-functions need projective coordinates"
        flags["minkowski"] = _not_applicable(reason)
        flags["constant_curvature_necessary"] = _not_applicable(reason)
    flags["parabolic_type"] = _parabolic(config, metric, grid)
    return {name: flags[name] for name in FLAGS}


def cmd_classify(config: RunConfig) -> int:
    flags = classify(config)
    if config.fmt == "csv":
        rows = [[name, f["verdict"], f.get("residual", f.get("min_abs_value", "")), *_point(f.get("at_point"))[:4]] for name, f in flags.items()]
        _emit(config, _csv(["flag", "verdict", "witness", "x1", "x2", "X", "Y"], rows))
    else:
        _emit(config, _dumps(dict(config.echo(), flags=flags, grid=config.grid.describe())))
    return EXIT_PASS


# -- geodesic ---------------------------------------------------------------


def cmd_geodesic(config: RunConfig, args: argparse.Namespace) -> int:
    x0 = _floats(args.x0, 2, "--x0")
    v0 = _floats(args.v0, 2, "--v0")
    box = None if args.box is None else tuple(_floats(args.box, 4, "--box"))
    if args.steps < 16:
        raise UsageError("--steps must be at least 16")
    metric = config.metric()
    try:
        trace = geo.integrate_geodesic(metric, x0, v0, args.t_end, args.steps, box)  # type: ignore[arg-type]
    except ImmediateSingularity as err:
        doc = dict(config.echo(), start=[*x0, *v0], termination="immediate-singularity", error=str(err))
        _write_geodesic(config, None, doc)
        print(f"error: {err}", file=sys.stderr)
        return EXIT_FAIL
    doc = dict(config.echo(), **trace.summary())
    _write_geodesic(config, trace, doc)
    return EXIT_PASS if trace.completed else EXIT_FAIL


def _write_geodesic(config: RunConfig, trace: geo.GeodesicTrace | None, doc: dict) -> None:
    if config.out:
        if trace is not None:
            Path(config.out + ".csv").write_text(trace.to_csv())
        Path(config.out + ".json").write_text(_dumps(doc))
    elif config.fmt == "csv" and trace is not None:
        sys.stdout.write(trace.to_csv())
    else:
        sys.stdout.write(_dumps(doc))


# -- suite ------------------------------------------------------------------


def _load_corpus(path: str) -> list[dict]:
    doc = _read_json(path, "--corpus")
    entries = doc.get("metrics") if isinstance(doc, dict) else doc
    if not isinstance(entries, list) or not entries:
        raise UsageError("corpus is empty; expected a non-empty list of {name, metric, expect} entries")
    out = []
    for i, entry in enumerate(entries):
        if not isinstance(entry, dict) or "metric" not in entry or not isinstance(entry.get("expect"), dict):
            raise UsageError(f"corpus entry {i} needs 'metric' and 'expect' objects")
        bad = set(entry["expect"]) - set(FLAGS)
        if bad:
            raise UsageError(f"corpus entry {i} expects unknown flags: {', '.join(sorted(bad))}")
        out.append({"name": str(entry.get("name", f"metric {i + 1}")), "spec": MetricSpec.from_dict(entry["metric"]), "expect": entry["expect"]})
    return out


def _corpus_rows(config: RunConfig, corpus: list[dict]) -> list[dict]:
    rows = []
    for i, entry in enumerate(corpus, 1):
        row = {"id": i, "title": entry["name"], "expect": entry["expect"]}
        try:
            flags = classify(RunConfig(entry["spec"], config.grid, config.order, seed=config.seed,
                                       threshold_pass=config.threshold_pass, threshold_fail=config.threshold_fail))
            got = {name: flags[name]["verdict"] for name in entry["expect"]}
            row.update(got=got, passed=got == entry["expect"])
        except FinslerError as err:
            row.update(error=f"{type(err).__name__}: {err}", passed=False)
        rows.append(row)
    return rows


def cmd_suite(config: RunConfig, corpus_path: str | None) -> int:
    seed = acceptance.DEFAULT_SEED if config.seed is None else config.seed
    if corpus_path is not None:
        rows = _corpus_rows(config, _load_corpus(corpus_path))
        doc = {"seed": seed, "passed": all(r["passed"] for r in rows), "rows": rows}
    else:
        results = acceptance.run_all(seed)
        rows = [r.to_dict() for r in results]
        doc = json.loads(acceptance.report_json(results, seed))
    table = "".join(f"[{'PASS' if r['passed'] else 'FAIL'}] {r['id']:2d}. {r['title']}\n" for r in rows)
    if config.fmt == "csv":
        body = _csv(["id", "title", "passed"], [[r["id"], r["title"], r["passed"]] for r in rows])
    else:
        body = _dumps(doc)
    if config.out:
        Path(config.out).write_text(body)
        sys.stdout.write(table)
    else:
        sys.stdout.write(table + body)
    return EXIT_PASS if doc["passed"] else EXIT_FAIL


# -- argument parsing -------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--metric", help="metric spec or config: a JSON file path or inline JSON")
    common.add_argument("--grid", help="x1min,x1max,x2min,x2max,n1,n2")
    common.add_argument("--dirs", type=int, help="number of unit directions per base point")
    common.add_argument("--order", type=int, help="jet order, 2..6")
    common.add_argument("--out", help="output path (geodesic: file prefix)")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--seed", type=int, help="seed for direction jitter and acceptance draws")
    common.add_argument("--threshold-pass", type=float, default=1e-8)
    common.add_argument("--threshold-fail", type=float, default=1e-3)
    common.add_argument("--workers", type=int, help="thread workers for grid evaluation (default: CPU count)")

    parser = argparse.ArgumentParser(prog="finsler2d", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("classify", parents=[common], help="run the taxonomy checks on one metric")
    res = sub.add_parser("residuals", parents=[common], help="evaluate one residual system on a grid")
    res.add_argument("--system", required=True, help=", ".join(SYSTEMS))
    res.add_argument("--variant", help="equation variant for I and constant-curvature: corrected or printed")
    geo_p = sub.add_parser("geodesic", parents=[common], help="integrate one geodesic")
    geo_p.add_argument("--x0", required=True, help="a,b")
    geo_p.add_argument("--v0", required=True, help="c,d")
    geo_p.add_argument("--t-end", type=float, default=1.0)
    geo_p.add_argument("--steps", type=int, default=200)
    geo_p.add_argument("--box", help="x1min,x1max,x2min,x2max; halt when leaving it")
    suite = sub.add_parser("suite", parents=[common], help="run the acceptance matrix or a classification corpus")
    suite.add_argument("--corpus", help="JSON list of {name, metric, expect} entries")
    return parser


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args)
        if args.command == "classify":
            return cmd_classify(config)
        if args.command == "residuals":
            return cmd_residuals(config, args.system, args.variant)
        if args.command == "geodesic":
            return cmd_geodesic(config, args)
        return cmd_suite(config, args.corpus)
    except (UsageError, OSError, *CONFIG_ERRORS) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except FinslerError as err:
        print(f"check failed: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_FAIL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
