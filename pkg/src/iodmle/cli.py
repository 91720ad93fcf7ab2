"""Command-line interface: simulate, solve, bench, trs-check.

Machine-readable output goes to standard output as JSON (or files); human
text and progress go to standard error.  Exit codes: 0 success, 1 usage or
invalid input, 2 estimator failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import itertools
import json
import logging
import sys
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator

from . import bench, mle, trilat, trs
from .frames import GeodeticCoord, KeplerianElements, StateVector
from .measmodel import MeasurementSet, NoiseFamily, RadarSite
from .scenario import DEFAULT_KAPPA, DEFAULT_SIGMA_DOPPLER, DEFAULT_SIGMA_RANGE

EXIT_OK, EXIT_USAGE, EXIT_ESTIMATOR, EXIT_IO = 0, 1, 2, 3
MEASUREMENT_FORMAT = "iodmle.measurements/1"

log = logging.getLogger("iodmle")

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_FAMILIES = [f.value for f in NoiseFamily]
_VEC3 = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

SCENARIO_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "objects": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": [
                    "semi_major_axis_km",
                    "eccentricity",
                    "inclination_deg",
                    "raan_deg",
                    "arg_perigee_deg",
                ],
                "properties": {
                    "semi_major_axis_km": _POSITIVE,
                    "eccentricity": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
                    "inclination_deg": {"type": "number", "minimum": 0, "maximum": 180},
                    "raan_deg": {"type": "number"},
                    "arg_perigee_deg": {"type": "number"},
                    "mean_anomaly_deg": {"type": "number"},
                },
            },
        },
        "sites": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["latitude_deg", "longitude_deg", "carrier_hz"],
                "properties": {
                    "latitude_deg": {"type": "number", "minimum": -90, "maximum": 90},
                    "longitude_deg": {"type": "number"},
                    "altitude_m": {"type": "number"},
                    "carrier_hz": _POSITIVE,
                },
            },
        },
        "noise_family": {"enum": _FAMILIES},
        "sigma_range": _POSITIVE,
        "sigma_doppler": _POSITIVE,
        "kappa": _POSITIVE,
        "measurements_per_site": {"type": "integer", "minimum": 1, "maximum": 5},
        "trials": {"type": "integer", "minimum": 1},
        "base_seed": {"type": "integer", "minimum": 0},
        "estimators": {
            "type": "array",
            "minItems": 1,
            "uniqueItems": True,
            "items": {"enum": list(bench.ESTIMATORS)},
        },
        "solver": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "max_iterations": {"type": "integer", "minimum": 1},
                "rel_cost_tolerance": _POSITIVE,
                "trs_method": {"enum": ["eigen", "secular"]},
                "accelerate": {"type": "boolean"},
            },
        },
        "sweep": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "measurements_per_site": {
                    "type": "array",
                    "minItems": 1,
                    "items": {"type": "integer", "minimum": 1, "maximum": 5},
                },
                "noise_family": {"type": "array", "minItems": 1, "items": {"enum": _FAMILIES}},
                "sigma_range": {"type": "array", "minItems": 1, "items": _POSITIVE},
                "sigma_doppler": {"type": "array", "minItems": 1, "items": _POSITIVE},
                "kappa": {"type": "array", "minItems": 1, "items": _POSITIVE},
            },
        },
    },
}

MEASUREMENT_SCHEMA = {
    "type": "object",
    "required": ["format", "sites", "objects"],
    "properties": {
        "format": {"const": MEASUREMENT_FORMAT},
        "sites": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["position_m", "carrier_hz", "sigma_range", "sigma_doppler", "kappa"],
                "properties": {
                    "position_m": _VEC3,
                    "carrier_hz": _POSITIVE,
                    "sigma_range": _POSITIVE,
                    "sigma_doppler": _POSITIVE,
                    "kappa": _POSITIVE,
                },
            },
        },
        "objects": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["object_index", "measurements"],
                "properties": {
                    "object_index": {"type": "integer", "minimum": 0},
                    "measurements": {
                        "type": "object",
                        "required": ["site_index", "ranges", "directions", "dopplers"],
                        "properties": {
                            "site_index": {"type": "array", "items": {"type": "integer", "minimum": 0}},
                            "ranges": {"type": "array", "items": {"type": "number"}},
                            "directions": {"type": "array", "items": _VEC3},
                            "dopplers": {"type": "array", "items": {"type": "number"}},
                        },
                    },
                    "truth": {
                        "type": "object",
                        "required": ["position_m", "velocity_mps"],
                        "properties": {"position_m": _VEC3, "velocity_mps": _VEC3},
                    },
                },
            },
        },
    },
}


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- file input


def _pointer(path):
    return "/" + "/".join(str(p) for p in path)


def validate(document, schema, source):
    errors = sorted(Draft202012Validator(schema).iter_errors(document), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{source}: {_pointer(e.absolute_path)}: {e.message}" for e in errors]
        raise CliError("schema violation\n  " + "\n  ".join(lines), EXIT_USAGE)


def read_json(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc.strerror or exc}", EXIT_IO) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise CliError(
            f"{path}: malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", EXIT_USAGE
        ) from exc


def write_text(path, text):
    try:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc.strerror or exc}", EXIT_IO) from exc


def load_scenario(path):
    doc = read_json(path)
    validate(doc, SCENARIO_SCHEMA, path)
    return doc


def scenario_config(doc, **overrides) -> bench.ScenarioConfig:
    """Base configuration of a scenario document (sweep axes ignored)."""
    kwargs = {}
    if "objects" in doc:
        kwargs["objects"] = [
            KeplerianElements.from_table(
                o["semi_major_axis_km"],
                o["eccentricity"],
                o["inclination_deg"],
                o["raan_deg"],
                o["arg_perigee_deg"],
                o.get("mean_anomaly_deg", 0.0),
            )
            for o in doc["objects"]
        ]
    if "sites" in doc:
        kwargs["sites"] = [
            (
                GeodeticCoord.from_degrees(s["latitude_deg"], s["longitude_deg"], s.get("altitude_m", 0.0)),
                float(s["carrier_hz"]),
            )
            for s in doc["sites"]
        ]
    for key in (
        "noise_family",
        "sigma_range",
        "sigma_doppler",
        "kappa",
        "measurements_per_site",
        "trials",
        "base_seed",
        "estimators",
    ):
        if key in doc:
            kwargs[key] = doc[key]
    kwargs["solver"] = mle.SolverConfig(**doc.get("solver", {}))
    kwargs.update(overrides)
    try:
        return bench.ScenarioConfig(**kwargs)
    except (ValueError, TypeError) as exc:
        raise CliError(f"invalid scenario: {exc}", EXIT_USAGE) from exc


def sweep_levels(doc):
    """Noise levels (sigma_range, sigma_doppler, kappa) in sweep order."""
    sweep = doc.get("sweep", {})
    return list(
        itertools.product(
            sweep.get("sigma_range", [doc.get("sigma_range", DEFAULT_SIGMA_RANGE)]),
            sweep.get("sigma_doppler", [doc.get("sigma_doppler", DEFAULT_SIGMA_DOPPLER)]),
            sweep.get("kappa", [doc.get("kappa", DEFAULT_KAPPA)]),
        )
    )


def sweep_cells(doc):
    """(family, measurements per site) pairs evaluated at every noise level."""
    sweep = doc.get("sweep", {})
    families = sweep.get("noise_family", [doc.get("noise_family", NoiseFamily.GAUSSIAN.value)])
    multiplicity = sweep.get("measurements_per_site", [doc.get("measurements_per_site", 1)])
    return list(itertools.product(families, multiplicity))


# ------------------------------------------------------------ measurement file


def measurement_document(config: bench.ScenarioConfig, seed, strip_truth=False):
    sites = config.radar_sites()
    objects = []
    for k in range(len(config.objects)):
        truth, data = bench.simulate_trial(config, k, 0, sites)
        entry = {
            "object_index": k,
            "measurements": {
                "site_index": data.site_index.tolist(),
                "ranges": data.ranges.tolist(),
                "directions": data.directions.tolist(),
                "dopplers": data.dopplers.tolist(),
            },
        }
        if not strip_truth:
            entry["truth"] = {
                "position_m": truth.position.tolist(),
                "velocity_mps": truth.velocity.tolist(),
            }
        objects.append(entry)
    return {
        "format": MEASUREMENT_FORMAT,
        "seed": seed,
        "noise_family": config.noise_family.value,
        "measurements_per_site": config.measurements_per_site,
        "sites": [
            {
                "position_m": s.position.tolist(),
                "carrier_hz": s.carrier_frequency,
                "sigma_range": s.sigma_range,
                "sigma_doppler": s.sigma_doppler,
                "kappa": s.kappa,
            }
            for s in sites
        ],
        "objects": objects,
    }


def parse_measurements(doc, source):
    validate(doc, MEASUREMENT_SCHEMA, source)
    sites = [
        RadarSite(s["position_m"], s["carrier_hz"], s["sigma_range"], s["sigma_doppler"], s["kappa"])
        for s in doc["sites"]
    ]
    entries = []
    for pos, obj in enumerate(doc["objects"]):
        m = obj["measurements"]
        n = len(m["ranges"])
        if not (len(m["site_index"]) == len(m["directions"]) == len(m["dopplers"]) == n) or n == 0:
            raise CliError(f"{source}: /objects/{pos}/measurements: array lengths differ or are empty", EXIT_USAGE)
        if max(m["site_index"]) >= len(sites):
            raise CliError(f"{source}: /objects/{pos}/measurements/site_index: index out of range", EXIT_USAGE)
        data = MeasurementSet(m["ranges"], m["directions"], m["dopplers"], m["site_index"])
        truth = None
        if "truth" in obj:
            truth = StateVector(obj["truth"]["position_m"], obj["truth"]["velocity_mps"])
        entries.append((obj["object_index"], data, truth))
    return sites, entries


# ------------------------------------------------------------------ commands


def _emit(payload):
    sys.stdout.write(json.dumps(payload, indent=2) + "\n")


def cmd_simulate(args):
    doc = load_scenario(args.scenario)
    overrides = {} if args.seed is None else {"base_seed": args.seed}
    config = scenario_config(doc, **overrides)
    out = measurement_document(config, config.base_seed, args.strip_truth)
    write_text(args.output, json.dumps(out, indent=2) + "\n")
    log.info("wrote %d object(s), %d triples each, to %s", len(out["objects"]), config.radar_count, args.output)
    return EXIT_OK


def cmd_solve(args):
    doc = read_json(args.measurements)
    sites, entries = parse_measurements(doc, args.measurements)
    if args.object is not None:
        entries = [e for e in entries if e[0] == args.object]
        if not entries:
            raise CliError(f"no object with index {args.object}", EXIT_USAGE)
    if args.estimator == "trilateration":
        bad = [k for k, data, _ in entries if len(data) != 3]
        if bad:
            raise CliError(f"trilateration needs exactly 3 triples; object(s) {bad} have a different count", EXIT_USAGE)
    config = mle.SolverConfig(
        max_iterations=args.max_iterations,
        rel_cost_tolerance=args.tolerance,
        trs_method=args.trs_method,
        accelerate=not args.no_accelerate,
    )
    results = []
    failed = False
    for k, data, truth in entries:
        row = {"object_index": k, "estimator": args.estimator}
        try:
            if args.estimator == "mle":
                estimate, report = mle.solve(data, sites, config)
                row.update(
                    converged=report.converged,
                    iterations=report.iterations,
                    cost_trace_length=len(report.cost_trace),
                    final_relaxed_cost=report.final_relaxed_cost,
                    final_original_cost=report.final_original_cost,
                )
            else:
                estimate = trilat.trilaterate_measurements(data, sites)
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            failed = True
            row["failure"] = f"{type(exc).__name__}: {exc}"
            log.error("object %d: %s failed: %s", k, args.estimator, exc)
        else:
            row["position_m"] = estimate.position.tolist()
            row["velocity_mps"] = estimate.velocity.tolist()
            if truth is not None:
                names = bench.ERROR_FIELDS
                row["errors"] = dict(zip(names, bench.error_metric(estimate, truth)))
        results.append(row)
    _emit({"results": results})
    return EXIT_ESTIMATOR if failed else EXIT_OK


def _level_config(doc, level, family, per_site, seed):
    sigma_range, sigma_doppler, kappa = level
    overrides = dict(
        sigma_range=sigma_range,
        sigma_doppler=sigma_doppler,
        kappa=kappa,
        noise_family=family,
        measurements_per_site=per_site,
    )
    if seed is not None:
        overrides["base_seed"] = seed
    return scenario_config(doc, **overrides)


def cmd_bench(args):
    doc = load_scenario(args.scenario)
    levels = sweep_levels(doc)
    cells = sweep_cells(doc)
    configs = [
        [_level_config(doc, level, fam, per, args.seed) for fam, per in cells] for level in levels
    ]
    n_cells = len(levels) * len(cells)
    runs = sum(len(c.objects) * c.trials * len(c.active_estimators()) for row in configs for c in row)
    if args.dry_run:
        _emit({"cells": n_cells, "noise_levels": len(levels), "estimator_runs": runs})
        return EXIT_OK
    jobs = args.jobs if args.jobs is not None else bench.default_jobs()
    out_root = Path(args.output)
    index = []
    done = 0
    for li, (level, row) in enumerate(zip(levels, configs)):
        results = []
        for config in row:
            done += 1
            log.info(
                "cell %d/%d: sigma_range=%g sigma_doppler=%g kappa=%g %s radars=%d",
                done,
                n_cells,
                *level,
                config.noise_family.value,
                config.radar_count,
            )
            results.extend(bench.run_monte_carlo(config, jobs=jobs))
        target = out_root if len(levels) == 1 else out_root / f"level_{li:02d}"
        try:
            bench.export_results(results, bench.summarize(results), target)
        except OSError as exc:
            raise CliError(str(exc), EXIT_IO) from exc
        index.append(
            {"directory": target.name if len(levels) > 1 else ".", "sigma_range": level[0], "sigma_doppler": level[1], "kappa": level[2]}
        )
    if len(levels) > 1:
        write_text(out_root / "index.json", json.dumps({"levels": index}, indent=2) + "\n")
    log.info("results written under %s", out_root)
    return EXIT_OK


def trs_check(count, seed, tolerance):
    """Run both TRS solvers on ``count`` random instances; returns the report dict."""
    worst_kkt = worst_lam = worst_y = 0.0
    failing = []
    for k in range(count):
        problem = trs.random_problem(np.random.default_rng([seed, k]))
        try:
            a = trs.solve_trs_eigen(problem)
        except trs.TrsNumericalError:
            failing.append(k)
            continue
        b = trs.solve_trs_secular(problem)
        kkt = max(trs.check_kkt(problem, a).max_scaled(), trs.check_kkt(problem, b).max_scaled())
        dlam = abs(a.lambda_star - b.lambda_star) / (1.0 + abs(b.lambda_star))
        dy = float(np.linalg.norm(a.y_star - b.y_star)) / problem.radius
        worst_kkt, worst_lam, worst_y = max(worst_kkt, kkt), max(worst_lam, dlam), max(worst_y, dy)
        if max(kkt, dlam, dy) > tolerance:
            failing.append(k)
    report = {
        "count": count,
        "seed": seed,
        "tolerance": tolerance,
        "max_kkt_scaled": worst_kkt,
        "max_lambda_disagreement": worst_lam,
        "max_y_disagreement": worst_y,
        "passed": not failing,
        "failing_instances": [[seed, k] for k in failing],
    }
    if count == 0:
        report["note"] = "no instances generated; vacuous pass"
    return report


def cmd_trs_check(args):
    if args.count < 0:
        raise CliError("--count must be non-negative", EXIT_USAGE)
    if args.tolerance < 0:
        raise CliError("--tolerance must be non-negative", EXIT_USAGE)
    report = trs_check(args.count, args.seed, args.tolerance)
    _emit(report)
    if not report["passed"]:
        log.error(
            "%d instance(s) exceed tolerance %g; replay with numpy.random.default_rng([seed, index])",
            len(report["failing_instances"]),
            args.tolerance,
        )
        return EXIT_ESTIMATOR
    return EXIT_OK


# ------------------------------------------------------------------- parser


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="iodmle", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="synthesize a measurement file from a scenario")
    p.add_argument("scenario")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--seed", type=int, help="override the scenario's base_seed")
    p.add_argument("--strip-truth", action="store_true", help="omit the true states")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("solve", help="estimate states from a measurement file")
    p.add_argument("measurements")
    p.add_argument("--estimator", choices=bench.ESTIMATORS, default="mle")
    p.add_argument("--object", type=int, help="only this object index")
    p.add_argument("--max-iterations", type=int, default=500)
    p.add_argument("--tolerance", type=float, default=1e-10)
    p.add_argument("--trs-method", choices=["eigen", "secular"], default="eigen")
    p.add_argument("--no-accelerate", action="store_true", help="plain block passes only")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("bench", help="run a Monte Carlo sweep")
    p.add_argument("scenario")
    p.add_argument("-o", "--output", default="bench-out")
    p.add_argument("--seed", type=int, help="override the scenario's base_seed")
    p.add_argument("--jobs", type=int, help=f"worker processes (default: ${bench.JOBS_ENV} or 1)")
    p.add_argument("--dry-run", action="store_true", help="validate and count cells only")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("trs-check", help="cross-check the two trust-region solvers")
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-8)
    p.set_defaults(func=cmd_trs_check)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except CliError as exc:
        log.error("%s", exc)
        return exc.code
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
