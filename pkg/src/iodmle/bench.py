"""Monte Carlo harness: simulate noisy measurements of the reference objects,
run the estimators, and collect error statistics.

Every trial draws its noise from its own generator seeded by
``(base_seed, object_index, trial_index)``, so a trial can be replayed in
isolation and results do not depend on scheduling.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import mle, trilat
from .frames import KeplerianElements, StateVector, kepler_to_cartesian
from .measmodel import NoiseFamily, apply_noise, ideal_measurements
from .scenario import (
    DEFAULT_KAPPA,
    DEFAULT_SIGMA_DOPPLER,
    DEFAULT_SIGMA_RANGE,
    make_sites,
    reference_objects,
    reference_site_coords,
)

log = logging.getLogger(__name__)

JOBS_ENV = "IODMLE_JOBS"
ESTIMATORS = ("mle", "trilateration")
ERROR_FIELDS = ("epsilon_position", "epsilon_velocity", "norm_error_position", "norm_error_velocity")
CSV_COLUMNS = (
    "object_index",
    "trial_index",
    "estimator",
    "radar_count",
    "noise_family",
    *ERROR_FIELDS,
    "iterations",
    "failure",
)
PAIRED_COLUMNS = (
    "object_index",
    "trial_index",
    "radar_count",
    "noise_family",
    *(f"diff_{name}" for name in ERROR_FIELDS),
)


class PairingError(ValueError):
    pass


class ExportError(OSError):
    pass


def default_jobs():
    """Worker count from the environment, 1 when unset."""
    raw = os.environ.get(JOBS_ENV, "").strip()
    if not raw:
        return 1
    try:
        jobs = int(raw)
    except ValueError:
        raise ValueError(f"{JOBS_ENV} must be a positive integer, got {raw!r}") from None
    if jobs < 1:
        raise ValueError(f"{JOBS_ENV} must be a positive integer, got {raw!r}")
    return jobs


@dataclass(frozen=True)
class ScenarioConfig:
    objects: tuple = field(default_factory=lambda: tuple(reference_objects()))
    sites: tuple = field(default_factory=lambda: tuple(reference_site_coords()))
    noise_family: NoiseFamily = NoiseFamily.GAUSSIAN
    sigma_range: float = DEFAULT_SIGMA_RANGE
    sigma_doppler: float = DEFAULT_SIGMA_DOPPLER
    kappa: float = DEFAULT_KAPPA
    measurements_per_site: int = 1
    trials: int = 100
    base_seed: int = 0
    estimators: tuple = ESTIMATORS
    solver: mle.SolverConfig = field(default_factory=mle.SolverConfig)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "sites", tuple(self.sites))
        object.__setattr__(self, "noise_family", NoiseFamily(self.noise_family))
        object.__setattr__(self, "estimators", tuple(self.estimators))
        if not self.objects:
            raise ValueError("at least one object is required")
        if not all(isinstance(o, KeplerianElements) for o in self.objects):
            raise TypeError("objects must be KeplerianElements")
        if not self.sites:
            raise ValueError("at least one site is required")
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not 1 <= self.measurements_per_site <= 5:
            raise ValueError("measurements_per_site must be in [1, 5]")
        for name in ("sigma_range", "sigma_doppler", "kappa"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be positive and finite, got {value}")
        unknown = set(self.estimators) - set(ESTIMATORS)
        if unknown or not self.estimators:
            raise ValueError(f"estimators must be a non-empty subset of {ESTIMATORS}")

    @property
    def radar_count(self):
        return len(self.sites) * self.measurements_per_site

    def active_estimators(self):
        """Requested estimators that apply; trilateration needs exactly three triples."""
        return tuple(e for e in self.estimators if e != "trilateration" or self.radar_count == 3)

    def radar_sites(self):
        return make_sites(self.sites, self.sigma_range, self.sigma_doppler, self.kappa)


@dataclass
class TrialResult:
    object_index: int
    trial_index: int
    estimator: str
    radar_count: int
    noise_family: str
    epsilon_position: float | None = None
    epsilon_velocity: float | None = None
    norm_error_position: float | None = None
    norm_error_velocity: float | None = None
    iterations: int | None = None
    wall_time: float = math.nan
    failure: str | None = None

    def key(self):
        return (self.object_index, self.trial_index, self.radar_count, self.noise_family)

    def sort_key(self):
        return (self.object_index, self.trial_index, ESTIMATORS.index(self.estimator))


def error_metric(estimate: StateVector, truth: StateVector):
    """Squared and plain Euclidean errors: (eps_pos, eps_vel, norm_pos, norm_vel)."""
    dx = np.asarray(estimate.position, dtype=float) - np.asarray(truth.position, dtype=float)
    dv = np.asarray(estimate.velocity, dtype=float) - np.asarray(truth.velocity, dtype=float)
    eps_x = float(dx @ dx)
    eps_v = float(dv @ dv)
    return eps_x, eps_v, math.sqrt(eps_x), math.sqrt(eps_v)


def trial_rng(base_seed, object_index, trial_index):
    return np.random.default_rng([base_seed, object_index, trial_index])


def simulate_trial(config: ScenarioConfig, object_index, trial_index, sites=None):
    """Truth state and one noisy measurement set for the given trial."""
    sites = config.radar_sites() if sites is None else sites
    truth = kepler_to_cartesian(config.objects[object_index])
    ideal = ideal_measurements(truth, sites, config.measurements_per_site)
    rng = trial_rng(config.base_seed, object_index, trial_index)
    return truth, apply_noise(ideal, config.noise_family, sites, rng)


def _run_estimator(name, data, sites, solver):
    if name == "mle":
        estimate, report = mle.solve(data, sites, solver)
        return estimate, report.iterations
    return trilat.trilaterate_measurements(data, sites), 0


def run_trial(config: ScenarioConfig, object_index, trial_index, sites=None):
    """Results of every applicable estimator on one shared noisy measurement set."""
    sites = config.radar_sites() if sites is None else sites
    truth, data = simulate_trial(config, object_index, trial_index, sites)
    out = []
    for name in config.active_estimators():
        row = TrialResult(
            object_index, trial_index, name, config.radar_count, config.noise_family.value
        )
        start = time.perf_counter()
        try:
            estimate, row.iterations = _run_estimator(name, data, sites, config.solver)
            errors = error_metric(estimate, truth)
            if not all(math.isfinite(e) for e in errors):
                raise mle.DivergenceError("non-finite estimate")
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            row.iterations = None
            row.failure = type(exc).__name__
            log.info("object %d trial %d %s failed: %s", object_index, trial_index, name, exc)
        else:
            (
                row.epsilon_position,
                row.epsilon_velocity,
                row.norm_error_position,
                row.norm_error_velocity,
            ) = errors
        row.wall_time = time.perf_counter() - start
        out.append(row)
    return out


def _run_object(config, object_index):
    sites = config.radar_sites()
    rows = []
    for trial in range(config.trials):
        rows.extend(run_trial(config, object_index, trial, sites))
    return rows


def run_monte_carlo(config: ScenarioConfig, jobs=1):
    """All objects x trials, sorted by (object, trial, estimator)."""
    if jobs < 1:
        raise ValueError("jobs must be at least 1")
    indices = range(len(config.objects))
    if jobs == 1 or len(config.objects) == 1:
        chunks = [_run_object(config, k) for k in indices]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_object, [config] * len(indices), indices))
    rows = [r for chunk in chunks for r in chunk]
    rows.sort(key=TrialResult.sort_key)
    return rows


# ------------------------------------------------------------------ statistics


def order_stats(values):
    """Median, type-7 quartiles, extremes and mean of a non-empty sample."""
    a = np.asarray(values, dtype=float)
    q1, median, q3 = np.quantile(a, [0.25, 0.5, 0.75])
    return {
        "median": float(median),
        "q1": float(q1),
        "q3": float(q3),
        "min": float(a.min()),
        "max": float(a.max()),
        "mean": float(a.mean()),
    }


@dataclass
class SummaryStats:
    # estimator -> radar_count -> noise_family -> object ("all" pools objects) -> stats
    groups: dict
    notes: list = field(default_factory=list)

    def get(self, estimator, radar_count, noise_family, obj="all"):
        return self.groups[estimator][str(radar_count)][str(noise_family)][str(obj)]

    def to_dict(self):
        return {"groups": self.groups, "notes": list(self.notes)}


def _group_stats(rows):
    ok = [r for r in rows if r.failure is None]
    entry = {"count": len(rows), "failures": len(rows) - len(ok)}
    if ok:
        for name in ERROR_FIELDS:
            entry[name] = order_stats([getattr(r, name) for r in ok])
    return entry


def summarize(results) -> SummaryStats:
    """Order statistics per (estimator, radar count, noise family, object)."""
    buckets = {}
    for r in results:
        head = (r.estimator, str(r.radar_count), r.noise_family)
        buckets.setdefault(head, {}).setdefault(str(r.object_index), []).append(r)
    groups = {}
    notes = []
    for head in sorted(buckets, key=lambda h: (ESTIMATORS.index(h[0]), int(h[1]), h[2])):
        by_object = buckets[head]
        target = groups.setdefault(head[0], {}).setdefault(head[1], {}).setdefault(head[2], {})
        pooled = []
        for obj in sorted(by_object, key=int):
            pooled.extend(by_object[obj])
            target[obj] = _group_stats(by_object[obj])
        target["all"] = _group_stats(pooled)
        for obj, entry in target.items():
            if entry["failures"] == entry["count"]:
                notes.append(
                    f"{head[0]}/{head[1]}/{head[2]}/{obj}: every trial failed, error statistics omitted"
                )
    return SummaryStats(groups, notes)


def paired_error_difference(results_a, results_b, field="epsilon_position"):
    """Per-trial ``a - b`` of one error field, matched on (object, trial, radar count, noise).

    A pair where either side failed yields NaN.
    """
    if field not in ERROR_FIELDS:
        raise ValueError(f"unknown error field {field!r}")
    a = {r.key(): r for r in results_a}
    b = {r.key(): r for r in results_b}
    if len(a) != len(results_a) or len(b) != len(results_b):
        raise PairingError("duplicate trial keys within one result list")
    if a.keys() != b.keys():
        missing = sorted(a.keys() ^ b.keys())
        raise PairingError(f"trial keys differ, e.g. {missing[:3]}")
    out = []
    for key in sorted(a):
        va, vb = getattr(a[key], field), getattr(b[key], field)
        out.append(math.nan if va is None or vb is None else va - vb)
    return out


def paired_rows(results):
    """Trilateration-minus-MLE differences of every error field, one row per trial."""
    tri = [r for r in results if r.estimator == "trilateration"]
    if not tri:
        return []
    # only cells where trilateration ran (three triples) have partners
    cells = {(r.radar_count, r.noise_family) for r in tri}
    est = [r for r in results if r.estimator == "mle" and (r.radar_count, r.noise_family) in cells]
    keys = sorted(r.key() for r in tri)
    diffs = {name: paired_error_difference(tri, est, name) for name in ERROR_FIELDS}
    return [
        (*key, *(diffs[name][i] for name in ERROR_FIELDS)) for i, key in enumerate(keys)
    ]


# --------------------------------------------------------------------- export


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def export_results(results, stats: SummaryStats, path):
    """Write ``results.csv``, ``summary.json`` and, when trilateration ran, ``paired.csv``.

    Returns the list of files written.
    """
    out = Path(path)
    written = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "results.csv"
        _write_csv(csv_path, CSV_COLUMNS, ([getattr(r, c) for c in CSV_COLUMNS] for r in results))
        written.append(csv_path)
        json_path = out / "summary.json"
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(stats.to_dict(), fh, indent=2, allow_nan=False)
            fh.write("\n")
        written.append(json_path)
        pairs = paired_rows(results)
        if pairs:
            paired_path = out / "paired.csv"
            _write_csv(paired_path, PAIRED_COLUMNS, pairs)
            written.append(paired_path)
    except OSError as exc:
        raise ExportError(f"cannot write results under {out}: {exc}") from exc
    return written


def _parse(value, kind):
    if value == "":
        return None
    return kind(value)


def read_results(path):
    """Parse a ``results.csv`` back into TrialResult rows (wall time is not stored)."""
    kinds = {name: float for name in ERROR_FIELDS}
    kinds.update(object_index=int, trial_index=int, radar_count=int, iterations=int)
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        for rec in reader:
            values = {k: _parse(v, kinds.get(k, str)) for k, v in rec.items()}
            rows.append(TrialResult(**values))
    return rows
