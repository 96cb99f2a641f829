"""Monte Carlo experiment runner and result emission.

A replicate generates (or shuffles) one dataset, masks it, then for every
``m`` in the grid partitions it and runs each requested estimator. Cells are
aggregated in replicate-index order, so output never depends on the thread
budget or on the order estimators are listed in the plan.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .cluster import CommLedger, WorkerError, partition_even
from .csvio import ingest_csv
from .estimators import (
    DEFAULT_T_MAX,
    DEFAULT_TOL,
    ESTIMATORS,
    EstimateReport,
    classical_kernel_mu,
    classical_sieve_mu,
    complete_case,
    kdi_estimate,
    oracle_mean,
    sdi_estimate,
    sgm_estimate,
)
from .numkernel import DEFAULT_TRIM_RATIO, KernelSpec, default_bandwidth
from .records import Sample
from .sieve import SieveBasisSpec
from .simgen import ROLE_SHUFFLE, SCENARIOS, TRUE_MEAN, ScenarioSpec, gen_scenario, population_scale, stream

RESULTS_HEADER = ("scenario", "d", "N", "m", "estimator", "bias", "sd", "replicates", "failures")
LEDGER_FIELDS = tuple(f.name for f in dataclasses.fields(CommLedger))
MIN_SUCCESS_FRACTION = 0.8
# estimators whose value does not depend on the partition
_POOLED = {"classical-kernel", "classical-sieve", "complete-case", "oracle"}
_FAILURES = (ValueError, ArithmeticError, np.linalg.LinAlgError, WorkerError)


class PlanError(ValueError):
    """The experiment plan is invalid."""


@dataclass(frozen=True)
class ExperimentPlan:
    scenario: str | None = "s1"
    data: str | None = None
    estimators: tuple[str, ...] = ("kdi", "sdi")
    m_grid: tuple[int, ...] = (10,)
    replicates: int = 100
    N: int | None = 10_000
    seed: int = 20240101
    q: int = 30
    c_h: float = 1.0
    trim_ratio: float | None = DEFAULT_TRIM_RATIO
    degree: int = 3
    basis_mode: str = "total"
    c_alpha: float = 1.0
    T_max: int = DEFAULT_T_MAX
    tol: float = DEFAULT_TOL
    truncate: bool = False
    mu_true: float | None = None
    threads: int = 1

    def __post_init__(self):
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "m_grid", tuple(int(m) for m in self.m_grid))
        if self.mu_true is None and self.data is None:
            object.__setattr__(self, "mu_true", TRUE_MEAN)

    @property
    def label(self) -> str:
        if self.data is not None:
            return Path(self.data).stem
        return ScenarioSpec(self.scenario, 1, 0).label

    def ordered_estimators(self) -> tuple[str, ...]:
        return tuple(e for e in ESTIMATORS if e in self.estimators)

    def to_dict(self) -> dict:
        """Plan fields that determine results (the thread budget does not)."""
        d = dataclasses.asdict(self)
        del d["threads"]
        d["estimators"] = list(self.ordered_estimators())
        d["m_grid"] = list(self.m_grid)
        return d


def plan_from_dict(cfg: dict, **overrides) -> ExperimentPlan:
    known = {f.name for f in dataclasses.fields(ExperimentPlan)}
    merged = {**cfg, **{k: v for k, v in overrides.items() if v is not None}}
    unknown = sorted(set(merged) - known)
    if unknown:
        raise PlanError(f"unknown plan keys: {', '.join(unknown)}")
    try:
        return ExperimentPlan(**merged)
    except (TypeError, ValueError) as exc:
        raise PlanError(str(exc)) from None


def load_plan(path: str | Path, **overrides) -> ExperimentPlan:
    try:
        cfg = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise PlanError(f"cannot read plan {path}: {exc}") from None
    if not isinstance(cfg, dict):
        raise PlanError(f"plan {path} must be a JSON object")
    cfg.pop("description", None)
    return plan_from_dict(cfg, **overrides)


def validate_plan(plan: ExperimentPlan, N_data: int | None = None) -> int:
    """Check the plan; returns the dataset size ``N``."""
    if (plan.scenario is None) == (plan.data is None):
        raise PlanError("exactly one of scenario and data must be given")
    if plan.scenario is not None and plan.scenario.lower() not in SCENARIOS:
        raise PlanError(f"unknown scenario {plan.scenario!r}")
    if not plan.estimators:
        raise PlanError("estimator list is empty")
    bad = [e for e in plan.estimators if e not in ESTIMATORS]
    if bad:
        raise PlanError(f"unknown estimators: {', '.join(bad)}")
    if plan.data is not None and "oracle" in plan.estimators:
        raise PlanError("the oracle estimator needs simulated data")
    if plan.replicates < 1:
        raise PlanError("replicates must be at least 1")
    if not plan.m_grid or min(plan.m_grid) < 1:
        raise PlanError("m grid must contain positive integers")
    N = N_data if plan.data is not None else plan.N
    if N is None or N < 1:
        raise PlanError("N must be a positive integer")
    for m in plan.m_grid:
        if m > N:
            raise PlanError(f"m={m} exceeds N={N}")
        if N % m and not plan.truncate:
            raise PlanError(f"m={m} does not divide N={N}; enable truncate to drop {N % m} records")
    try:
        KernelSpec(plan.q, 1.0, 1, plan.trim_ratio)
        SieveBasisSpec(1, plan.degree, plan.basis_mode)
    except ValueError as exc:
        raise PlanError(str(exc)) from None
    if plan.c_h <= 0 or plan.c_alpha < 0 or plan.T_max < 1 or plan.tol <= 0:
        raise PlanError("c_h and tol must be positive, c_alpha nonnegative, T_max >= 1")
    if plan.threads < 1:
        raise PlanError("threads must be at least 1")
    return N


# -- per-replicate work ------------------------------------------------------


@dataclass(frozen=True)
class Tuning:
    """Resolved tuning for one m (everything that is not data-dependent)."""

    m: int
    N_used: int
    h_kdi: float
    h_sgm: float
    h_classical: float
    K: int

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def resolve_tuning(plan: ExperimentPlan, N: int, d: int, m: int) -> Tuning:
    N_used = N - N % m
    n = N_used // m
    bw = lambda NN, mm: default_bandwidth(NN, mm, plan.q, d, plan.c_h)  # noqa: E731
    K = SieveBasisSpec(d, plan.degree, plan.basis_mode).basis_dim_K
    return Tuning(m, N_used, bw(N_used, m), bw(n, 1), bw(N_used, 1), K)


def sieve_basis(plan: ExperimentPlan, d: int, data: Sample | None = None) -> SieveBasisSpec:
    """Basis with a fixed covariate rescaling.

    Simulated scenarios use the known population scale. For a data file the
    centre and scale are the full-file column means and SDs, fixed at
    ingestion.
    """
    if plan.data is None:
        return SieveBasisSpec(d, plan.degree, plan.basis_mode, center=(0.0,) * d,
                              scale=population_scale(plan.scenario))
    center = data.x.mean(axis=0)
    scale = data.x.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return SieveBasisSpec(d, plan.degree, plan.basis_mode, center=tuple(center), scale=tuple(scale))


@dataclass
class Outcome:
    mu_hat: float | None
    ledger: CommLedger | None
    diagnostics: dict = field(default_factory=dict)
    error: str | None = None


def _scalar_diagnostics(diag: dict) -> dict:
    out = {}
    for k, v in diag.items():
        if isinstance(v, (bool, np.bool_)):
            out[k] = float(v)
        elif isinstance(v, (int, float, np.integer, np.floating)) and math.isfinite(float(v)):
            out[k] = float(v)
    return out


def run_estimator(name, plan, tune, d, basis, complete, masked, sharded) -> EstimateReport:
    kspec = lambda h: KernelSpec(plan.q, h, d, plan.trim_ratio)  # noqa: E731
    if name == "kdi":
        return kdi_estimate(sharded, kspec(tune.h_kdi))
    if name == "sdi":
        return sdi_estimate(sharded, basis, plan.c_alpha, plan.T_max, plan.tol)
    if name == "sgm-kernel":
        return sgm_estimate(sharded, "kernel", kernel_spec=kspec(tune.h_sgm))
    if name == "sgm-sieve":
        return sgm_estimate(sharded, "sieve", basis=basis)
    if name == "classical-kernel":
        return classical_kernel_mu(masked, kspec(tune.h_classical))
    if name == "classical-sieve":
        return classical_sieve_mu(masked, basis)
    if name == "complete-case":
        return complete_case(masked)
    if name == "oracle":
        return oracle_mean(complete)
    raise PlanError(f"unknown estimator {name!r}")


def _replicate_data(plan: ExperimentPlan, r: int, N: int, source: Sample | None):
    if source is None:
        return gen_scenario(ScenarioSpec(plan.scenario, N, plan.seed, r))
    rng = stream(plan.seed, r, ROLE_SHUFFLE)
    return None, source.take(rng.permutation(len(source)))


def run_replicate(plan: ExperimentPlan, r: int, N: int, source: Sample | None = None) -> dict:
    """All (m, estimator) outcomes for replicate ``r``."""
    complete, masked = _replicate_data(plan, r, N, source)
    d = masked.dim
    basis = sieve_basis(plan, d, source)
    out: dict[tuple[int, str], Outcome] = {}
    pooled_cache: dict[tuple[int, str], Outcome] = {}
    for m in plan.m_grid:
        tune = resolve_tuning(plan, N, d, m)
        sharded = partition_even(masked, m, truncate=True)
        used = masked.slice(0, tune.N_used)
        used_complete = None if complete is None else complete.slice(0, tune.N_used)
        for name in plan.ordered_estimators():
            key = (tune.N_used, name)
            if name in _POOLED and key in pooled_cache:
                out[(m, name)] = pooled_cache[key]
                continue
            try:
                rep = run_estimator(name, plan, tune, d, basis, used_complete, used, sharded)
                res = Outcome(rep.mu_hat, rep.ledger, _scalar_diagnostics(rep.diagnostics))
            except _FAILURES as exc:
                res = Outcome(None, None, error=type(exc).__name__)
            out[(m, name)] = res
            if name in _POOLED:
                pooled_cache[key] = res
    return out


# -- aggregation -------------------------------------------------------------


@dataclass
class Cell:
    m: int
    estimator: str
    N_used: int
    outcomes: list[Outcome]
    mu_true: float | None = None

    @property
    def values(self) -> np.ndarray:
        return np.array([o.mu_hat for o in self.outcomes if o.error is None], dtype=np.float64)

    @property
    def replicates(self) -> int:
        return len(self.outcomes)

    @property
    def failures(self) -> int:
        return sum(o.error is not None for o in self.outcomes)

    @property
    def reported(self) -> bool:
        return self.replicates > 0 and len(self.values) >= MIN_SUCCESS_FRACTION * self.replicates

    @property
    def mean(self) -> float | None:
        return aggregate(self.values)[0] if self.reported else None

    @property
    def bias(self) -> float | None:
        mean = self.mean
        return None if mean is None or self.mu_true is None else mean - self.mu_true

    @property
    def sd(self) -> float | None:
        return aggregate(self.values)[1] if self.reported else None


def aggregate(values) -> tuple[float | None, float | None]:
    """Mean and sample SD (divisor R - 1); SD is None when fewer than two values."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return None, None
    mean = float(v.mean())
    sd = float(v.std(ddof=1)) if v.size > 1 else None
    return mean, sd


@dataclass
class ResultTable:
    plan: ExperimentPlan
    N: int
    d: int
    cells: list[Cell]
    tuning: list[Tuning]

    def cell(self, m: int, estimator: str) -> Cell:
        for c in self.cells:
            if c.m == m and c.estimator == estimator:
                return c
        raise KeyError((m, estimator))

    @property
    def fully_failed(self) -> list[Cell]:
        return [c for c in self.cells if c.failures == c.replicates]


def run_experiment(plan: ExperimentPlan, source: Sample | None = None) -> ResultTable:
    if plan.data is not None and source is None:
        source = ingest_csv(plan.data)
    N = validate_plan(plan, None if source is None else len(source))
    d = source.dim if source is not None else SCENARIOS[plan.scenario.lower()]
    work = lambda r: run_replicate(plan, r, N, source)  # noqa: E731
    if plan.threads == 1:
        per_rep = [work(r) for r in range(plan.replicates)]
    else:
        with ThreadPoolExecutor(max_workers=plan.threads) as pool:
            per_rep = list(pool.map(work, range(plan.replicates)))
    tuning = [resolve_tuning(plan, N, d, m) for m in plan.m_grid]
    cells = []
    for tune in tuning:
        for name in plan.ordered_estimators():
            outcomes = [rep[(tune.m, name)] for rep in per_rep]
            cells.append(Cell(tune.m, name, tune.N_used, outcomes, plan.mu_true))
    return ResultTable(plan, N, d, cells, tuning)


# -- output ------------------------------------------------------------------


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _sum_ledgers(outcomes: list[Outcome]) -> dict:
    total = dict.fromkeys(LEDGER_FIELDS, 0)
    for o in outcomes:
        if o.ledger is not None:
            for k in LEDGER_FIELDS:
                total[k] += getattr(o.ledger, k)
    return total


def _mean_diagnostics(outcomes: list[Outcome]) -> dict:
    keys = sorted({k for o in outcomes if o.error is None for k in o.diagnostics})
    out = {}
    for k in keys:
        vals = [o.diagnostics[k] for o in outcomes if o.error is None and k in o.diagnostics]
        out[k] = float(np.mean(vals))
    return out


def manifest(table: ResultTable) -> dict:
    plan = table.plan
    cells = []
    for c in table.cells:
        errors: dict[str, int] = {}
        for o in c.outcomes:
            if o.error is not None:
                errors[o.error] = errors.get(o.error, 0) + 1
        first = next((o.ledger for o in c.outcomes if o.ledger is not None), None)
        cells.append(
            {
                "m": c.m,
                "estimator": c.estimator,
                "N_used": c.N_used,
                "replicates": c.replicates,
                "failures": c.failures,
                "reported": c.reported,
                "fully_failed": c.failures == c.replicates,
                "mean": c.mean,
                "bias": c.bias,
                "sd": c.sd,
                "errors": errors,
                "ledger_first_replicate": None if first is None else first.as_dict(),
                "ledger_total": _sum_ledgers(c.outcomes),
                "diagnostics_mean": _mean_diagnostics(c.outcomes),
            }
        )
    return {
        "software": "distimpute",
        "version": __version__,
        "master_seed": plan.seed,
        "scenario": table.plan.label,
        "d": table.d,
        "N": table.N,
        "plan": plan.to_dict(),
        "tuning": [t.as_dict() for t in table.tuning],
        "cells": cells,
    }


def emit_outputs(table: ResultTable, out_dir: str | Path, per_replicate: bool = True) -> list[Path]:
    """Write ``results.csv``, ``manifest.json`` and optionally ``replicates.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    label = table.plan.label
    paths = [out / "results.csv", out / "manifest.json"]
    with paths[0].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULTS_HEADER)
        for c in table.cells:
            w.writerow([label, table.d, c.N_used, c.m, c.estimator, _fmt(c.bias), _fmt(c.sd),
                        c.replicates, c.failures])
    paths[1].write_text(json.dumps(manifest(table), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if per_replicate:
        paths.append(out / "replicates.csv")
        with paths[2].open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["scenario", "d", "N", "m", "estimator", "replicate", "mu_hat", "error", *LEDGER_FIELDS])
            for c in table.cells:
                for r, o in enumerate(c.outcomes):
                    led = ["" if o.ledger is None else getattr(o.ledger, k) for k in LEDGER_FIELDS]
                    w.writerow([label, table.d, c.N_used, c.m, c.estimator, r, _fmt(o.mu_hat),
                                o.error or "", *led])
    return paths
