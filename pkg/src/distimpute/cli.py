"""Command-line interface: ``simulate``, ``estimate``, ``gen`` and ``bench``.

Exit codes: 0 success, 2 invalid plan or arguments, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from .cluster import partition_even
from .csvio import export_csv, ingest_csv
from .estimators import ESTIMATORS, NumericalError
from .harness import (
    PlanError,
    emit_outputs,
    load_plan,
    plan_from_dict,
    resolve_tuning,
    run_estimator,
    run_experiment,
    run_replicate,
    sieve_basis,
    validate_plan,
)
from .records import DataError
from .simgen import ScenarioSpec, gen_scenario

log = logging.getLogger("distimpute")

EXIT_OK, EXIT_PLAN, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _estimator_list(text: str) -> tuple[str, ...]:
    names = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [n for n in names if n not in ESTIMATORS]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown estimators {bad}; choose from {','.join(ESTIMATORS)}")
    return names


def _add_shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--scenario", choices=["s1", "s2"], default=None)
    p.add_argument("--data", default=None, help="CSV file with header x1,...,xd,y")
    p.add_argument("--n", type=int, default=None, help="sample size N")
    p.add_argument("--m", type=_int_list, default=None, help="worker counts, comma separated")
    p.add_argument("--replicates", type=int, default=None)
    p.add_argument("--estimators", type=_estimator_list, default=None)
    p.add_argument("--q", type=int, default=None, help="kernel order")
    p.add_argument("--ch", type=float, default=None, help="bandwidth constant")
    p.add_argument("--trim", type=float, default=None, help="relative denominator trimming ratio")
    p.add_argument("--degree", type=int, default=None, help="sieve total degree")
    p.add_argument("--calpha", type=float, default=None, help="damping constant")
    p.add_argument("--tmax", type=int, default=None, help="maximum sieve iterations")
    p.add_argument("--truncate", action="store_true", default=None,
                   help="drop N mod m records instead of rejecting the plan")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--config", default=None, help="JSON plan file, or the name of a bundled plan")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="distimpute", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in [
        ("simulate", "run a Monte Carlo experiment plan"),
        ("estimate", "run estimators once on a CSV file"),
        ("gen", "export a synthetic dataset as CSV"),
        ("bench", "time estimators and report ledgers across an m grid"),
    ]:
        _add_shared(sub.add_parser(name, help=text, description=text))
    return parser


def bundled_configs() -> list[str]:
    root = resources.files("distimpute") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _config_path(name: str):
    if Path(name).exists():
        return Path(name)
    cand = resources.files("distimpute") / "configs" / f"{name}.json"
    if cand.is_file():
        return cand
    raise PlanError(f"no plan file {name!r}; bundled plans: {', '.join(bundled_configs())}")


def _overrides(args) -> dict:
    out = {
        "scenario": args.scenario,
        "data": args.data,
        "N": args.n,
        "m_grid": args.m,
        "replicates": args.replicates,
        "estimators": args.estimators,
        "q": args.q,
        "c_h": args.ch,
        "trim_ratio": args.trim,
        "degree": args.degree,
        "c_alpha": args.calpha,
        "T_max": args.tmax,
        "truncate": args.truncate,
        "seed": args.seed,
        "threads": args.threads,
    }
    if args.data is not None:
        out["scenario"] = None
        out["N"] = None
    return out


def _plan(args, **defaults):
    over = _overrides(args)
    if args.config is not None:
        path = _config_path(args.config)
        with resources.as_file(path) as p:
            plan = load_plan(p, **{k: v for k, v in over.items() if v is not None})
        if args.data is not None:
            plan = plan_from_dict({**plan.to_dict(), "scenario": None, "N": None, "threads": plan.threads})
        return plan
    cfg = {**defaults, **{k: v for k, v in over.items() if v is not None}}
    if args.data is not None:
        cfg["scenario"], cfg["N"] = None, None
    return plan_from_dict(cfg)


def cmd_simulate(args) -> int:
    plan = _plan(args)
    t0 = time.perf_counter()
    table = run_experiment(plan)
    out = Path(args.out or "results")
    paths = emit_outputs(table, out)
    log.info("finished in %.1f s", time.perf_counter() - t0)
    print(f"{'m':>5} {'estimator':<17} {'bias':>10} {'sd':>9} {'fail':>5}")
    for c in table.cells:
        bias = "" if c.bias is None else f"{c.bias:+.5f}"
        sd = "" if c.sd is None else f"{c.sd:.5f}"
        print(f"{c.m:>5} {c.estimator:<17} {bias:>10} {sd:>9} {c.failures:>5}")
    print("wrote " + ", ".join(str(p) for p in paths))
    if table.fully_failed:
        names = ", ".join(f"(m={c.m}, {c.estimator})" for c in table.fully_failed)
        print(f"every replicate failed in: {names}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_estimate(args) -> int:
    if args.data is None:
        raise PlanError("estimate needs --data")
    sample = ingest_csv(args.data)
    grid = args.m or (1,)
    if len(grid) != 1:
        raise PlanError("estimate takes a single --m")
    m = grid[0]
    plan = _plan(args, estimators=("kdi", "sdi"), m_grid=(m,), replicates=1)
    N = len(sample)
    if m > N or (N % m and not plan.truncate):
        raise PlanError(f"m={m} does not divide N={N}; pass --truncate to drop {N % m} records")
    tune = resolve_tuning(plan, N, sample.dim, m)
    sharded = partition_even(sample, m, truncate=True)
    used = sample.slice(0, tune.N_used)
    basis = sieve_basis(plan, sample.dim, sample)
    results = []
    for name in plan.ordered_estimators():
        rep = run_estimator(name, plan, tune, sample.dim, basis, None, used, sharded)
        diag = {k: v for k, v in rep.diagnostics.items() if not isinstance(v, np.ndarray)}
        results.append({"estimator": name, "m": m, "mu_hat": rep.mu_hat,
                        "ledger": rep.ledger.as_dict(), "diagnostics": diag})
        print(f"{name:<17} mu_hat={rep.mu_hat!r}  scalars_up={rep.ledger.scalars_up}"
              f"  rounds={rep.ledger.rounds}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        doc = {"data": str(args.data), "N": N, "N_used": tune.N_used, "tuning": tune.as_dict(),
               "results": results}
        (out / "estimate.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=float) + "\n")
    return EXIT_OK


def cmd_gen(args) -> int:
    spec = ScenarioSpec(args.scenario or "s1", args.n or 10_000, args.seed if args.seed is not None else 1)
    complete, masked = gen_scenario(spec)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    stem = f"{spec.scenario}_N{spec.N}_seed{spec.seed}"
    export_csv(masked, out / f"{stem}.csv")
    export_csv(complete, out / f"{stem}_complete.csv")
    print(f"wrote {out / (stem + '.csv')} ({masked.n_observed} of {spec.N} responses observed)")
    return EXIT_OK


def cmd_bench(args) -> int:
    plan = _plan(args, estimators=("kdi", "sdi"), m_grid=(5, 10, 25), replicates=1, truncate=True)
    source = ingest_csv(plan.data) if plan.data else None
    N = validate_plan(plan, None if source is None else len(source))
    rows = []
    print(f"{'m':>5} {'estimator':<17} {'seconds':>8} {'scalars_up':>11} {'broadcasts':>10} {'rounds':>7}")
    for m in plan.m_grid:
        for name in plan.ordered_estimators():
            single = plan_from_dict({**plan.to_dict(), "m_grid": [m], "estimators": [name]})
            t0 = time.perf_counter()
            outcome = run_replicate(single, 0, N, source)[(m, name)]
            dt = time.perf_counter() - t0
            led = outcome.ledger.as_dict() if outcome.ledger else {}
            rows.append({"m": m, "estimator": name, "seconds": dt, "error": outcome.error, "ledger": led})
            print(f"{m:>5} {name:<17} {dt:>8.3f} {led.get('scalars_up', ''):>11} "
                  f"{led.get('messages_down', ''):>10} {led.get('rounds', ''):>7}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "bench.json").write_text(json.dumps(rows, indent=2) + "\n")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "gen": cmd_gen, "bench": cmd_bench}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except PlanError as exc:
        print(f"invalid plan: {exc}", file=sys.stderr)
        return EXIT_PLAN
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
