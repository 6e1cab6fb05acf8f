"""``tsso-dtr`` command line.

Every command reads one JSON config and writes into the output directory:

* ``generate``      chains.db, summary.csv
* ``solve``         plan_<strategy>.json, states_<strategy>.csv, guarantee_<strategy>.csv
* ``compare``       compare.csv, one_vs_two.csv, plan_SCG.json, plan_one-stage.json
* ``sweep``         sweep_<axis>.csv
* ``service-life``  service_life.csv from every plan_*.json in the directory

Exit codes: 0 success, 1 configuration error, 2 input/output error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .baselines import STRATEGIES
from .cascade import DatabaseFormatError, build_database, read_database, write_database
from .config import ConfigError, ExperimentConfig, load_config
from .grid import NetworkFormatError, NetworkValidationError
from .models import flexible_schedules, service_life, solve_one_stage
from .pipeline import EvaluatorCache, plan_summary, run_named, solve_with_partition, state_rows
from .risk import WeightError
from .scg import DtrPlan, guarantee_table
from .submodular import CurvatureError, EnumerationGuardError

log = logging.getLogger("tsso_dtr")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3
AXES = ("alpha", "partition", "load", "guarantee-surface")
ONE_STAGE = "one-stage"

HEADERS = {
    "summary": ["state", "chains", "mean_load_loss", "fraction_over_threshold", "mean_depth"],
    "states": ["state", "f", "risk", "bpi", "schedule"],
    "guarantee": ["F", "kappa_f1", "pure_guarantee", "error_term", "guarantee", "mode"],
    "compare": ["strategy", "F", "BPI"],
    "one_vs_two": ["state", "one_stage_f", "one_stage_bpi", "two_stage_f", "two_stage_bpi", "two_stage_T"],
    "sweep_alpha": ["alpha", "F", "RiskW", "BPI"],
    "sweep_partition": ["size", "F", "kappa_f1", "pure_guarantee", "error_term", "guarantee"],
    "sweep_load": ["load_ratio", "model", "F", "BPI"],
    "sweep_guarantee-surface": ["strategy", "kappa", "p", "guarantee"],
    "service_life": ["model", "line", "years", "fraction", "residual"],
}


class IOFailure(OSError):
    pass


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6f}"
    if isinstance(v, (tuple, list)):
        return " ".join(str(x) for x in v)
    return str(v)


def write_csv(path: Path, kind: str, rows: Iterable[dict]) -> None:
    header = HEADERS[kind]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r.get(h, "")) for h in header])
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_plan(path: Path, plan: DtrPlan, extra: Optional[dict] = None) -> None:
    doc = plan.to_dict()
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Session:
    """Config plus lazily loaded network, states and database."""

    def __init__(self, cfg: ExperimentConfig, out: Path, seed: int, threads: int):
        self.cfg, self.out, self.seed, self.threads = cfg, out, seed, threads
        self.network = cfg.load_network(getattr(cfg, "_base_dir", None))
        self.states = cfg.system_states(self.network)
        self._db = None
        self._cache = None

    @property
    def db_path(self) -> Path:
        return self.out / "chains.db"

    def db(self):
        if self._db is None:
            if not self.db_path.exists():
                raise IOFailure(f"database not found: {self.db_path} (run 'generate' first)")
            self._db = read_database(self.db_path, self.network)
        return self._db

    def cache(self) -> EvaluatorCache:
        if self._cache is None:
            self._cache = EvaluatorCache(self.db(), self.network, self.cfg.risk_params())
        return self._cache

    def problem(self, alpha=None):
        return self.cache().problem(self.cfg.k, self.cfg.k_c2, self.cfg.p, alpha)

    def generate(self, states, path: Path):
        db = build_database(self.network, states, self.cfg.chains_per_state,
                            self.cfg.sampling_params(), self.seed, self.cfg.d_max,
                            self.cfg.initiation, workers=self.threads)
        write_database(db, path)
        return db

    def solve(self, strategy: str, problem=None, cache=None, states=None):
        cache = cache or self.cache()
        problem = problem or self.problem()
        if strategy == ONE_STAGE:
            return solve_one_stage(problem, self.cfg.one_stage_k), None
        res = run_named(strategy, problem, cache.db, cache.base, self.network,
                        states or self.states, self.seed, self.cfg.partition,
                        self.cfg.partition_sizes)
        return res.plan, res.guarantee


# -- commands ---------------------------------------------------------------

def cmd_generate(s: Session, args) -> None:
    db = s.generate(s.states, s.db_path)
    rows = db.summary(s.cfg.risk.y_ext)
    write_csv(s.out / "summary.csv", "summary", rows)
    print(f"{len(db)} chains over {db.m} states -> {s.db_path}")
    for r in rows:
        print(f"  state {r['state']}: {r['chains']} chains, mean Y {r['mean_load_loss']:.1f} MW, "
              f"{100 * r['fraction_over_threshold']:.1f}% above threshold")


def cmd_solve(s: Session, args) -> None:
    strategy = args.strategy or "SCG"
    cache = s.cache()
    plan, rep = s.solve(strategy)
    rows = state_rows(plan, cache.get(), cache.db.state_indices)
    write_plan(s.out / f"plan_{plan.strategy}.json", plan)
    write_csv(s.out / f"states_{plan.strategy}.csv", "states", rows)
    g = {"F": plan.value, "mode": rep.mode if rep else "none"}
    if rep is not None:
        g.update(kappa_f1=rep.kappa_f1, pure_guarantee=rep.pure, error_term=rep.error,
                 guarantee=rep.certified)
    write_csv(s.out / f"guarantee_{plan.strategy}.csv", "guarantee", [g])
    print(f"{plan.strategy}: F = {plan.value:.3f}, placement {sorted(plan.placement)}")


def cmd_compare(s: Session, args) -> None:
    cache = s.cache()
    evs, idx = cache.get(), cache.db.state_indices
    strategies = [args.strategy] if args.strategy else list(s.cfg.strategies)
    rows, plans = [], {}
    for name in strategies:
        plan, _ = s.solve(name)
        plans[plan.strategy] = plan
        summ = plan_summary(plan, evs, idx)
        rows.append({"strategy": plan.strategy, "F": summ["F"], "BPI": summ["BPI"]})
        log.info("%s: F=%.3f", plan.strategy, summ["F"])
    empty = DtrPlan((), tuple(frozenset() for _ in idx), 0.0, (), "No-DTR")
    summ = plan_summary(empty, evs, idx)
    rows.append({"strategy": "No-DTR", "F": summ["F"], "BPI": summ["BPI"]})
    write_csv(s.out / "compare.csv", "compare", rows)

    two = plans.get("SCG") or s.solve("SCG")[0]
    one, _ = s.solve(ONE_STAGE)
    r1, r2 = state_rows(one, evs, idx), state_rows(two, evs, idx)
    table = [{"state": a["state"], "one_stage_f": a["f"], "one_stage_bpi": a["bpi"],
              "two_stage_f": b["f"], "two_stage_bpi": b["bpi"], "two_stage_T": b["schedule"]}
             for a, b in zip(r1, r2)]
    table.append({"state": "mean",
                  "one_stage_f": float(np.mean([a["f"] for a in r1])),
                  "one_stage_bpi": float(np.mean([a["bpi"] for a in r1])),
                  "two_stage_f": float(np.mean([b["f"] for b in r2])),
                  "two_stage_bpi": float(np.mean([b["bpi"] for b in r2])),
                  "two_stage_T": "-"})
    write_csv(s.out / "one_vs_two.csv", "one_vs_two", table)
    write_plan(s.out / "plan_SCG.json", two)
    write_plan(s.out / f"plan_{ONE_STAGE}.json", one)
    for r in rows:
        print(f"{r['strategy']:>8}  F {r['F']:10.3f}  BPI {r['BPI']:10.3f}")


def _sweep_alpha(s: Session):
    cache = s.cache()
    rows = []
    for a in s.cfg.alphas:
        prob = cache.problem(s.cfg.k, s.cfg.k_c2, s.cfg.p, a)
        res = solve_with_partition(prob, s.cfg.partition, s.cfg.partition_sizes, report=False)
        summ = plan_summary(res.plan, cache.get(a), cache.db.state_indices)
        rows.append({"alpha": a, **summ})
    return rows


def _sweep_partition(s: Session):
    prob = s.problem()
    n = len(prob.ground)
    rows = []
    for size in s.cfg.partition_sizes:
        if not 0 < size <= n:
            raise ConfigError(f"partition size {size} outside [1, {n}]")
        res = solve_with_partition(prob, size)
        g = res.guarantee
        rows.append({"size": size, "F": res.plan.value, "kappa_f1": g.kappa_f1,
                     "pure_guarantee": g.pure, "error_term": g.error, "guarantee": g.certified})
    return rows


def _sweep_load(s: Session):
    rows = []
    for ratio in s.cfg.load_ratios:
        states = s.cfg.system_states(s.network, ratio)
        path = s.out / f"chains_load{ratio:g}.db"
        db = read_database(path, s.network) if path.exists() else s.generate(states, path)
        cache = EvaluatorCache(db, s.network, s.cfg.risk_params())
        prob = cache.problem(s.cfg.k, s.cfg.k_c2, s.cfg.p)
        one = solve_one_stage(prob, s.cfg.one_stage_k)
        two = solve_with_partition(prob, s.cfg.partition, s.cfg.partition_sizes, report=False)
        flex = flexible_schedules(two.problem, two.plan)
        for name, plan in (("one-stage", one), ("two-stage", two.plan), ("flexible", flex)):
            summ = plan_summary(plan, cache.get(), db.state_indices)
            rows.append({"load_ratio": ratio, "model": name, "F": summ["F"], "BPI": summ["BPI"]})
    return rows


def _sweep_surface(s: Session):
    kap, ps = s.cfg.kappa_grid, s.cfg.p_grid
    tab = guarantee_table(kap, ps)
    return [{"strategy": name, "kappa": float(k), "p": int(p), "guarantee": float(tab[name][a, b])}
            for name in tab for a, k in enumerate(kap) for b, p in enumerate(ps)]


def cmd_sweep(s: Session, args) -> None:
    axis = args.axis or "alpha"
    fn = {"alpha": _sweep_alpha, "partition": _sweep_partition, "load": _sweep_load,
          "guarantee-surface": _sweep_surface}[axis]
    rows = fn(s)
    path = s.out / f"sweep_{axis}.csv"
    write_csv(path, f"sweep_{axis}", rows)
    print(f"{len(rows)} rows -> {path}")


def cmd_service_life(s: Session, args) -> None:
    files = sorted(s.out.glob("plan_*.json"))
    if not files:
        raise IOFailure(f"no plan_*.json files in {s.out}")
    durations = s.cfg.durations()
    rows = []
    for f in files:
        try:
            doc = json.loads(f.read_text(encoding="utf-8"))
            placement, schedules = doc["placement"], doc["schedules"]
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise IOFailure(f"{f}: not a plan file ({exc})") from exc
        if len(schedules) != len(durations):
            raise ConfigError(f"{f}: {len(schedules)} schedules for {len(durations)} states")
        rep = service_life(placement, schedules, durations, s.cfg.horizon_years, s.cfg.lifetime_years)
        model = doc.get("strategy", f.stem[5:])
        rows += [dict(r, model=model) for r in rep.rows()]
    write_csv(s.out / "service_life.csv", "service_life", rows)
    print(f"{len(rows)} rows -> {s.out / 'service_life.csv'}")


COMMANDS = {"generate": cmd_generate, "solve": cmd_solve, "compare": cmd_compare,
            "sweep": cmd_sweep, "service-life": cmd_service_life}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment JSON (default: shipped 39-bus config)")
    common.add_argument("--strategy", type=str.upper, choices=[*STRATEGIES, ONE_STAGE.upper()])
    common.add_argument("--axis", choices=AXES)
    common.add_argument("--seed", type=int)
    common.add_argument("--threads", type=int)
    common.add_argument("--out", help="output directory")
    parser = argparse.ArgumentParser(prog="tsso-dtr", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _setup_logging() -> None:
    level = os.environ.get("TSSO_DTR_LOG", "ERROR").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    if args.strategy == ONE_STAGE.upper():
        args.strategy = ONE_STAGE
    try:
        cfg = load_config(args.config)
        seed = cfg.seed if args.seed is None else args.seed
        threads = cfg.threads if args.threads is None else args.threads
        if seed < 0 or threads < 1:
            raise ConfigError("seed must be >= 0 and threads >= 1")
        out = Path(args.out or cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](Session(cfg, out, seed, threads), args)
    except (ConfigError, NetworkValidationError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DatabaseFormatError, NetworkFormatError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (WeightError, CurvatureError, EnumerationGuardError, ArithmeticError,
            np.linalg.LinAlgError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
