"""Library-level experiment steps shared by the command line and the estimator."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Union

import numpy as np

from .baselines import run_strategy
from .cascade import ChainDatabase
from .grid import Network, SystemState
from .risk import RiskParams, StateRiskEvaluator
from .scg import DtrPlan, GuaranteeReport, guarantee_report, solve_scg
from .submodular import TssoProblem, modular_decomposition
from .problem import build_risk_problem, state_evaluators

log = logging.getLogger(__name__)

PartitionChoice = Union[str, int, Sequence[int], None]


def ranked_lines(problem: TssoProblem) -> list[int]:
    """Ground elements by decreasing mean singleton value (ties: smaller id)."""
    score = {x: float(np.mean([f(frozenset((x,))) for f in problem.functions])) for x in problem.ground}
    return sorted(problem.ground, key=lambda x: (-score[x], x))


def candidate_partitions(problem: TssoProblem, choice: PartitionChoice,
                         sizes: Sequence[int] = ()) -> list[Optional[frozenset]]:
    """Expand a partition choice into explicit first blocks (``None`` = whole ground set).

    An integer ``n`` takes the ``n`` lines with the largest singleton value;
    ``"auto"`` tries the whole ground set and every size in ``sizes``.
    """
    n = len(problem.ground)
    if choice is None or choice == "global":
        return [None]
    if isinstance(choice, str):
        if choice != "auto":
            raise ValueError(f"unknown partition choice {choice!r}")
        order = ranked_lines(problem)
        return [None] + [frozenset(order[:s]) for s in sizes if 0 < s < n]
    if isinstance(choice, int):
        if not 0 < choice <= n:
            raise ValueError(f"partition size must lie in [1, {n}]")
        return [frozenset(ranked_lines(problem)[:choice])]
    block = frozenset(int(v) for v in choice)
    if not block:
        raise ValueError("explicit partition is empty")
    return [block]


def with_partition(problem: TssoProblem, block: Optional[frozenset]) -> TssoProblem:
    prob = TssoProblem(problem.ground, problem.functions, problem.k, problem.k_c2, problem.p, block)
    prob.evaluators = getattr(problem, "evaluators", None)
    return prob


@dataclass
class SolveResult:
    plan: DtrPlan
    problem: TssoProblem
    guarantee: Optional[GuaranteeReport]


def solve_with_partition(problem: TssoProblem, choice: PartitionChoice, sizes: Sequence[int] = (),
                         report: bool = True) -> SolveResult:
    """SCG over each candidate partition; keeps the best objective (first wins ties)."""
    best: Optional[SolveResult] = None
    for block in candidate_partitions(problem, choice, sizes):
        prob = with_partition(problem, block)
        dec = modular_decomposition(prob)
        plan = solve_scg(prob, dec)
        if best is None or plan.value > best.plan.value:
            rep = guarantee_report(plan, prob, dec, "estimated") if report else None
            best = SolveResult(plan, prob, rep)
    size = len(best.problem.block1)
    best.plan.notes.append(f"first partition block has {size} of {len(problem.ground)} lines")
    return best


def run_named(strategy: str, problem: TssoProblem, db: ChainDatabase, params: RiskParams,
              network: Network, states: Sequence[SystemState], seed: int,
              partition: PartitionChoice = "auto", sizes: Sequence[int] = ()) -> SolveResult:
    if strategy.upper() == "SCG":
        return solve_with_partition(problem, partition, sizes)
    plan = run_strategy(strategy, problem, db, params, seed, network, states)
    return SolveResult(plan, problem, None)


def state_rows(plan: DtrPlan, evaluators: Sequence[StateRiskEvaluator],
               state_indices: Sequence[int]) -> list[dict]:
    """Per-state ``f``, risk and Braess indicator of a plan's schedules."""
    rows = []
    for l, ev, t in zip(state_indices, evaluators, plan.schedules):
        lines = tuple(sorted(t))
        rows.append({"state": l, "f": ev.value(lines), "risk": ev.risk(lines),
                     "bpi": ev.bpi((), lines), "schedule": lines})
    return rows


def plan_summary(plan: DtrPlan, evaluators, state_indices) -> dict:
    rows = state_rows(plan, evaluators, state_indices)
    return {"F": float(np.mean([r["f"] for r in rows])),
            "RiskW": float(np.mean([r["risk"] for r in rows])),
            "BPI": float(np.mean([r["bpi"] for r in rows]))}


class EvaluatorCache:
    """Evaluators per improvement factor for one database."""

    def __init__(self, db: ChainDatabase, network: Network, base: RiskParams):
        self.db, self.network, self.base = db, network, base
        self._cache: dict[float, list[StateRiskEvaluator]] = {}

    def params(self, alpha: Optional[float] = None) -> RiskParams:
        return self.base if alpha is None else self.base.with_alpha(alpha)

    def get(self, alpha: Optional[float] = None) -> list[StateRiskEvaluator]:
        params = self.params(alpha)
        if params.alpha not in self._cache:
            self._cache[params.alpha] = state_evaluators(self.db, self.network, params)
        return self._cache[params.alpha]

    def problem(self, k: int, k_c2, p: int = 1, alpha: Optional[float] = None) -> TssoProblem:
        return build_risk_problem(self.db, self.network, self.params(alpha), k, k_c2, p,
                                  evaluators=self.get(alpha))
