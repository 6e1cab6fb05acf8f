"""Comparison strategies for DTR placement.

Index strategies rank lines by a fixed score and take the top ``k``; their
per-state schedules are the exact best subsets of the placement. The
remaining strategies are greedy or local-search procedures on the objective
or on a surrogate of it.
"""

from __future__ import annotations

import enum
import logging
from typing import Optional, Sequence

import numpy as np

from .cascade import ChainDatabase
from .grid import Network, SystemState, apply_state, dc_power_flow
from .risk import RiskParams, failure_probabilities
from .scg import DtrPlan, finalize_plan, replacement_greedy, solve_scg
from .submodular import (Decomposition, SetFunction, TssoProblem, brute_force_inner,
                         modular_decomposition)

log = logging.getLogger(__name__)

LS_PASSES = 50


class StrategyKind(str, enum.Enum):
    RL = "RL"
    FR = "FR"
    LPF = "LPF"
    LHF = "LHF"
    GS = "GS"
    MA = "MA"
    LS = "LS"
    RG = "RG"
    GPG = "GPG"
    GCG = "GCG"


STRATEGIES = ("SCG",) + tuple(k.value for k in StrategyKind)


def _inner_schedules(problem: TssoProblem, placement) -> list[frozenset]:
    return [brute_force_inner(f, placement, c)[0] for f, c in zip(problem.functions, problem.k_c2)]


def _top_k(scores: dict, k: int) -> list:
    return [x for x, _ in sorted(scores.items(), key=lambda t: (-t[1], t[0]))[:k]]


def _index_plan(problem, scores, name, notes=()) -> DtrPlan:
    placement = _top_k(scores, problem.k)
    return finalize_plan(problem, placement, _inner_schedules(problem, placement), name, notes=notes)


# -- index scores -----------------------------------------------------------

def failure_counts(db: ChainDatabase, network: Network) -> dict:
    counts = np.zeros(network.n_lines)
    for sub in db.sub_databases:
        for ch in sub:
            for g in ch.generations:
                for pos in g.new_failed:
                    counts[pos] += 1
    return {int(e): float(c) for e, c in zip(network.line_ids, counts)}


def mean_base_flows(db: ChainDatabase, network: Network) -> dict:
    """Mean absolute pre-outage flow over states, read from the stored chains."""
    flows = np.mean([np.abs(sub[0].generations[0].flows) for sub in db.sub_databases], axis=0)
    return {int(e): float(v) for e, v in zip(network.line_ids, flows)}


def hidden_failure_scores(network: Network, params: RiskParams,
                          states: Optional[Sequence[SystemState]] = None) -> dict:
    """Largest post-contingency failure probability of each line over all N-1 cases."""
    nets = [apply_state(network, s) for s in states] if states else [network]
    span = network.p_min + network.p_max
    base = params.with_alpha(1.0)
    best = np.zeros(network.n_lines)
    for net in nets:
        for pos, e in enumerate(net.line_ids):
            phi = failure_probabilities(dc_power_flow(net, (int(e),)).flows, span, base)
            phi[pos] = 0.0
            np.maximum(best, phi, out=best)
    return {int(e): float(v) for e, v in zip(network.line_ids, best)}


# -- search strategies -------------------------------------------------------

def _two_stage(problem: TssoProblem) -> SetFunction:
    return SetFunction(lambda s: float(np.mean([brute_force_inner(f, s, c)[1]
                                                for f, c in zip(problem.functions, problem.k_c2)])))


def _greedy_on(fn, ground, k) -> list:
    chosen: list = []
    cur = fn(frozenset())
    for _ in range(k):
        best, best_val = None, cur
        for x in ground:
            if x in chosen:
                continue
            v = fn(frozenset(chosen) | {x})
            if v > best_val:
                best, best_val = x, v
        if best is None:
            break
        chosen.append(best)
        cur = best_val
    return chosen


def greedy_selection(problem: TssoProblem) -> DtrPlan:
    F = _two_stage(problem)
    placement = _greedy_on(F, problem.ground, problem.k)
    scheds = [frozenset(_greedy_on(f, placement, c)) for f, c in zip(problem.functions, problem.k_c2)]
    return finalize_plan(problem, placement, scheds, "GS")


def modular_approximation(problem: TssoProblem) -> DtrPlan:
    """Greedy on the surrogate where every sub-function is its singleton sum."""
    w = [{x: f(frozenset((x,))) for x in problem.ground} for f in problem.functions]

    def inner(i, s):
        vals = sorted((w[i][x], -x) for x in s if w[i][x] > 0)[::-1][:problem.k_c2[i]]
        return frozenset(-nx for _, nx in vals)

    def surrogate(s):
        return float(np.mean([sum(w[i][x] for x in inner(i, s)) for i in range(problem.m)]))

    placement = _greedy_on(surrogate, problem.ground, problem.k)
    scheds = [inner(i, placement) for i in range(problem.m)]
    return finalize_plan(problem, placement, scheds, "MA")


def local_search(problem: TssoProblem, seed: int, max_passes: int = LS_PASSES) -> DtrPlan:
    """Single-swap local search on the exact two-stage objective."""
    F = _two_stage(problem)
    rng = np.random.default_rng(seed)
    start = max(problem.ground, key=lambda x: (F(frozenset((x,))), -x))
    rest = [x for x in problem.ground if x != start]
    current = [start] + [int(v) for v in rng.choice(rest, size=problem.k - 1, replace=False)]
    val = F(frozenset(current))
    notes = []
    for npass in range(1, max_passes + 1):
        improved = False
        for pos in range(len(current)):
            for x in problem.ground:
                if x in current:
                    continue
                cand = current[:pos] + [x] + current[pos + 1:]
                v = F(frozenset(cand))
                if v > val:
                    current, val, improved = cand, v, True
                    break
        if not improved:
            notes.append(f"local optimum after {npass} passes")
            break
    else:
        notes.append(f"pass budget {max_passes} exhausted")
    return finalize_plan(problem, current, _inner_schedules(problem, current), "LS", notes=notes)


def _global(problem: TssoProblem) -> TssoProblem:
    return TssoProblem(problem.ground, problem.functions, problem.k, problem.k_c2, problem.p, None)


def run_strategy(kind, problem: TssoProblem, db: Optional[ChainDatabase] = None,
                 params: Optional[RiskParams] = None, seed: int = 0,
                 network: Optional[Network] = None,
                 states: Optional[Sequence[SystemState]] = None,
                 decomposition: Optional[Decomposition] = None,
                 ls_passes: int = LS_PASSES) -> DtrPlan:
    """Run one strategy (a :class:`StrategyKind` or ``"SCG"``) on ``problem``.

    ``db``/``network`` are needed by the index strategies that read the
    simulated chains or the grid; ``seed`` is used by RL and LS only.
    """
    name = kind.value if isinstance(kind, StrategyKind) else str(kind).upper()
    k, p = problem.k, problem.p
    if name == "SCG":
        return solve_scg(problem, decomposition)
    if name == "RL":
        rng = np.random.default_rng(seed)
        placement = [int(v) for v in rng.choice(problem.ground, size=k, replace=False)]
        return finalize_plan(problem, placement, _inner_schedules(problem, placement), "RL")
    if name in ("FR", "LPF", "LHF"):
        if network is None or (name != "LHF" and db is None):
            raise ValueError(f"{name} needs the network and chain database")
        if name == "FR":
            scores = failure_counts(db, network)
        elif name == "LPF":
            scores = mean_base_flows(db, network)
        else:
            scores = hidden_failure_scores(network, params or RiskParams(), states)
        scores = {x: scores[x] for x in problem.ground}
        return _index_plan(problem, scores, name)
    if name == "GS":
        return greedy_selection(problem)
    if name == "MA":
        return modular_approximation(problem)
    if name == "LS":
        return local_search(problem, seed, ls_passes)
    if name == "RG":
        return replacement_greedy(problem, Decomposition.trivial(problem.functions), 1.0, 1.0, "RG")
    if name == "GPG":
        return replacement_greedy(problem, modular_decomposition(_global(problem)),
                                  1.0 - 2.0 / k, 1.0, "GPG")
    if name == "GCG":
        return replacement_greedy(problem, modular_decomposition(_global(problem)),
                                  1.0 - (p + 1.0) / k, 1.0 - p / k, "GCG")
    raise ValueError(f"unknown strategy {kind!r}")
