"""Turn a chain database into a two-stage placement problem."""

from __future__ import annotations

from typing import Iterable, Optional, Sequence

from .cascade import ChainDatabase
from .grid import Network
from .risk import RiskParams, StateRiskEvaluator
from .submodular import SetFunction, TssoProblem


def state_evaluators(db: ChainDatabase, network: Network, params: RiskParams) -> list[StateRiskEvaluator]:
    return [StateRiskEvaluator(sub, network, params) for sub in db.sub_databases]


def build_risk_problem(db: ChainDatabase, network: Network, params: RiskParams, k: int,
                       k_c2: Sequence[int] | int, p: int = 1,
                       partition: Optional[Iterable[int]] = None,
                       candidates: Optional[Iterable[int]] = None,
                       evaluators: Optional[list[StateRiskEvaluator]] = None) -> TssoProblem:
    """Problem whose sub-function ``i`` is the risk reduction in state ``i``.

    ``candidates`` restricts the ground set (default: every line).
    """
    evs = evaluators if evaluators is not None else state_evaluators(db, network, params)
    ground = tuple(sorted(candidates)) if candidates is not None else tuple(int(v) for v in network.line_ids)
    fs = [SetFunction(ev.value, name=f"state{l}") for ev, l in zip(evs, db.state_indices)]
    prob = TssoProblem(ground, fs, k, k_c2, p, None if partition is None else frozenset(partition))
    prob.evaluators = evs
    return prob


def default_partition(network: Network, size: int) -> frozenset:
    """First block of a ground split: the ``size`` lines with the largest rating."""
    order = sorted(zip(network.line_ids, network.p_max), key=lambda t: (-t[1], t[0]))
    return frozenset(int(i) for i, _ in order[:size])
