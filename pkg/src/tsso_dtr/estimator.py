"""scikit-learn style facade over the two-stage planner."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .cascade import ChainDatabase
from .grid import Network, SystemState, load_ieee39
from .pipeline import run_named, state_rows
from .problem import build_risk_problem, state_evaluators
from .risk import RiskParams
from .submodular import brute_force_inner


class TwoStagePlanner(BaseEstimator):
    """Choose DTR lines from simulated cascades, then a schedule per state.

    Parameters
    ----------
    strategy : str
        ``"SCG"`` or any baseline name.
    k : int
        Number of lines that receive DTR.
    k_c2 : int or sequence of int
        Lines operated per state; an int applies to every state.
    p : int
        Constraint count used by the discount and the guarantee.
    partition : "auto", "global", int or list of line ids
        First partition block for the separate-curvature split.
    partition_sizes : sequence of int
        Sizes tried when ``partition="auto"``.
    risk_params : RiskParams or None
        Defaults to ``RiskParams(alpha=1.05)``.
    seed : int
        Used by the randomised baselines only.

    Attributes
    ----------
    placement_ : tuple of int
    schedules_ : tuple of frozenset
    plan_ : DtrPlan
    guarantee_ : GuaranteeReport or None
    """

    def __init__(self, strategy: str = "SCG", k: int = 8, k_c2=3, p: int = 1,
                 partition="auto", partition_sizes: Sequence[int] = (11, 20, 28, 36, 38),
                 risk_params: Optional[RiskParams] = None, seed: int = 0):
        self.strategy = strategy
        self.k = k
        self.k_c2 = k_c2
        self.p = p
        self.partition = partition
        self.partition_sizes = partition_sizes
        self.risk_params = risk_params
        self.seed = seed

    def _params(self) -> RiskParams:
        return self.risk_params if self.risk_params is not None else RiskParams(alpha=1.05)

    def _caps(self, m: int) -> tuple:
        if np.isscalar(self.k_c2):
            return (int(self.k_c2),) * m
        caps = tuple(int(c) for c in self.k_c2)
        if len(caps) != m:
            raise ValueError(f"k_c2 has {len(caps)} entries for {m} states")
        return caps

    def fit(self, db: ChainDatabase, network: Optional[Network] = None,
            states: Optional[Sequence[SystemState]] = None):
        network = network if network is not None else load_ieee39()
        params = self._params()
        evs = state_evaluators(db, network, params)
        problem = build_risk_problem(db, network, params, self.k, self._caps(db.m), self.p,
                                     evaluators=evs)
        res = run_named(self.strategy, problem, db, params, network, states or (), self.seed,
                        self.partition, self.partition_sizes)
        self.network_ = network
        self.plan_ = res.plan
        self.guarantee_ = res.guarantee
        self.placement_ = tuple(sorted(res.plan.placement))
        self.schedules_ = res.plan.schedules
        self.state_report_ = state_rows(res.plan, evs, db.state_indices)
        return self

    def _evaluators(self, db: ChainDatabase):
        if db.network_fingerprint != self.network_.fingerprint():
            raise ValueError("database was sampled on a different network")
        return state_evaluators(db, self.network_, self._params())

    def predict(self, db: ChainDatabase) -> tuple[frozenset, ...]:
        """Best schedule inside the fitted placement for each state of ``db``."""
        check_is_fitted(self, "placement_")
        evs = self._evaluators(db)
        return tuple(brute_force_inner(ev.value, self.placement_, c)[0]
                     for ev, c in zip(evs, self._caps(db.m)))

    def score(self, db: ChainDatabase) -> float:
        """Mean over the states of ``db`` of the best achievable risk reduction."""
        check_is_fitted(self, "placement_")
        evs = self._evaluators(db)
        return float(np.mean([brute_force_inner(ev.value, self.placement_, c)[1]
                              for ev, c in zip(evs, self._caps(db.m))]))
