"""One-stage and flexible variants, plus DTR service-life accounting."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .scg import DtrPlan, finalize_plan
from .submodular import TssoProblem, brute_force_inner


def solve_one_stage(problem: TssoProblem, k: int) -> DtrPlan:
    """Greedy placement of ``k`` lines that operate in every state.

    The objective is the state mean of ``f_i(S)``; there is no second stage.
    """
    k = min(k, len(problem.ground))
    single = TssoProblem(problem.ground, problem.functions, k, k, problem.p, problem.partition)
    chosen: list = []
    cur = single.objective(chosen, [frozenset()] * single.m)
    for _ in range(k):
        best, best_val = None, cur
        for x in single.ground:
            if x in chosen:
                continue
            s = frozenset(chosen) | {x}
            v = single.objective(s, [s] * single.m)
            if v > best_val:
                best, best_val = x, v
        if best is None:
            break
        chosen.append(best)
        cur = best_val
    s = frozenset(chosen)
    return finalize_plan(single, chosen, [s] * single.m, "one-stage")


def flexible_schedules(problem: TssoProblem, plan: DtrPlan, extra: int = 1) -> DtrPlan:
    """Re-schedule every state inside ``plan``'s placement with ``extra`` more slots."""
    caps = tuple(min(c + extra, problem.k) for c in problem.k_c2)
    flex = TssoProblem(problem.ground, problem.functions, problem.k, caps, problem.p, problem.partition)
    scheds = [brute_force_inner(f, plan.placement, c)[0] for f, c in zip(flex.functions, caps)]
    return finalize_plan(flex, plan.placement, scheds, "flexible")


@dataclass(frozen=True)
class ServiceLifeReport:
    """Per-line duty fraction and residual life ratio after each horizon."""

    lines: tuple[int, ...]
    fractions: tuple[float, ...]
    horizons: tuple[float, ...]
    residual: np.ndarray          # shape (len(horizons), len(lines))
    lifetime: float

    def rows(self) -> list[dict]:
        out = []
        for h, row in zip(self.horizons, self.residual):
            for e, frac, r in zip(self.lines, self.fractions, row):
                out.append({"years": h, "line": e, "fraction": frac, "residual": float(r)})
        return out


def service_life(placement: Iterable[int], schedules: Sequence[Iterable[int]],
                 durations: Sequence[float], horizons: Sequence[float],
                 lifetime: float = 6.0) -> ServiceLifeReport:
    """Residual ratio ``1 - years * fraction / lifetime``, clamped to [0, 1].

    A line's fraction is the summed duration of the states that operate it.
    """
    if len(schedules) != len(durations):
        raise ValueError("need one duration per schedule")
    if lifetime <= 0:
        raise ValueError("lifetime must be positive")
    lines = tuple(sorted(placement))
    fr = tuple(float(sum(d for t, d in zip(schedules, durations) if e in set(t))) for e in lines)
    res = np.array([[min(max(1.0 - h * f / lifetime, 0.0), 1.0) for f in fr] for h in horizons])
    return ServiceLifeReport(lines, fr, tuple(float(h) for h in horizons), res, float(lifetime))
