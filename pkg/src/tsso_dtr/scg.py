"""Separate-curvature greedy for two-stage placement, plus guarantee bookkeeping.

The solver grows a placement ``S`` one element per round. In round ``j`` each
candidate ``x`` is scored by the sum over states of a discounted replacement
gain: if the state's schedule still has room, adding ``x``; otherwise the best
single swap, clamped at zero. The discount multiplies only the curved part
``g_i`` of each sub-function, leaving the modular part ``c_i`` at full weight.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .submodular import Decomposition, TssoProblem, brute_force_tsso, modular_decomposition


@dataclass(frozen=True)
class StateStep:
    gain: float
    replaced: Optional[int]     # element swapped out, None for a plain add
    applied: bool


@dataclass(frozen=True)
class TraceStep:
    j: int
    chosen: int
    total_gain: float
    states: tuple[StateStep, ...]
    phi: float                  # surrogate after the round
    phi_prev: float             # surrogate before the round, at exponent k-j+1
    rhs: float                  # recurrence right-hand side from the gains


@dataclass
class DtrPlan:
    """Placement, per-state schedules and the solver trace."""

    placement: tuple
    schedules: tuple[frozenset, ...]
    value: float
    state_values: tuple[float, ...]
    strategy: str = "SCG"
    trace: list[TraceStep] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def check(self, problem: TssoProblem) -> None:
        s = frozenset(self.placement)
        if len(s) > problem.k or len(s) != len(self.placement):
            raise AssertionError("placement violates first-stage cardinality")
        if not s <= frozenset(problem.ground):
            raise AssertionError("placement leaves the ground set")
        for t, c in zip(self.schedules, problem.k_c2):
            if not t <= s or len(t) > c:
                raise AssertionError("schedule infeasible")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy,
            "placement": sorted(self.placement),
            "selection_order": list(self.placement),
            "schedules": [sorted(t) for t in self.schedules],
            "value": self.value,
            "state_values": list(self.state_values),
            "notes": list(self.notes),
            "trace": [
                {"j": s.j, "chosen": s.chosen, "total_gain": s.total_gain, "phi": s.phi,
                 "states": [{"gain": st.gain, "replaced": st.replaced, "applied": st.applied}
                            for st in s.states]}
                for s in self.trace
            ],
        }


def finalize_plan(problem: TssoProblem, placement, schedules, strategy: str,
                  trace=None, notes=None) -> DtrPlan:
    schedules = tuple(frozenset(t) for t in schedules)
    vals = tuple(f(t) for f, t in zip(problem.functions, schedules))
    plan = DtrPlan(tuple(placement), schedules, float(np.mean(vals)), vals, strategy,
                   list(trace or []), list(notes or []))
    plan.check(problem)
    return plan


# -- gains ------------------------------------------------------------------

def _discount(base: float, k: int, j: int) -> float:
    return max(base, 0.0) ** (k - j)


def discounted_add_gain(x, t, j, problem: TssoProblem, dec: Decomposition, i: int,
                        g_base: Optional[float] = None, c_base: float = 1.0) -> float:
    """``(1-p/k)^(k-j) [g_i(t + x) - g_i(t)] + c_i(x)``."""
    if x in t:
        raise ValueError("element already in the schedule")
    gb = 1.0 - problem.p / problem.k if g_base is None else g_base
    dg = _discount(gb, problem.k, j)
    dc = _discount(c_base, problem.k, j)
    return dg * (dec.g(i, t | {x}) - dec.g(i, t)) + dc * dec.c(i, (x,))


def swap_gain(x, y, t, j, problem: TssoProblem, dec: Decomposition, i: int,
              g_base: Optional[float] = None, c_base: float = 1.0) -> float:
    """Discounted gain of replacing ``y`` by ``x`` in schedule ``t``."""
    if y not in t:
        raise ValueError("y must belong to the schedule")
    gb = 1.0 - problem.p / problem.k if g_base is None else g_base
    dg = _discount(gb, problem.k, j)
    dc = _discount(c_base, problem.k, j)
    if x == y:
        return 0.0
    if x in t:
        raise ValueError("x already in the schedule")
    return dg * (dec.g(i, (t - {y}) | {x}) - dec.g(i, t)) + dc * (dec.c(i, (x,)) - dec.c(i, (y,)))


def replacement_gain(x, t, j, problem, dec, i, g_base=None, c_base=1.0) -> tuple[float, Optional[int]]:
    """Dispatcher: add-gain when room remains, else the best swap clamped at 0.

    Returns ``(gain, replaced)``; ``replaced`` is ``None`` for an add and for a
    clamped swap. Swap ties go to the smallest id.
    """
    if len(t) < problem.k_c2[i]:
        return discounted_add_gain(x, t, j, problem, dec, i, g_base, c_base), None
    best, rep = 0.0, None
    for y in sorted(t):
        val = swap_gain(x, y, t, j, problem, dec, i, g_base, c_base)
        if val > best:
            best, rep = val, y
    return best, rep


def surrogate_phi(schedules, j: int, problem: TssoProblem, dec: Decomposition,
                  g_base: Optional[float] = None, c_base: float = 1.0) -> float:
    """``sum_i (1-p/k)^(k-j) g_i(T_i) + c_i(T_i)``."""
    gb = 1.0 - problem.p / problem.k if g_base is None else g_base
    dg = _discount(gb, problem.k, j)
    dc = _discount(c_base, problem.k, j)
    return float(sum(dg * dec.g(i, t) + dc * dec.c(i, t) for i, t in enumerate(schedules)))


# -- main loop --------------------------------------------------------------

def replacement_greedy(problem: TssoProblem, dec: Decomposition, g_base: float,
                       c_base: float = 1.0, strategy: str = "SCG") -> DtrPlan:
    """Shared k-round engine; the discount bases select the variant."""
    k = problem.k
    placement: list = []
    scheds = [frozenset() for _ in range(problem.m)]
    trace: list[TraceStep] = []
    notes: list[str] = []
    for j in range(1, k + 1):
        best_x, best_total, best_parts = None, 0.0, None
        for x in problem.ground:
            if x in placement:
                continue
            parts = [replacement_gain(x, scheds[i], j, problem, dec, i, g_base, c_base)
                     for i in range(problem.m)]
            total = sum(p[0] for p in parts)
            if total > best_total:
                best_x, best_total, best_parts = x, total, parts
        if best_x is None:
            notes.append(f"stopped after {j - 1} of {k} rounds: no positive gain")
            break
        prev = list(scheds)
        states = []
        rhs = 0.0
        gb, cb = max(g_base, 0.0), max(c_base, 0.0)
        dg, dc = _discount(gb, k, j), _discount(cb, k, j)
        for i, (gain, rep) in enumerate(best_parts):
            applied = gain > 0
            if applied:
                scheds[i] = (scheds[i] - {rep}) | {best_x} if rep is not None else scheds[i] | {best_x}
            states.append(StateStep(float(gain), rep, applied))
            # the surrogate also moves because the discount exponent drops by one
            rhs += ((gain if applied else 0.0) + (1.0 - gb) * dg * dec.g(i, prev[i])
                    + (1.0 - cb) * dc * dec.c(i, prev[i]))
        placement.append(best_x)
        phi_prev = surrogate_phi(prev, j - 1, problem, dec, g_base, c_base)
        phi = surrogate_phi(scheds, j, problem, dec, g_base, c_base)
        trace.append(TraceStep(j, best_x, float(best_total), tuple(states), phi, phi_prev, rhs))
    return finalize_plan(problem, placement, scheds, strategy, trace, notes)


def solve_scg(problem: TssoProblem, dec: Optional[Decomposition] = None) -> DtrPlan:
    """Separate-curvature greedy with discount base ``1 - p/k``."""
    dec = dec if dec is not None else modular_decomposition(problem)
    return replacement_greedy(problem, dec, 1.0 - problem.p / problem.k, 1.0, "SCG")


def recurrence_residuals(plan: DtrPlan) -> np.ndarray:
    """Per-round ``(phi_j - phi_{j-1}) - rhs``; zero up to rounding for SCG."""
    return np.array([(s.phi - s.phi_prev) - s.rhs for s in plan.trace])


# -- guarantees -------------------------------------------------------------

def pure_guarantee(kappa: float, p: int) -> float:
    return 1.0 - kappa * math.exp(-p) / p + kappa / p - kappa


def combined_error(kappa_f1: float, o_xi: float, o_c2: float, p: int) -> float:
    return (kappa_f1 - 1.0) * o_xi + (1.0 - 1.0 / p + math.exp(-p) / p - o_xi) * o_c2


@dataclass
class GuaranteeReport:
    kappa_f1: float
    kappa_f2: float
    p: int
    o_xi: Optional[float]
    o_c2: Optional[float]
    error_raw: float            # combined error term as computed
    pure: float
    certified: float
    mode: str                   # "exact", "estimated" or "given"
    notes: list[str] = field(default_factory=list)
    o_c2_bounds: Optional[tuple[float, float]] = None

    @property
    def error(self) -> float:
        return self.certified - self.pure

    @classmethod
    def from_terms(cls, kappa_f1: float, error: float, p: int = 1,
                   kappa_f2: float = float("nan")) -> "GuaranteeReport":
        """Report built from an externally supplied curvature and error term."""
        pure = pure_guarantee(kappa_f1, p)
        notes = []
        if error > 0:
            notes.append("positive error term clamped to 0")
        return cls(kappa_f1, kappa_f2, p, None, None, error, pure, pure + min(error, 0.0),
                   "given", notes)

    def row(self) -> dict:
        return {"kappa_f1": self.kappa_f1, "pure_guarantee": self.pure,
                "error_term": self.error, "guarantee": self.certified}


def _ratio(num: float, den: float) -> float:
    if den == 0:
        return 0.0 if num == 0 else math.inf
    return num / den


def guarantee_report(plan: DtrPlan, problem: TssoProblem, dec: Decomposition,
                     mode: str = "exact", optimum=None) -> GuaranteeReport:
    """Curvatures, error terms, and pure/certified guarantees for a solved plan.

    ``mode="exact"`` finds the optimal schedules by enumeration (or uses
    ``optimum``). ``mode="estimated"`` substitutes the plan's own schedules for
    the unknown optimal ones and also reports the worst-case range of the
    partition term.
    """
    from .submodular import problem_separate_curvatures

    k1, k2 = problem_separate_curvatures(problem)
    p = problem.p
    notes = []
    if len(plan.placement) < problem.k:
        notes.append(f"placement has {len(plan.placement)} < k={problem.k} elements")
    kc1 = min(max(k1, 0.0), 1.0)
    if kc1 != k1:
        notes.append(f"kappa_f1={k1:.6g} outside [0,1], clamped for the bound")

    if mode == "exact":
        opt = optimum if optimum is not None else brute_force_tsso(problem)
        targets = opt.schedules
    elif mode == "estimated":
        targets = plan.schedules
        notes.append("optimal schedules unknown; plan schedules used as stand-in for O(xi) and O(c2)")
    else:
        raise ValueError("mode must be 'exact' or 'estimated'")

    history = [[frozenset()] * problem.m]
    cur = [frozenset()] * problem.m
    for step in plan.trace:
        cur = list(cur)
        for i, st in enumerate(step.states):
            if st.applied:
                cur[i] = (cur[i] - {st.replaced}) | {step.chosen} if st.replaced is not None else cur[i] | {step.chosen}
        history.append(cur)
    o_xi = 0.0
    for i in range(problem.m):
        den = dec.c(i, targets[i])
        for hist in history[:-1] if len(history) > 1 else history:
            o_xi = max(o_xi, _ratio(dec.c(i, hist[i]), den))

    per_state = []
    for i, f in enumerate(problem.functions):
        fi = f(targets[i])
        part = f(targets[i] & problem.block2)
        per_state.append(0.0 if fi == 0 else (k1 - k2) * part / fi)
    coef = 1.0 - 1.0 / p + math.exp(-p) / p - o_xi
    o_c2 = min(per_state) if coef >= 0 else max(per_state)
    lo, hi = sorted((0.0, k1 - k2))

    err = combined_error(kc1, o_xi, o_c2, p) if math.isfinite(o_xi) else -math.inf
    pure = pure_guarantee(kc1, p)
    if err > 0:
        notes.append("positive error term clamped to 0")
    return GuaranteeReport(k1, k2, p, o_xi, o_c2, err, pure, pure + min(err, 0.0), mode,
                           notes, (lo, hi) if mode == "estimated" else None)


def guarantee_table(kappas, ps) -> dict[str, np.ndarray]:
    """Pure guarantee surfaces, shape ``(len(kappas), len(ps))`` per strategy."""
    kap = np.asarray(kappas, dtype=float)[:, None]
    pp = np.asarray(ps, dtype=float)[None, :]
    if np.any(kap < 0) or np.any(kap > 1) or np.any(pp < 1):
        raise ValueError("need kappa in [0,1] and p >= 1")
    rg = (1 - np.exp(-(pp + 1))) / (pp + 1)
    ones = np.ones_like(kap)
    return {
        "SCG": 1 - kap * np.exp(-pp) / pp + kap / pp - kap,
        "LS": ones * (1 / (pp + 1)),
        "RG": ones * rg,
        "GPG": ones * rg,
        "GCG": (1 - kap) / pp * (1 - np.exp(-pp)) + kap * rg,
    }
