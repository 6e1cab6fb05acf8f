"""Set-function tools: curvature, modular decomposition, brute-force oracles.

Elements are hashable and orderable (line ids in practice). Every search
breaks ties towards the lexicographically smallest sorted tuple, so optimiser
outputs can be compared as sets.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, Optional, Sequence

import numpy as np

log = logging.getLogger(__name__)

INNER_GUARD = 20
TSSO_BUDGET = 5_000_000
CHECK_GUARD = 12


class EnumerationGuardError(ValueError):
    """Brute-force enumeration would exceed its configured budget."""


class CurvatureError(ValueError):
    pass


class SetFunction:
    """Memoised set-function oracle.

    Wraps ``fn(frozenset) -> float``; results are cached per subset for the
    lifetime of the wrapper.
    """

    def __init__(self, fn: Callable[[frozenset], float], name: str = ""):
        self.fn = fn
        self.name = name
        self._cache: dict[frozenset, float] = {}

    def __call__(self, subset: Iterable[Hashable]) -> float:
        key = subset if isinstance(subset, frozenset) else frozenset(subset)
        try:
            return self._cache[key]
        except KeyError:
            val = float(self.fn(key))
            self._cache[key] = val
            return val

    @property
    def evaluations(self) -> int:
        return len(self._cache)

    def __repr__(self):
        return f"SetFunction({self.name or self.fn!r})"


def as_set_function(f) -> SetFunction:
    return f if isinstance(f, SetFunction) else SetFunction(f)


@dataclass
class TssoProblem:
    """Two-stage problem: pick ``|S| <= k`` from ``ground``, then per state a
    subset of ``S`` of size ``<= k_c2[i]`` maximising ``functions[i]``.

    ``partition`` is the first block of the ground-set split used by the
    separate-curvature decomposition; the second block is its complement.
    """

    ground: tuple
    functions: list
    k: int
    k_c2: tuple
    p: int = 1
    partition: Optional[frozenset] = None

    def __post_init__(self):
        self.ground = tuple(sorted(self.ground))
        if len(set(self.ground)) != len(self.ground):
            raise ValueError("ground set has duplicates")
        self.functions = [as_set_function(f) for f in self.functions]
        if isinstance(self.k_c2, int):
            self.k_c2 = (self.k_c2,) * len(self.functions)
        self.k_c2 = tuple(int(v) for v in self.k_c2)
        if not self.functions:
            raise ValueError("need at least one sub-function")
        if len(self.k_c2) != len(self.functions):
            raise ValueError("k_c2 must have one entry per sub-function")
        if not 1 <= self.k <= len(self.ground):
            raise ValueError(f"k must lie in [1, {len(self.ground)}]")
        if any(not 1 <= c <= self.k for c in self.k_c2):
            raise ValueError("every k_c2[i] must lie in [1, k]")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        part = frozenset(self.ground) if self.partition is None else frozenset(self.partition)
        if not part <= frozenset(self.ground):
            raise ValueError("partition block must be a subset of the ground set")
        self.partition = part

    @property
    def m(self) -> int:
        return len(self.functions)

    @property
    def block1(self) -> frozenset:
        return self.partition

    @property
    def block2(self) -> frozenset:
        return frozenset(self.ground) - self.partition

    def objective(self, placement: Iterable, schedules: Sequence[Iterable]) -> float:
        """Mean value of the given per-state schedules."""
        return float(np.mean([f(frozenset(t)) for f, t in zip(self.functions, schedules)]))


# -- curvature --------------------------------------------------------------

def curvature(f, ground: Iterable) -> float:
    """Total curvature ``1 - min_j f(j | ground - j) / (f(j) - f(empty))``.

    Elements whose singleton gain is not positive are skipped with a warning.
    """
    f = as_set_function(f)
    ground = frozenset(ground)
    if not ground:
        raise CurvatureError("curvature of an empty ground set is undefined")
    f0 = f(frozenset())
    full = f(ground)
    ratios, skipped = [], []
    for j in sorted(ground):
        single = f(frozenset((j,))) - f0
        if single <= 0:
            skipped.append(j)
            continue
        ratios.append((full - f(ground - {j})) / single)
    if any(f(frozenset((j,))) > full + 1e-12 for j in ground):
        log.warning("curvature: f is not monotone on this ground set")
    if skipped:
        log.warning("curvature: skipped %d element(s) with non-positive singleton gain: %s",
                    len(skipped), skipped)
    if not ratios:
        raise CurvatureError("all singleton gains are zero; curvature undefined")
    return 1.0 - min(ratios)


def separate_curvatures(f, problem: TssoProblem) -> tuple[float, float]:
    """Curvatures of ``f`` restricted to each partition block.

    An empty second block reports 0: every term it would scale multiplies
    ``f(T & block2) = f(empty)``.
    """
    if not problem.block1:
        raise CurvatureError("first partition block is empty")
    k1 = curvature(f, problem.block1)
    k2 = curvature(f, problem.block2) if problem.block2 else 0.0
    return k1, k2


def problem_separate_curvatures(problem: TssoProblem) -> tuple[float, float]:
    """Worst (largest) separate curvatures over the problem's sub-functions."""
    pairs = [separate_curvatures(f, problem) for f in problem.functions]
    return max(p[0] for p in pairs), max(p[1] for p in pairs)


# -- decomposition ----------------------------------------------------------

@dataclass
class Decomposition:
    """Per-state modular weights ``c_i(x)`` and the remainder ``g_i = f_i - c_i``."""

    functions: list
    weights: list[dict]
    g_functions: list = field(default_factory=list)

    def __post_init__(self):
        if not self.g_functions:
            self.g_functions = [SetFunction(self._make_g(i), name=f"g{i}")
                                for i in range(len(self.functions))]

    def _make_g(self, i):
        f, w = self.functions[i], self.weights[i]
        return lambda s: f(s) - sum(w[x] for x in s)

    def c(self, i: int, subset: Iterable) -> float:
        w = self.weights[i]
        return float(sum(w[x] for x in subset))

    def g(self, i: int, subset: Iterable) -> float:
        return self.g_functions[i](subset)

    @classmethod
    def trivial(cls, functions) -> "Decomposition":
        """``c = 0`` and ``g = f``: plain marginal gains."""
        functions = [as_set_function(f) for f in functions]
        return cls(functions, [_ZeroWeights() for _ in functions], list(functions))


class _ZeroWeights(dict):
    def __missing__(self, key):
        return 0.0


def modular_decomposition(problem: TssoProblem) -> Decomposition:
    """Leave-one-out weights taken inside each partition block."""
    weights = []
    for f in problem.functions:
        w = {}
        for block in (problem.block1, problem.block2):
            if not block:
                continue
            full = f(block)
            for x in sorted(block):
                w[x] = full - f(block - {x})
        weights.append(w)
    return Decomposition(list(problem.functions), weights)


# -- brute force ------------------------------------------------------------

def _subsets_upto(items: Sequence, size: int):
    for r in range(min(size, len(items)) + 1):
        yield from itertools.combinations(items, r)


def brute_force_inner(f, feasible: Iterable, k_c2: int) -> tuple[frozenset, float]:
    """Best subset of ``feasible`` with at most ``k_c2`` elements."""
    items = tuple(sorted(feasible))
    if len(items) > INNER_GUARD:
        raise EnumerationGuardError(f"inner enumeration over {len(items)} > {INNER_GUARD} elements")
    f = as_set_function(f)
    best_key, best_val = None, -math.inf
    for combo in _subsets_upto(items, k_c2):
        val = f(frozenset(combo))
        if val > best_val or (val == best_val and combo < best_key):
            best_key, best_val = combo, val
    return frozenset(best_key), best_val


@dataclass
class TssoOptimum:
    placement: frozenset
    value: float
    schedules: tuple


def brute_force_tsso(problem: TssoProblem, budget: int = TSSO_BUDGET) -> TssoOptimum:
    """Exact optimum of the two-stage problem by enumeration."""
    n, k = len(problem.ground), problem.k
    outer = sum(math.comb(n, s) for s in range(k + 1))
    inner = sum(sum(math.comb(k, t) for t in range(c + 1)) for c in problem.k_c2)
    if outer * inner > budget:
        raise EnumerationGuardError(f"two-stage enumeration needs ~{outer * inner} evaluations")

    best_key, best_val, best_sched = None, -math.inf, None
    for combo in _subsets_upto(problem.ground, k):
        scheds = []
        total = 0.0
        for f, c in zip(problem.functions, problem.k_c2):
            t, v = brute_force_inner(f, combo, c)
            scheds.append(t)
            total += v
        val = total / problem.m
        if val > best_val or (val == best_val and combo < best_key):
            best_key, best_val, best_sched = combo, val, tuple(scheds)
    return TssoOptimum(frozenset(best_key), best_val, best_sched)


def two_stage_value(problem: TssoProblem, placement: Iterable) -> float:
    """``F(S)``: mean over states of the best feasible schedule inside ``S``."""
    s = tuple(sorted(placement))
    return float(np.mean([brute_force_inner(f, s, c)[1]
                          for f, c in zip(problem.functions, problem.k_c2)]))


def general_sampling_weight(f, set_a: Iterable, set_b: Iterable, k_c2: int) -> float:
    """Ratio of the best values reachable inside ``set_b`` and ``set_a``."""
    _, vb = brute_force_inner(f, set_b, k_c2)
    _, va = brute_force_inner(f, set_a, k_c2)
    if va == 0:
        raise ZeroDivisionError("optimum over set_a is zero")
    return vb / va


# -- submodularity check ----------------------------------------------------

@dataclass(frozen=True)
class Violation:
    a: frozenset
    b: frozenset
    v: Hashable
    gap: float          # (F(B+v) - F(B)) - (F(A+v) - F(A)), > tol


def check_submodularity(F, ground: Iterable, tol: float = 1e-9,
                        method: str = "marginal") -> list[Violation]:
    """Every ``(A <= B, v not in B)`` where ``F`` loses diminishing returns.

    ``method="marginal"`` compares precomputed marginal tables,
    ``method="raw"`` recombines the four raw values per quadruple.
    """
    items = tuple(sorted(ground))
    n = len(items)
    if n > CHECK_GUARD:
        raise EnumerationGuardError(f"submodularity check limited to {CHECK_GUARD} elements")
    F = as_set_function(F)
    masks = 1 << n

    def to_set(mask):
        return frozenset(items[i] for i in range(n) if mask >> i & 1)

    vals = np.array([F(to_set(mk)) for mk in range(masks)])
    out = []
    for vi in range(n):
        bit = 1 << vi
        if method == "marginal":
            marg = np.full(masks, np.nan)
            idx = np.array([mk for mk in range(masks) if not mk & bit])
            marg[idx] = vals[idx | bit] - vals[idx]
        for b in range(masks):
            if b & bit:
                continue
            sub = b
            while True:
                if method == "marginal":
                    gap = marg[b] - marg[sub]
                else:
                    gap = (vals[b | bit] - vals[b]) - (vals[sub | bit] - vals[sub])
                if gap > tol:
                    out.append(Violation(to_set(sub), to_set(b), items[vi], float(gap)))
                if sub == 0:
                    break
                sub = (sub - 1) & b
    return out


# -- multiplicative ("Markov") instances ------------------------------------

@dataclass
class MarkovInstance:
    """Sub-functions ``Y_i(T) = cons_i - prod_{e in T} r_ie`` with ``r in (0, 1]``.

    Maximising ``Y_i`` under a cardinality limit means keeping the smallest
    factors, which is the multiplicative structure of chain reweighting.
    """

    ground: tuple
    cons: np.ndarray
    factors: np.ndarray          # shape (m, n)
    k_c2: tuple

    def sub_function(self, i: int) -> SetFunction:
        pos = {e: j for j, e in enumerate(self.ground)}
        r, c = self.factors[i], float(self.cons[i])

        def y(s):
            return c - float(np.prod([r[pos[e]] for e in s])) if s else c - 1.0
        return SetFunction(y, name=f"Y{i}")

    def functions(self) -> list[SetFunction]:
        return [self.sub_function(i) for i in range(len(self.cons))]

    def objective(self) -> SetFunction:
        fs = self.functions()

        def F(s):
            items = tuple(sorted(s))
            return float(np.mean([brute_force_inner(f, items, c)[1] for f, c in zip(fs, self.k_c2)]))
        return SetFunction(F, name="F")


def random_markov_instance(rng: np.random.Generator, n: int, m: int, k_c2) -> MarkovInstance:
    if isinstance(k_c2, int):
        k_c2 = (k_c2,) * m
    factors = rng.uniform(0.05, 1.0, size=(m, n))
    factors[rng.random((m, n)) < 0.1] = 1.0
    cons = 1.0 + rng.uniform(0.0, 2.0, size=m)
    return MarkovInstance(tuple(range(n)), cons, factors, tuple(k_c2))


def risk_style_functions(rng: np.random.Generator, n: int, m: int, chains: int = 6) -> list[SetFunction]:
    """Sub-functions ``f_i(T) = sum_c w_c (1 - prod_{e in T} r_ce)``.

    Each term is the risk removed from one heavy chain when the lines in ``T``
    scale its likelihood by ``r_ce <= 1``; the sum is monotone submodular with
    ``f_i(empty) = 0``.
    """
    out = []
    for i in range(m):
        w = rng.uniform(0.5, 2.0, size=chains)
        r = rng.uniform(0.2, 1.0, size=(chains, n))
        r[rng.random((chains, n)) < 0.4] = 1.0

        def f(s, w=w, r=r):
            if not s:
                return 0.0
            cols = list(s)
            return float(np.dot(w, 1.0 - np.prod(r[:, cols], axis=1)))
        out.append(SetFunction(f, name=f"risk{i}"))
    return out
