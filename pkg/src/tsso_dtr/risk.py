"""Chain-probability risk model with DTR reweighting.

Line failure probabilities follow a sigmoid in the line flow whose midpoint
moves from ``(P_min + P_max) / 2`` to ``alpha * (P_min + P_max) / 2`` when the
line carries dynamic thermal rating. Chains are sampled once without DTR and
re-evaluated for any DTR set through likelihood ratios, so nothing here ever
re-runs the cascade simulator.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, replace
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

if TYPE_CHECKING:
    from .cascade import FailureChain
    from .grid import Line, Network

PR_MAX_CAP = 1.0 - 1e-9


class WeightError(ZeroDivisionError):
    """A sampling weight has a zero denominator."""


@dataclass(frozen=True)
class RiskParams:
    pr_min: float = 0.01
    pr_max: float = 0.9
    mu: float = 10.0
    alpha: float = 1.0
    y_ext: float = 1000.0
    eta: float = 0.5
    bpi_sign: int = 1

    def __post_init__(self):
        if not 0 <= self.pr_min < self.pr_max <= 1:
            raise ValueError("need 0 <= pr_min < pr_max <= 1")
        if self.pr_max > PR_MAX_CAP:
            object.__setattr__(self, "pr_max", PR_MAX_CAP)
        if self.mu <= 0:
            raise ValueError("mu must be > 0")
        if self.alpha < 1:
            raise ValueError("alpha must be >= 1")
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.bpi_sign not in (1, -1):
            raise ValueError("bpi_sign must be +1 or -1")

    def with_alpha(self, alpha: float) -> "RiskParams":
        return replace(self, alpha=alpha)

    def sampling_fingerprint(self) -> str:
        """Hash of the fields that influence chain sampling."""
        blob = json.dumps(
            {"pr_min": self.pr_min, "pr_max": self.pr_max, "mu": self.mu}, sort_keys=True
        ).encode()
        return hashlib.sha256(blob).hexdigest()

    def to_dict(self) -> dict:
        return asdict(self)


# -- per-line probability ---------------------------------------------------

def failure_probability(flow: float, line: "Line", params: RiskParams, with_dtr: bool) -> float:
    """Sigmoid failure probability of ``line`` at ``|flow|`` MW."""
    span = line.p_min + line.p_max
    if span == 0:
        raise ValueError(f"line {line.id}: p_min + p_max = 0")
    alpha = params.alpha if with_dtr else 1.0
    scale = alpha * span
    z = -params.mu * (2.0 * abs(flow) - scale) / scale
    return params.pr_min + (params.pr_max - params.pr_min) * _expit(-z)


def _expit(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def failure_probabilities(flows: np.ndarray, span: np.ndarray, params: RiskParams,
                          alpha: np.ndarray | float = 1.0) -> np.ndarray:
    """Vectorised sigmoid; ``span`` is ``p_min + p_max`` per line."""
    scale = np.asarray(alpha) * span
    arg = params.mu * (2.0 * np.abs(flows) - scale) / scale
    # expit without scipy to keep the hot loop lean
    return params.pr_min + (params.pr_max - params.pr_min) * (0.5 * (1.0 + np.tanh(0.5 * arg)))


# -- chain quantities -------------------------------------------------------
#
# Public functions take line ids; chains store line positions, so ids are
# mapped through ``network.line_index``.

def _span(network: "Network") -> np.ndarray:
    return network.p_min + network.p_max


def _phi_matrix(chain: "FailureChain", span: np.ndarray, params: RiskParams,
                alpha: np.ndarray | float) -> np.ndarray:
    """Row ``i - 1`` holds the probabilities drawn in generation ``i`` (1..d)."""
    if not chain.d:
        return np.zeros((0, len(span)))
    flows = np.stack([g.flows for g in chain.generations[1:]])
    return failure_probabilities(flows, span, params, alpha)


def _h_from_phi(phi_col: np.ndarray, d_e: int, d: int) -> float:
    if d_e == 0:
        return 1.0
    if d_e > d:
        return float(np.prod(1.0 - phi_col))
    return float(phi_col[d_e - 1] * np.prod(1.0 - phi_col[: d_e - 1]))


def h_factor(chain: "FailureChain", line_id: int, network: "Network", params: RiskParams,
             with_dtr: bool) -> float:
    """Probability of one line's own history along the chain.

    A line that never fails contributes its survival product over all
    generations; a line failing at generation ``d_e`` contributes its failure
    probability there times survival before it. The initiating line has no
    stochastic history after generation 0 and contributes 1.
    """
    pos = network.line_index[line_id]
    alpha = params.alpha if with_dtr else 1.0
    phi = _phi_matrix(chain, _span(network), params, alpha)[:, pos]
    return _h_from_phi(phi, int(chain.first_failure[pos]), chain.d)


def h_factors(chain: "FailureChain", span: np.ndarray, params: RiskParams,
              with_dtr: bool) -> np.ndarray:
    """History factor of every line position at once."""
    alpha = params.alpha if with_dtr else 1.0
    phi = _phi_matrix(chain, span, params, alpha)
    d = phi.shape[0]
    de = chain.first_failure
    gen = np.arange(1, d + 1)[:, None]
    survive = np.where(gen < de[None, :], 1.0 - phi, 1.0)
    fail = np.where(gen == de[None, :], phi, 1.0)
    out = np.prod(survive * fail, axis=0)
    out[de == 0] = 1.0
    return out


def chain_probability(chain: "FailureChain", dtr: Iterable[int], network: "Network",
                      params: RiskParams) -> float:
    """Probability of generations 1..d with DTR operating on lines ``dtr``.

    Non-DTR lines enter generation by generation; DTR lines enter through
    their history factor evaluated with the DTR probability.
    """
    span = _span(network)
    dtr_pos = sorted(network.line_index[e] for e in dtr)
    non = np.ones(len(span), dtype=bool)
    non[dtr_pos] = False
    phi = _phi_matrix(chain, span, params, 1.0)
    prob = 1.0
    for i in range(1, chain.d + 1):
        row = phi[i - 1]
        fail = np.zeros(len(span), dtype=bool)
        fail[list(chain.generations[i].new_failed)] = True
        alive_after = np.ones(len(span), dtype=bool)
        alive_after[list(chain.generations[i].cumulative)] = False
        prob *= float(np.prod(row[fail & non]) * np.prod(1.0 - row[alive_after & non]))
    if dtr_pos:
        phi_dtr = _phi_matrix(chain, span, params, params.alpha)
        for pos in dtr_pos:
            prob *= _h_from_phi(phi_dtr[:, pos], int(chain.first_failure[pos]), chain.d)
    return prob


def sampling_weight(chain: "FailureChain", set_a: Iterable[int], set_b: Iterable[int],
                    network: "Network", params: RiskParams) -> float:
    """Likelihood ratio ``fp_A / fp_B`` from per-line history factors.

    Lines in both sets cancel; only the symmetric difference is touched.
    """
    a, b = set(set_a), set(set_b)
    if a == b:
        return 1.0
    span = _span(network)
    h0 = h_factors(chain, span, params, with_dtr=False)
    h1 = h_factors(chain, span, params, with_dtr=True)
    w = 1.0
    for e in sorted(a - b):
        pos = network.line_index[e]
        w *= _checked(h1[pos], chain, e) / _checked(h0[pos], chain, e)
    for e in sorted(b - a):
        pos = network.line_index[e]
        w *= _checked(h0[pos], chain, e) / _checked(h1[pos], chain, e)
    return w


def _checked(h: float, chain, line_id) -> float:
    if h == 0.0:
        raise WeightError(
            f"chain {chain.chain_id} (state {chain.state}): zero history factor on line {line_id}"
        )
    return float(h)


def chain_risk(chain: "FailureChain", n_chains: int, params: RiskParams, weight: float = 1.0) -> float:
    if chain.load_loss <= params.y_ext:
        return 0.0
    return weight * chain.load_loss / n_chains


def state_risk(chains: Sequence["FailureChain"], dtr: Iterable[int], network: "Network",
               params: RiskParams) -> float:
    """Expected over-threshold load loss of one state with DTR on ``dtr``."""
    if not chains:
        raise ValueError("empty sub-database")
    dtr = frozenset(dtr)
    n = len(chains)
    total = 0.0
    for ch in chains:
        if ch.load_loss > params.y_ext:
            total += chain_risk(ch, n, params, sampling_weight(ch, dtr, (), network, params))
    return total


def braess_indicator(chains: Sequence["FailureChain"], prev: Iterable[int], nxt: Iterable[int],
                     network: "Network", params: RiskParams) -> float:
    """Sum over chains of the risk increase from ``prev`` to ``nxt``, clamped at 0."""
    prev, nxt = frozenset(prev), frozenset(nxt)
    n = len(chains)
    total = 0.0
    for ch in chains:
        risk_a = chain_risk(ch, n, params, sampling_weight(ch, prev, (), network, params))
        if risk_a == 0.0:
            continue
        risk_b = chain_risk(ch, n, params, sampling_weight(ch, nxt, (), network, params))
        total += max(risk_b / risk_a - 1.0, 0.0) * risk_a
    return total


def subfunction_value(chains: Sequence["FailureChain"], dtr: Iterable[int], network: "Network",
                      params: RiskParams, reference: Iterable[int] = ()) -> float:
    """Risk mitigation of ``dtr`` in one state, including the Braess term."""
    dtr = frozenset(dtr)
    base = state_risk(chains, (), network, params)
    risk = state_risk(chains, dtr, network, params)
    bpi = braess_indicator(chains, reference, dtr, network, params)
    return base - risk + params.bpi_sign * params.eta * bpi


# -- fast evaluator ---------------------------------------------------------

class StateRiskEvaluator:
    """Vectorised risk evaluation for one sub-database.

    Only chains above the loss threshold carry risk, so the evaluator keeps
    their per-line log likelihood ratios ``log H'(e) - log H(e)`` in a dense
    matrix. Evaluating a DTR set is then a column sum and an exponential.

    Parameters
    ----------
    chains : sequence of FailureChain
        The sub-database of one system state.
    network : Network
        Network the chains were sampled on; supplies line limits.
    params : RiskParams
        ``alpha`` is the DTR improvement factor being evaluated.
    """

    def __init__(self, chains: Sequence["FailureChain"], network: "Network", params: RiskParams):
        if not chains:
            raise ValueError("empty sub-database")
        self.params = params
        self.line_ids = network.line_ids
        self.index_of = network.line_index
        self.n_chains = len(chains)
        span = network.p_min + network.p_max
        heavy = [ch for ch in chains if ch.load_loss > params.y_ext]
        self.loss = np.array([ch.load_loss for ch in heavy], dtype=float)
        logr = np.zeros((len(heavy), network.n_lines))
        for r, ch in enumerate(heavy):
            h0 = h_factors(ch, span, params, with_dtr=False)
            h1 = h_factors(ch, span, params, with_dtr=True)
            if np.any(h0 <= 0) or np.any(h1 <= 0):
                raise WeightError(f"chain {ch.chain_id} (state {ch.state}): zero history factor")
            logr[r] = np.log(h1) - np.log(h0)
        self.log_ratio = logr
        self.base_risk = float((self.loss / self.n_chains).sum())

    def _cols(self, lines: Iterable[int]) -> list[int]:
        return [self.index_of[e] for e in lines]

    def weights(self, lines: Iterable[int]) -> np.ndarray:
        cols = self._cols(lines)
        if not cols:
            return np.ones(len(self.loss))
        return np.exp(self.log_ratio[:, cols].sum(axis=1))

    def chain_risks(self, lines: Iterable[int]) -> np.ndarray:
        return self.weights(lines) * self.loss / self.n_chains

    def risk(self, lines: Iterable[int]) -> float:
        return float(self.chain_risks(lines).sum())

    def bpi(self, prev: Iterable[int], nxt: Iterable[int]) -> float:
        ra = self.chain_risks(prev)
        rb = self.chain_risks(nxt)
        return float(np.maximum(rb - ra, 0.0).sum())

    def value(self, lines: Iterable[int], reference: Iterable[int] = ()) -> float:
        lines = tuple(lines)
        rb = self.chain_risks(lines)
        ra = self.chain_risks(reference) if reference else self.loss / self.n_chains
        bpi = float(np.maximum(rb - ra, 0.0).sum())
        return self.base_risk - float(rb.sum()) + self.params.bpi_sign * self.params.eta * bpi

    def breakdown(self, lines: Iterable[int], reference: Iterable[int] = ()) -> dict:
        lines = tuple(lines)
        return {
            "risk": self.risk(lines),
            "bpi": self.bpi(tuple(reference), lines),
            "f": self.value(lines, reference),
        }

    def __call__(self, lines: Iterable[int]) -> float:
        return self.value(lines)


