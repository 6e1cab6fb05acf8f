"""Network data, system states and DC power flow with island handling."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

BALANCE_TOL_MW = 1e-6


class NetworkFormatError(ValueError):
    """The network file is not valid JSON or does not follow the schema."""


class NetworkValidationError(ValueError):
    """The network parsed but violates a structural invariant."""


# -- schema -----------------------------------------------------------------

class _BusRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: int
    load: float
    generation: float
    max_generation: float


class _LineRecord(BaseModel):
    model_config = ConfigDict(extra="forbid")
    id: int
    from_bus: int
    to_bus: int
    reactance: float
    p_max: float
    p_min: float = 0.0


class _NetworkDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")
    name: str = ""
    source: str = ""
    slack: int
    buses: list[_BusRecord]
    lines: list[_LineRecord]


# -- domain types -----------------------------------------------------------

@dataclass(frozen=True)
class Bus:
    id: int
    load: float
    generation: float
    max_generation: float


@dataclass(frozen=True)
class Line:
    id: int
    from_bus: int
    to_bus: int
    reactance: float
    p_max: float
    p_min: float = 0.0


@dataclass(frozen=True, eq=False)
class Network:
    """Immutable grid description.

    Buses and lines keep the order they were given in; every array property
    (``loads``, ``reactances`` ...) is indexed in that order.
    """

    buses: tuple[Bus, ...]
    lines: tuple[Line, ...]
    slack: int
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "lines", tuple(self.lines))
        _validate(self)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def line_index(self) -> dict[int, int]:
        return {ln.id: i for i, ln in enumerate(self.lines)}

    @cached_property
    def line_ids(self) -> tuple[int, ...]:
        return tuple(ln.id for ln in self.lines)

    @cached_property
    def loads(self) -> np.ndarray:
        return _frozen([b.load for b in self.buses])

    @cached_property
    def generation(self) -> np.ndarray:
        return _frozen([b.generation for b in self.buses])

    @cached_property
    def from_idx(self) -> np.ndarray:
        return _frozen([self.bus_index[ln.from_bus] for ln in self.lines], dtype=np.intp)

    @cached_property
    def to_idx(self) -> np.ndarray:
        return _frozen([self.bus_index[ln.to_bus] for ln in self.lines], dtype=np.intp)

    @cached_property
    def reactances(self) -> np.ndarray:
        return _frozen([ln.reactance for ln in self.lines])

    @cached_property
    def p_max(self) -> np.ndarray:
        return _frozen([ln.p_max for ln in self.lines])

    @cached_property
    def p_min(self) -> np.ndarray:
        return _frozen([ln.p_min for ln in self.lines])

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "slack": self.slack,
            "buses": [vars(b).copy() for b in self.buses],
            "lines": [vars(ln).copy() for ln in self.lines],
        }

    def fingerprint(self) -> str:
        """Stable SHA-256 of the numeric content (name excluded)."""
        doc = self.to_dict()
        doc.pop("name")
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _frozen(values, dtype=float) -> np.ndarray:
    arr = np.asarray(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _validate(net: Network) -> None:
    if not net.buses:
        raise NetworkValidationError("network has no buses")
    bus_ids = [b.id for b in net.buses]
    if len(set(bus_ids)) != len(bus_ids):
        raise NetworkValidationError("duplicate bus ids")
    line_ids = [ln.id for ln in net.lines]
    if len(set(line_ids)) != len(line_ids):
        raise NetworkValidationError("duplicate line ids")
    known = set(bus_ids)
    if net.slack not in known:
        raise NetworkValidationError(f"slack bus {net.slack} is not a bus")
    for b in net.buses:
        if b.load < 0 or b.generation < 0 or b.max_generation < 0:
            raise NetworkValidationError(f"bus {b.id}: negative load or generation")
    for ln in net.lines:
        if ln.from_bus not in known or ln.to_bus not in known:
            raise NetworkValidationError(f"line {ln.id}: unknown terminal bus")
        if ln.from_bus == ln.to_bus:
            raise NetworkValidationError(f"line {ln.id}: both ends on bus {ln.from_bus}")
        if not ln.reactance > 0:
            raise NetworkValidationError(f"line {ln.id}: reactance must be > 0")
        if not ln.p_max > 0:
            raise NetworkValidationError(f"line {ln.id}: p_max must be > 0")
        if ln.p_min < 0 or ln.p_min >= ln.p_max:
            raise NetworkValidationError(f"line {ln.id}: requires 0 <= p_min < p_max")
    n_comp, _ = _components(net, np.ones(net.n_lines, dtype=bool))
    if n_comp != 1:
        raise NetworkValidationError(f"network is not connected ({n_comp} components)")


def parse_network(path: str | Path) -> Network:
    """Read a network JSON file (see README for the schema)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise NetworkFormatError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    try:
        doc = _NetworkDocument.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        loc = ".".join(str(p) for p in first["loc"])
        raise NetworkFormatError(f"{path}: field {loc}: {first['msg']}") from exc
    return Network(
        buses=tuple(Bus(**b.model_dump()) for b in doc.buses),
        lines=tuple(Line(**ln.model_dump()) for ln in doc.lines),
        slack=doc.slack,
        name=doc.name,
    )


def load_ieee39() -> Network:
    """The vendored 39-bus New England fixture."""
    return parse_network(Path(__file__).parent / "data" / "ieee39.json")


# -- system states ----------------------------------------------------------

@dataclass(frozen=True)
class SystemState:
    """Per-bus load/generation multipliers for one operating state."""

    index: int
    load_multipliers: tuple[float, ...]
    generation_multipliers: tuple[float, ...]
    duration: float

    def __post_init__(self):
        object.__setattr__(self, "load_multipliers", tuple(float(v) for v in self.load_multipliers))
        object.__setattr__(
            self, "generation_multipliers", tuple(float(v) for v in self.generation_multipliers)
        )
        if any(v < 0 for v in self.load_multipliers + self.generation_multipliers):
            raise ValueError(f"state {self.index}: multipliers must be >= 0")
        if not 0 <= self.duration <= 1:
            raise ValueError(f"state {self.index}: duration must lie in [0, 1]")

    @classmethod
    def uniform(cls, index: int, n_buses: int, load: float = 1.0,
                generation: Optional[float] = None, duration: float = 1.0) -> "SystemState":
        gen = load if generation is None else generation
        return cls(index, (load,) * n_buses, (gen,) * n_buses, duration)


def check_durations(states: Sequence[SystemState]) -> None:
    total = sum(s.duration for s in states)
    if abs(total - 1.0) > 1e-12:
        raise ValueError(f"state durations sum to {total!r}, expected 1")


def apply_state(network: Network, state: SystemState) -> Network:
    n = network.n_buses
    if len(state.load_multipliers) != n or len(state.generation_multipliers) != n:
        raise ValueError(
            f"state {state.index}: multiplier vectors must have length {n}, got "
            f"{len(state.load_multipliers)}/{len(state.generation_multipliers)}"
        )
    buses = tuple(
        Bus(b.id, b.load * lm, b.generation * gm, b.max_generation)
        for b, lm, gm in zip(network.buses, state.load_multipliers, state.generation_multipliers)
    )
    return Network(buses, network.lines, network.slack, network.name)


# -- DC power flow ----------------------------------------------------------

@dataclass
class FlowSolution:
    flows: np.ndarray                # MW per line, 0 on outaged lines
    served_load: np.ndarray          # MW per bus after shedding
    dispatched_generation: np.ndarray
    island_of_bus: np.ndarray
    island_served: list[float]
    shed: float
    degenerate_islands: list[int] = field(default_factory=list)


def _components(net: Network, in_service: np.ndarray):
    f = net.from_idx[in_service]
    t = net.to_idx[in_service]
    n = net.n_buses
    adj = coo_matrix((np.ones(len(f)), (f, t)), shape=(n, n))
    return connected_components(adj, directed=False)


def dc_power_flow(network: Network, outaged_lines: Iterable[int] = ()) -> FlowSolution:
    """Solve the lossless DC flow on the network minus ``outaged_lines``.

    Each island is balanced on its own: surplus generation is scaled down to
    the island load, a deficit is met by shedding load proportionally. Islands
    lacking load or generation serve nothing.
    """
    in_service = np.ones(network.n_lines, dtype=bool)
    for lid in outaged_lines:
        try:
            in_service[network.line_index[lid]] = False
        except KeyError:
            raise ValueError(f"unknown line id {lid}") from None

    n_isl, labels = _components(network, in_service)
    loads = network.loads
    gens = network.generation
    served = np.zeros(network.n_buses)
    dispatch = np.zeros(network.n_buses)
    island_served = []
    degenerate = []
    angles = np.zeros(network.n_buses)
    f_idx, t_idx, x = network.from_idx, network.to_idx, network.reactances
    bus_ids = np.array([b.id for b in network.buses])

    for isl in range(n_isl):
        members = np.flatnonzero(labels == isl)
        L = loads[members].sum()
        G = gens[members].sum()
        if L <= 0 or G <= 0:
            island_served.append(0.0)
            continue
        if G > L:
            served[members] = loads[members]
            dispatch[members] = gens[members] * (L / G)
        else:
            served[members] = loads[members] * (G / L)
            dispatch[members] = gens[members]
        if len(members) > 1:
            ok = _solve_island(members, in_service, labels, isl, f_idx, t_idx, x,
                               dispatch - served, gens, bus_ids, angles)
            if not ok:
                served[members] = 0.0
                dispatch[members] = 0.0
                angles[members] = 0.0
                degenerate.append(isl)
                island_served.append(0.0)
                continue
        island_served.append(float(served[members].sum()))

    flows = np.where(in_service, (angles[f_idx] - angles[t_idx]) / x, 0.0)
    return FlowSolution(
        flows=flows,
        served_load=served,
        dispatched_generation=dispatch,
        island_of_bus=labels,
        island_served=island_served,
        shed=float(loads.sum() - served.sum()),
        degenerate_islands=degenerate,
    )


def _solve_island(members, in_service, labels, isl, f_idx, t_idx, x, injection, gens,
                  bus_ids, angles) -> bool:
    local = np.full(len(labels), -1, dtype=np.intp)
    local[members] = np.arange(len(members))
    mask = in_service & (labels[f_idx] == isl)
    a, b = local[f_idx[mask]], local[t_idx[mask]]
    y = 1.0 / x[mask]
    n = len(members)
    B = np.zeros((n, n))
    np.add.at(B, (a, a), y)
    np.add.at(B, (b, b), y)
    np.add.at(B, (a, b), -y)
    np.add.at(B, (b, a), -y)
    gen_members = members[gens[members] > 0]
    slack = local[gen_members[np.argmin(bus_ids[gen_members])]]
    keep = np.arange(n) != slack
    try:
        theta = np.linalg.solve(B[np.ix_(keep, keep)], injection[members][keep])
    except np.linalg.LinAlgError:
        return False
    if not np.all(np.isfinite(theta)):
        return False
    full = np.zeros(n)
    full[keep] = theta
    angles[members] = full
    return True
