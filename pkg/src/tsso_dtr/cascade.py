"""Monte Carlo failure-chain generation and the on-disk chain database.

Chains are sampled without DTR (``alpha = 1``). Generation 0 is a single
initiating outage; each later generation fails every surviving line
independently with its flow-dependent probability, after which flows are
recomputed. A generation with no new failure ends the chain.

Database file layout (all integers little-endian)::

    8 bytes   magic b"TSSOCHDB"
    uint32    header length H
    H bytes   UTF-8 JSON header (format_version, fingerprints, seed, counts)
    per chain, in state then chain order:
      uint32  record length R
      R bytes int32 state, int32 chain_id, int32 d, int32 truncated,
              float64 load_loss, int32[n_lines] first_failure,
              then for generation 0..d: int32 n_new, int32[n_new] line
              positions, float64[n_lines] flows
"""

from __future__ import annotations

import io
import json
import logging
import struct
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .grid import Network, SystemState, apply_state, dc_power_flow
from .risk import RiskParams, failure_probabilities

log = logging.getLogger(__name__)

NEVER = np.iinfo(np.int32).max
D_MAX = 20
FORMAT_VERSION = 1
MAGIC = b"TSSOCHDB"


class DatabaseFormatError(ValueError):
    pass


class DatabaseVersionError(DatabaseFormatError):
    pass


@dataclass(frozen=True, eq=False)
class GenerationRecord:
    """One failure generation.

    ``flows`` are the line flows (MW) of the network in which this
    generation's outages were drawn, i.e. after all earlier generations.
    Line sets hold positions into ``Network.lines``.
    """

    index: int
    new_failed: tuple[int, ...]
    cumulative: frozenset[int]
    flows: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, GenerationRecord):
            return NotImplemented
        return (self.index == other.index and self.new_failed == other.new_failed
                and self.cumulative == other.cumulative
                and np.array_equal(self.flows, other.flows))


@dataclass(frozen=True, eq=False)
class FailureChain:
    chain_id: int
    state: int
    generations: tuple[GenerationRecord, ...]
    load_loss: float
    first_failure: np.ndarray
    truncated: bool = False

    @property
    def d(self) -> int:
        """Number of generations after the initiating event."""
        return len(self.generations) - 1

    @property
    def failed(self) -> frozenset[int]:
        return self.generations[-1].cumulative

    def __eq__(self, other):
        if not isinstance(other, FailureChain):
            return NotImplemented
        return (self.chain_id == other.chain_id and self.state == other.state
                and self.load_loss == other.load_loss and self.truncated == other.truncated
                and np.array_equal(self.first_failure, other.first_failure)
                and self.generations == other.generations)


@dataclass(frozen=True, eq=False)
class ChainDatabase:
    network_fingerprint: str
    params_fingerprint: str
    seed: int
    sub_databases: tuple[tuple[FailureChain, ...], ...]
    state_indices: tuple[int, ...]
    d_max: int = D_MAX
    initiation: str = "sampled"

    def __post_init__(self):
        for pos, (l, sub) in enumerate(zip(self.state_indices, self.sub_databases)):
            if not sub:
                raise ValueError(f"state {l}: empty sub-database")
            if any(ch.state != l for ch in sub):
                raise ValueError(f"state {l}: chain with mismatched state index")

    @property
    def m(self) -> int:
        return len(self.sub_databases)

    def __len__(self) -> int:
        return sum(len(s) for s in self.sub_databases)

    def __eq__(self, other):
        if not isinstance(other, ChainDatabase):
            return NotImplemented
        return (self.header() == other.header()
                and self.sub_databases == other.sub_databases)

    def header(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "network_fingerprint": self.network_fingerprint,
            "params_fingerprint": self.params_fingerprint,
            "seed": self.seed,
            "d_max": self.d_max,
            "initiation": self.initiation,
            "states": list(self.state_indices),
            "chains_per_state": [len(s) for s in self.sub_databases],
        }

    def summary(self, y_ext: float) -> list[dict]:
        rows = []
        for l, sub in zip(self.state_indices, self.sub_databases):
            loss = np.array([c.load_loss for c in sub])
            rows.append({
                "state": l,
                "chains": len(sub),
                "mean_load_loss": float(loss.mean()),
                "fraction_over_threshold": float((loss > y_ext).mean()),
                "mean_depth": float(np.mean([c.d for c in sub])),
            })
        return rows


# -- simulation -------------------------------------------------------------

def chain_rng(seed: int, state: int, chain_id: int) -> np.random.Generator:
    """Independent stream per (seed, state, chain), whatever the worker layout."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, state, chain_id])))


def simulate_chain(network: Network, state: SystemState, params: RiskParams,
                   rng: np.random.Generator, chain_id: int = 0, d_max: int = D_MAX,
                   initiating: Optional[int] = None, _applied: Optional[Network] = None) -> FailureChain:
    """Sample one cascading-failure chain under ``state`` without DTR.

    ``initiating`` forces the generation-0 outage (line position); otherwise it
    is drawn with probability proportional to the base-case failure
    probabilities.
    """
    net = _applied if _applied is not None else apply_state(network, state)
    n = net.n_lines
    ids = net.line_ids
    span = net.p_min + net.p_max
    no_dtr = params.with_alpha(1.0)

    flows = dc_power_flow(net).flows
    if initiating is None:
        phi0 = failure_probabilities(flows, span, no_dtr)
        initiating = int(rng.choice(n, p=phi0 / phi0.sum()))
    failed = np.zeros(n, dtype=bool)
    failed[initiating] = True
    first = np.full(n, NEVER, dtype=np.int64)
    first[initiating] = 0
    records = [GenerationRecord(0, (initiating,), frozenset((initiating,)), flows)]
    sol = dc_power_flow(net, (ids[initiating],))

    truncated = False
    for i in range(1, d_max + 1):
        flows = sol.flows
        phi = failure_probabilities(flows, span, no_dtr)
        draws = rng.random(n)
        new = ~failed & (draws < phi)
        new_pos = tuple(int(p) for p in np.flatnonzero(new))
        failed |= new
        first[new] = i
        records.append(GenerationRecord(i, new_pos, frozenset(np.flatnonzero(failed).tolist()), flows))
        if not new_pos:
            break
        sol = dc_power_flow(net, [ids[p] for p in np.flatnonzero(failed)])
        if i == d_max:
            truncated = True
    return FailureChain(
        chain_id=chain_id,
        state=state.index,
        generations=tuple(records),
        load_loss=max(sol.shed, 0.0),
        first_failure=first,
        truncated=truncated,
    )


def _simulate_block(args):
    network, state, params, seed, start, stop, d_max, initiation = args
    applied = apply_state(network, state)
    out = []
    for k in range(start, stop):
        forced = k % network.n_lines if initiation == "n-1" else None
        out.append(simulate_chain(network, state, params, chain_rng(seed, state.index, k),
                                  chain_id=k, d_max=d_max, initiating=forced, _applied=applied))
    return out


def build_database(network: Network, states: Sequence[SystemState], chains_per_state: int,
                   params: RiskParams, seed: int, d_max: int = D_MAX,
                   initiation: str = "sampled", workers: int = 1) -> ChainDatabase:
    """Sample ``chains_per_state`` chains for every state.

    ``initiation`` is ``"sampled"`` (one line drawn by failure probability) or
    ``"n-1"`` (chain ``k`` starts from line ``k mod n_lines``).
    """
    if chains_per_state < 1:
        raise ValueError("chains_per_state must be >= 1")
    if initiation not in ("sampled", "n-1"):
        raise ValueError(f"unknown initiation mode {initiation!r}")
    indices = [s.index for s in states]
    if len(set(indices)) != len(indices):
        raise ValueError("state indices must be unique")
    block = max(1, chains_per_state // max(1, workers))
    jobs = []
    for st in states:
        for start in range(0, chains_per_state, block):
            jobs.append((network, st, params, seed, start,
                         min(start + block, chains_per_state), d_max, initiation))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_simulate_block, jobs))
    else:
        results = [_simulate_block(j) for j in jobs]
    per_state: dict[int, list[FailureChain]] = {s.index: [] for s in states}
    for res in results:
        for ch in res:
            per_state[ch.state].append(ch)
    subs = tuple(tuple(per_state[l]) for l in indices)
    log.info("built %d chains over %d states", sum(map(len, subs)), len(subs))
    return ChainDatabase(
        network_fingerprint=network.fingerprint(),
        params_fingerprint=params.sampling_fingerprint(),
        seed=seed,
        sub_databases=subs,
        state_indices=tuple(indices),
        d_max=d_max,
        initiation=initiation,
    )


# -- persistence ------------------------------------------------------------

def _encode_chain(ch: FailureChain) -> bytes:
    buf = io.BytesIO()
    buf.write(struct.pack("<iiiid", ch.state, ch.chain_id, ch.d, int(ch.truncated), ch.load_loss))
    buf.write(np.asarray(ch.first_failure, dtype="<i4").tobytes())
    for g in ch.generations:
        buf.write(struct.pack("<i", len(g.new_failed)))
        buf.write(np.asarray(g.new_failed, dtype="<i4").tobytes())
        buf.write(np.asarray(g.flows, dtype="<f8").tobytes())
    return buf.getvalue()


def _decode_chain(blob: bytes, n_lines: int) -> FailureChain:
    state, chain_id, d, truncated, loss = struct.unpack_from("<iiiid", blob, 0)
    off = struct.calcsize("<iiiid")
    first = np.frombuffer(blob, dtype="<i4", count=n_lines, offset=off).astype(np.int64)
    off += 4 * n_lines
    gens = []
    cumulative: frozenset[int] = frozenset()
    for i in range(d + 1):
        (n_new,) = struct.unpack_from("<i", blob, off)
        off += 4
        new = tuple(int(v) for v in np.frombuffer(blob, dtype="<i4", count=n_new, offset=off))
        off += 4 * n_new
        flows = np.frombuffer(blob, dtype="<f8", count=n_lines, offset=off).astype(float)
        off += 8 * n_lines
        cumulative = cumulative | frozenset(new)
        gens.append(GenerationRecord(i, new, cumulative, flows))
    if off != len(blob):
        raise DatabaseFormatError(f"chain {chain_id}: {len(blob) - off} trailing bytes")
    return FailureChain(chain_id, state, tuple(gens), loss, first, bool(truncated))


def write_database(db: ChainDatabase, path: str | Path) -> None:
    n_lines = len(db.sub_databases[0][0].first_failure)
    header = dict(db.header(), n_lines=n_lines)
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for sub in db.sub_databases:
            for ch in sub:
                rec = _encode_chain(ch)
                fh.write(struct.pack("<I", len(rec)))
                fh.write(rec)


def read_database(path: str | Path, network: Optional[Network] = None) -> ChainDatabase:
    """Load a database; warns when ``network`` does not match its fingerprint."""
    data = Path(path).read_bytes()
    if data[:8] != MAGIC:
        raise DatabaseFormatError(f"{path}: not a chain database")
    (hlen,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12:12 + hlen].decode("utf-8"))
    if header.get("format_version") != FORMAT_VERSION:
        raise DatabaseVersionError(
            f"{path}: format version {header.get('format_version')}, expected {FORMAT_VERSION}"
        )
    if network is not None and network.fingerprint() != header["network_fingerprint"]:
        warnings.warn(f"{path}: database was built for a different network", stacklevel=2)
    off = 12 + hlen
    n_lines = header["n_lines"]
    subs = []
    for l, count in zip(header["states"], header["chains_per_state"]):
        sub = []
        for _ in range(count):
            (rlen,) = struct.unpack_from("<I", data, off)
            off += 4
            sub.append(_decode_chain(data[off:off + rlen], n_lines))
            off += rlen
        subs.append(tuple(sub))
    if off != len(data):
        raise DatabaseFormatError(f"{path}: trailing bytes after last chain")
    return ChainDatabase(
        network_fingerprint=header["network_fingerprint"],
        params_fingerprint=header["params_fingerprint"],
        seed=header["seed"],
        sub_databases=tuple(subs),
        state_indices=tuple(header["states"]),
        d_max=header["d_max"],
        initiation=header["initiation"],
    )
