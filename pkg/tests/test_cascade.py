import warnings

import numpy as np
import pytest

from tsso_dtr.cascade import (NEVER, DatabaseFormatError, DatabaseVersionError, build_database,
                              chain_rng, read_database, simulate_chain, write_database)
from tsso_dtr.grid import SystemState, dc_power_flow
from tsso_dtr.risk import RiskParams, failure_probabilities

from conftest import make_network


def test_two_bus_chain_loses_everything():
    net = make_network([(1, 0, 100, 200), (2, 100, 0, 0)], [(1, 1, 2, 0.2, 150)])
    ch = simulate_chain(net, SystemState.uniform(0, 2, 1.0), RiskParams(), chain_rng(1, 0, 0))
    assert ch.d == 1
    assert ch.load_loss == pytest.approx(100.0)


def test_chain_structure(small_db, net39):
    for sub in small_db.sub_databases:
        for ch in sub:
            assert 1 <= ch.d <= small_db.d_max
            prev = frozenset()
            for i, g in enumerate(ch.generations):
                assert g.index == i
                assert frozenset(g.new_failed) <= g.cumulative
                assert prev <= g.cumulative
                prev = g.cumulative
            for pos in range(net39.n_lines):
                first = [g.index for g in ch.generations if pos in g.new_failed]
                assert ch.first_failure[pos] == (first[0] if first else NEVER)
            assert ch.load_loss >= 0


def test_load_loss_is_final_shed(small_db, net39, small_states):
    from tsso_dtr.grid import apply_state
    ch = small_db.sub_databases[2][5]
    net = apply_state(net39, small_states[2])
    failed = [int(net39.line_ids[p]) for p in ch.failed]
    assert ch.load_loss == pytest.approx(max(dc_power_flow(net, failed).shed, 0.0), abs=1e-9)


def test_same_seed_same_chain(net39):
    st = SystemState.uniform(0, net39.n_buses, 0.55)
    a = simulate_chain(net39, st, RiskParams(), chain_rng(42, 0, 3))
    b = simulate_chain(net39, st, RiskParams(), chain_rng(42, 0, 3))
    assert a == b


def test_database_counts_and_determinism(net39):
    sts = [SystemState.uniform(i, net39.n_buses, 0.5, duration=0.5) for i in range(2)]
    a = build_database(net39, sts, 10, RiskParams(), seed=3)
    b = build_database(net39, sts, 10, RiskParams(), seed=3)
    assert len(a) == 20 and a.m == 2
    assert all(ch.state == l for l, sub in zip(a.state_indices, a.sub_databases) for ch in sub)
    assert a == b


def test_worker_count_does_not_change_result(net39):
    sts = [SystemState.uniform(i, net39.n_buses, 0.55, duration=0.5) for i in range(2)]
    one = build_database(net39, sts, 8, RiskParams(), seed=5, workers=1)
    two = build_database(net39, sts, 8, RiskParams(), seed=5, workers=2)
    assert one == two


def test_roundtrip(tmp_path, small_db, net39):
    path = tmp_path / "db.bin"
    write_database(small_db, path)
    back = read_database(path, net39)
    assert back == small_db
    ch0, ch1 = small_db.sub_databases[0][0], back.sub_databases[0][0]
    assert ch0.generations[-1].flows.tobytes() == ch1.generations[-1].flows.tobytes()


def test_version_mismatch(tmp_path, small_db):
    path = tmp_path / "db.bin"
    write_database(small_db, path)
    raw = path.read_bytes().replace(b'"format_version": 1', b'"format_version": 9')
    path.write_bytes(raw)
    with pytest.raises(DatabaseVersionError):
        read_database(path)


def test_not_a_database(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"hello world")
    with pytest.raises(DatabaseFormatError):
        read_database(path)


def test_fingerprint_warning(tmp_path, small_db, triangle):
    path = tmp_path / "db.bin"
    write_database(small_db, path)
    with pytest.warns(UserWarning, match="different network"):
        read_database(path, triangle)


def test_one_generation_frequency_matches_probability():
    # triangle, initiating outage of the direct line; generation 1 fails nothing
    net = make_network([(1, 0, 90, 200), (2, 0, 0, 0), (3, 90, 0, 0)],
                       [(1, 1, 2, 0.1, 180), (2, 2, 3, 0.1, 180), (3, 1, 3, 0.1, 180)])
    params = RiskParams()
    st = SystemState.uniform(0, 3, 1.0)
    flows = dc_power_flow(net, (3,)).flows
    phi = failure_probabilities(flows, net.p_min + net.p_max, params)
    p_quiet = (1 - phi[0]) * (1 - phi[1])
    n = 10_000
    hits = sum(simulate_chain(net, st, params, chain_rng(11, 0, k), initiating=2).d == 1
               for k in range(n))
    se = np.sqrt(p_quiet * (1 - p_quiet) / n)
    assert abs(hits / n - p_quiet) < 3 * se


def test_radial_shedding_grows_with_failures():
    net = make_network([(1, 0, 300, 400), (2, 50, 0, 0), (3, 70, 0, 0), (4, 90, 0, 0), (5, 40, 0, 0)],
                       [(1, 1, 2, 0.1, 500), (2, 2, 3, 0.1, 500), (3, 3, 4, 0.1, 500), (4, 2, 5, 0.1, 500)])
    rng = np.random.default_rng(2)
    for _ in range(30):
        order = rng.permutation([1, 2, 3, 4]).tolist()
        sheds = [dc_power_flow(net, order[:j]).shed for j in range(5)]
        assert all(b >= a - 1e-9 for a, b in zip(sheds, sheds[1:]))


def test_n1_initiation(net39):
    st = [SystemState.uniform(0, net39.n_buses, 0.55)]
    db = build_database(net39, st, 5, RiskParams(), seed=1, initiation="n-1")
    assert [ch.generations[0].new_failed for ch in db.sub_databases[0]] == [(k,) for k in range(5)]


def test_bad_arguments(net39):
    st = [SystemState.uniform(0, net39.n_buses, 0.55)]
    with pytest.raises(ValueError):
        build_database(net39, st, 0, RiskParams(), seed=1)
    with pytest.raises(ValueError):
        build_database(net39, st, 2, RiskParams(), seed=1, initiation="random")
