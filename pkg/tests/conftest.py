import json
import os

import numpy as np
import pytest

from tsso_dtr.cascade import build_database
from tsso_dtr.grid import Bus, Line, Network, SystemState, load_ieee39
from tsso_dtr.risk import RiskParams


def make_network(buses, lines, slack=1, name="fixture"):
    return Network(
        buses=tuple(Bus(*b) for b in buses),
        lines=tuple(Line(*ln) for ln in lines),
        slack=slack,
        name=name,
    )


def network_doc(buses, lines, slack=1):
    return {
        "slack": slack,
        "buses": [dict(zip(("id", "load", "generation", "max_generation"), b)) for b in buses],
        "lines": [dict(zip(("id", "from_bus", "to_bus", "reactance", "p_max", "p_min"), ln))
                  for ln in lines],
    }


TRIANGLE_BUSES = [(1, 0.0, 90.0, 200.0), (2, 0.0, 0.0, 0.0), (3, 90.0, 0.0, 0.0)]
TRIANGLE_LINES = [(1, 1, 2, 0.1, 100.0, 0.0), (2, 2, 3, 0.1, 100.0, 0.0), (3, 1, 3, 0.1, 100.0, 0.0)]


@pytest.fixture(scope="session")
def net39():
    return load_ieee39()


@pytest.fixture
def triangle():
    return make_network(TRIANGLE_BUSES, TRIANGLE_LINES)


@pytest.fixture
def triangle_file(tmp_path):
    path = tmp_path / "tri.json"
    path.write_text(json.dumps(network_doc(TRIANGLE_BUSES, TRIANGLE_LINES)))
    return path


@pytest.fixture(scope="session")
def small_states(net39):
    return [SystemState.uniform(i, net39.n_buses, lvl, duration=1 / 3)
            for i, lvl in enumerate((0.5, 0.55, 0.6))]


@pytest.fixture(scope="session")
def small_db(net39, small_states):
    return build_database(net39, small_states, 60, RiskParams(), seed=7)


@pytest.fixture(scope="session")
def params105():
    return RiskParams(alpha=1.05)


# -- suite-wide bookkeeping -------------------------------------------------

SOLVER_RESIDUALS: list[float] = []
SOLVER_OFFENDERS: list[tuple[str, float]] = []
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session", autouse=True)
def record_solver_runs():
    """Wrap the greedy engine so every run in the session logs its recurrence residual."""
    import tsso_dtr.baselines as baselines
    import tsso_dtr.scg as scg

    original = scg.replacement_greedy

    def recorded(*args, **kwargs):
        plan = original(*args, **kwargs)
        res = scg.recurrence_residuals(plan)
        worst = float(np.abs(res).max(initial=0.0))
        SOLVER_RESIDUALS.append(worst)
        if worst >= 1e-9:
            SOLVER_OFFENDERS.append((os.environ.get("PYTEST_CURRENT_TEST", "?"), worst))
        return plan

    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(scg, "replacement_greedy", recorded)
        mp.setattr(baselines, "replacement_greedy", recorded)
        yield SOLVER_RESIDUALS


@pytest.fixture(scope="session")
def acceptance_report():
    def report(number: int, ok: bool, detail: str) -> bool:
        ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[number])
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
        for name, worst in SOLVER_OFFENDERS:
            terminalreporter.write_line(f"recurrence residual {worst:.1e} in {name}")


def pytest_collection_modifyitems(items):
    # acceptance runs after the unit tests; the recurrence check goes last so it
    # sees every solver run of the session
    def rank(item):
        if item.module.__name__.endswith("test_acceptance"):
            return 2 if "criterion_05" in item.name else 1
        return 0
    items.sort(key=rank)
