import json
from pathlib import Path

import pytest

from kgapprox import load_graph, load_query, load_simtable

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def load_fixture(name):
    d = FIXTURES / name
    attrs = d / "attrs.tsv"
    g = load_graph(d / "nodes.tsv", d / "edges.tsv", attrs if attrs.exists() else None)
    return g, load_simtable(d / "simtable.tsv")


@pytest.fixture(scope="session")
def fig3():
    return load_fixture("fig3")


@pytest.fixture(scope="session")
def table2():
    return load_fixture("table2")


@pytest.fixture(scope="session")
def chain_kg():
    return load_fixture("chain")


@pytest.fixture(scope="session")
def hub():
    return load_fixture("synthetic/hub")


@pytest.fixture(scope="session")
def hub_truth():
    return json.loads((FIXTURES / "synthetic" / "hub" / "ground_truth.json").read_text())


@pytest.fixture
def query_at():
    def _load(rel):
        return load_query(str(FIXTURES / rel))
    return _load


_CRITERIA_KEY = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, ok, detail)``."""
    lines = request.config.stash.setdefault(_CRITERIA_KEY, {})

    def _record(n, ok, detail):
        line = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        lines[(n, request.node.name)] = line
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA_KEY, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for key in sorted(lines):
            terminalreporter.write_line(lines[key])
