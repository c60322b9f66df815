import numpy as np
import pytest

from compocert.graph import Component, Dataset, Graph, uniform_graphset
from compocert.xor import reference_graphset, xor_dataset


@pytest.fixture
def xor_data():
    return xor_dataset()


@pytest.fixture
def xor_reference(xor_data):
    return reference_graphset(xor_data).evaluate(xor_data)


def table_component(cid, mapping, commutative=False):
    return Component(cid, len(next(iter(mapping))), commutative, mapping)


@pytest.fixture
def chain_world():
    """Two-level discrete world: g(f(a, b), c) with f = AND, g = OR."""
    bits = ("0", "1")
    f = table_component("f", {(a, b): str(int(a == b == "1")) for a in bits for b in bits})
    g = table_component("g", {(a, b): str(int("1" in (a, b))) for a in bits for b in bits})
    graph = Graph((0, 1, 2), [(3, "f", (0, 1)), (4, "g", (3, 2))], (4,))
    rows = []
    for a in bits:
        for b in bits:
            for c in bits:
                y = g(f(a, b), c)
                rows.append((f"{a}{b}{c}", (a, b, c), (y,)))
    test_ids = {"100", "011"}
    ds = Dataset([r for r in rows if r[0] not in test_ids], [r for r in rows if r[0] in test_ids])
    gs = uniform_graphset(ds, graph, [f, g]).evaluate(ds)
    return ds, gs


def vec(*xs):
    return np.asarray(xs, dtype=float)


ACCEPTANCE_LINES: list = []


@pytest.fixture
def verdict():
    """Record and print one PASS/FAIL line per acceptance criterion."""

    def record(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
