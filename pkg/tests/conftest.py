import random

import pytest

from tokenflow.generators import fig2_network, small_world
from tokenflow.graph import Network

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion covered by the test")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    crit = dict(report.user_properties).get("criterion")
    if crit is None:
        return
    num, title = crit
    prev = _criteria.get(num, (title, True))
    _criteria[num] = (title, prev[1] and report.passed)


@pytest.fixture(autouse=True)
def _tag_criterion(request, record_property):
    m = request.node.get_closest_marker("criterion")
    if m is not None:
        record_property("criterion", (m.args[0], m.args[1]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_criteria):
        title, ok = _criteria[num]
        terminalreporter.write_line(f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {title}")


@pytest.fixture
def fig2() -> Network:
    return fig2_network()


def random_network(rng: random.Random, n: int, p: float, gamma=(1, 5), sigma=(0, 2), sinks=1, sources=1) -> Network:
    """Random digraph on 1..n with uniform integer costs; no validation."""
    nodes = list(range(1, n + 1))
    arcs = []
    for i in nodes:
        for j in nodes:
            if i != j and rng.random() < p:
                arcs.append((i, j, rng.randint(*gamma), rng.randint(*sigma)))
    picks = rng.sample(nodes, sinks + sources)
    return Network.build(nodes, arcs, picks[sinks:], picks[:sinks])


def sw_instances(count, n_range=(10, 100), seed0=0):
    """Seeded Table-II-style small-world networks of assorted sizes."""
    rng = random.Random(seed0)
    out = []
    for i in range(count):
        n = rng.randint(*n_range)
        out.append(small_world(n, rng.choice((4, 6)), 0.15, 50, 10, seed0 * 1000 + i))
    return out
