import itertools
import random

import networkx as nx
import pytest

from tokenflow.graph import Network, make_path, validate_assumptions
from tokenflow.oracle import (
    NonPositiveCircuitError,
    all_constrained_shortest,
    all_shortest_paths,
    canonical_path,
    constrained_distances,
    constrained_shortest,
    detect_nonpositive_circuit,
    shortest_to_sinks,
    sink_pair_paths_nonnegative,
)

from .conftest import random_network


def circuits(net):
    g = nx.DiGraph()
    g.add_nodes_from(net.nodes)
    g.add_edges_from((a.tail, a.head) for a in net.arcs)
    return [c + [c[0]] for c in nx.simple_cycles(g)]


def circuit_sum(net, cyc, cost):
    return sum(getattr(net.arc_map[(a, b)], cost) for a, b in zip(cyc, cyc[1:]))


def brute_detect(net, cost, strict):
    for c in circuits(net):
        s = circuit_sum(net, c, cost)
        if s < 0 or (s == 0 and not strict):
            return True
    return False


def check_witness(net, witness, cost, strict):
    assert witness[0] == witness[-1] == min(witness)
    assert len(set(witness[:-1])) == len(witness) - 1
    s = circuit_sum(net, witness, cost)
    assert s < 0 or (s == 0 and not strict)


# -- distances -----------------------------------------------------------------------


def test_fig2_distances(fig2):
    d = shortest_to_sinks(fig2)
    assert d.as_state() == {1: 3, 2: 2, 3: 1, 4: 0, 5: 0}
    assert canonical_path(fig2, d, 1) == [1, 2, 3, 4, 5]


def test_sink_distance_is_zero(fig2):
    assert shortest_to_sinks(fig2).dist[5] == 0


def test_unreachable_node_is_infinite():
    net = Network.build([1, 2, 3], [(1, 2, 1)], [1], [2])
    d = shortest_to_sinks(net)
    assert d.dist[3] == float("inf") and canonical_path(net, d, 3) is None
    with pytest.raises(ValueError):
        d.as_state()


def test_nonpositive_circuit_does_not_settle():
    net = Network.build([1, 2, 3], [(1, 2, -2), (2, 1, 1), (2, 3, 1)], [1], [3])
    with pytest.raises(NonPositiveCircuitError):
        shortest_to_sinks(net)


def test_all_shortest_paths_lists_ties():
    net = Network.build([1, 2, 3, 4], [(1, 2, 1), (1, 3, 1), (2, 4, 1), (3, 4, 1)], [1], [4])
    d = shortest_to_sinks(net)
    assert all_shortest_paths(net, d, 1) == [[1, 2, 4], [1, 3, 4]]
    assert canonical_path(net, d, 1) == [1, 2, 4]


def _brute_distance(net, start, c_max=None):
    best = None

    def rec(path, length, cost):
        nonlocal best
        v = path[-1]
        if v in net.sinks:
            if c_max is None or cost <= c_max:
                best = length if best is None else min(best, length)
            return
        for a in net.out_arcs[v]:
            if a.head not in path:
                path.append(a.head)
                rec(path, length + a.gamma, cost + a.sigma)
                path.pop()

    rec([start], 0, 0)
    return best


def test_distances_match_path_enumeration():
    rng = random.Random(1)
    done = 0
    while done < 60:
        net = random_network(rng, rng.randint(3, 7), 0.4, gamma=(-2, 5), sinks=rng.randint(1, 2))
        if not validate_assumptions(net).ok:
            continue
        d = shortest_to_sinks(net)
        for v in net.nodes:
            if v in net.sinks:
                continue
            brute = _brute_distance(net, v)
            assert d.dist[v] == (float("inf") if brute is None else brute)
        done += 1


# -- constrained distances ------------------------------------------------------------


def test_fig2_constrained(fig2):
    r = constrained_shortest(fig2, 1, 2)
    assert (r.length, r.secondary_cost, r.path) == (4, 2, (1, 2, 4, 5))
    r = constrained_shortest(fig2, 1, 3)
    assert (r.length, r.secondary_cost, r.path) == (3, 3, (1, 2, 3, 4, 5))
    assert constrained_shortest(fig2, 1, 1) is None


def test_slack_budget_equals_unconstrained():
    rng = random.Random(6)
    done = 0
    while done < 40:
        net = random_network(rng, rng.randint(2, 7), 0.4, gamma=(-1, 5), sigma=(0, 3))
        if not validate_assumptions(net).ok:
            continue
        (s,) = net.sources
        slack = len(net.nodes) * max(1, net.sigma_bar)
        d = shortest_to_sinks(net).dist[s]
        r = constrained_shortest(net, s, slack)
        assert (r is None and d == float("inf")) or r.length == d
        done += 1


def test_constrained_matches_path_enumeration():
    rng = random.Random(12)
    done = 0
    while done < 60:
        net = random_network(rng, rng.randint(2, 7), 0.45, gamma=(0, 5), sigma=(1, 3))
        if not validate_assumptions(net).ok:
            continue
        (s,) = net.sources
        c_max = rng.randint(0, 8)
        r = constrained_shortest(net, s, c_max)
        brute = _brute_distance(net, s, c_max)
        assert (r is None) == (brute is None)
        if r is not None:
            assert r.length == brute and r.secondary_cost <= c_max
            assert make_path(net, r.path).length == r.length
            for p in all_constrained_shortest(net, s, c_max):
                assert make_path(net, p.path).length == r.length
        done += 1


def test_constrained_distances_reject_negative_sigma():
    net = Network.build([1, 2], [(1, 2, 1, -1)], [1], [2])
    with pytest.raises(ValueError):
        constrained_distances(net, 2)


# -- circuit detectors -----------------------------------------------------------------


def test_zero_sum_circuit_detected():
    net = Network.build([1, 2], [(1, 2, 1), (2, 1, -1)], [1], [2])
    assert detect_nonpositive_circuit(net) == [1, 2, 1]
    assert detect_nonpositive_circuit(net, strict=True) is None


def test_positive_acyclic_has_no_circuit(fig2):
    assert detect_nonpositive_circuit(fig2) is None
    assert detect_nonpositive_circuit(fig2, cost="sigma") is None


@pytest.mark.parametrize("strict", [False, True], ids=["nonpositive", "negative"])
def test_detector_matches_enumeration_up_to_8_nodes(strict):
    rng = random.Random(30 + strict)
    for _ in range(300):
        net = random_network(rng, rng.randint(2, 8), rng.uniform(0.15, 0.5), gamma=(-2, 4))
        w = detect_nonpositive_circuit(net, "gamma", strict)
        assert (w is not None) == brute_detect(net, "gamma", strict)
        if w is not None:
            check_witness(net, w, "gamma", strict)


def _all_graphs(n, costs):
    pairs = [(i, j) for i in range(1, n + 1) for j in range(1, n + 1) if i != j]
    for choice in itertools.product([None, *costs], repeat=len(pairs)):
        arcs = [(i, j, c) for (i, j), c in zip(pairs, choice) if c is not None]
        yield Network.build(range(1, n + 1), arcs, [1], [n])


def small_circuits(n, arcmap):
    """Simple circuits of a graph on 1..n, each listed once from its smallest node."""
    for k in range(2, n + 1):
        for combo in itertools.permutations(range(1, n + 1), k):
            if combo[0] != min(combo):
                continue
            cyc = combo + (combo[0],)
            if all((a, b) in arcmap for a, b in zip(cyc, cyc[1:])):
                yield cyc


def test_detector_full_sweep_up_to_3_nodes():
    costs = (-2, -1, 0, 1, 2)
    count = 0
    for n in (2, 3):
        for net in _all_graphs(n, costs):
            sums = [sum(net.arc_map[(a, b)].gamma for a, b in zip(c, c[1:])) for c in small_circuits(n, net.arc_map)]
            assert (detect_nonpositive_circuit(net) is not None) == any(x <= 0 for x in sums)
            assert (detect_nonpositive_circuit(net, strict=True) is not None) == any(x < 0 for x in sums)
            count += 1
    assert count == 6**2 + 6**6


def test_detector_sampled_sweep_4_and_5_nodes():
    rng = random.Random(45)
    costs = (None, -2, -1, 0, 1, 2)
    for n in (4, 5):
        pairs = [(i, j) for i in range(1, n + 1) for j in range(1, n + 1) if i != j]
        for _ in range(4000):
            arcs = [(i, j, c) for (i, j) in pairs if (c := rng.choice(costs)) is not None]
            net = Network.build(range(1, n + 1), arcs, [1], [n])
            sums = [sum(net.arc_map[(a, b)].gamma for a, b in zip(c, c[1:])) for c in small_circuits(n, net.arc_map)]
            assert (detect_nonpositive_circuit(net) is not None) == any(x <= 0 for x in sums)
            assert (detect_nonpositive_circuit(net, strict=True) is not None) == any(x < 0 for x in sums)


# -- sink pairs ---------------------------------------------------------------------------


def test_single_sink_passes(fig2):
    assert sink_pair_paths_nonnegative(fig2) == (True, None)


def test_negative_sink_link_fails():
    net = Network.build([1, 2, 3], [(1, 2, 1), (2, 3, -1)], [1], [2, 3])
    assert sink_pair_paths_nonnegative(net) == (False, [2, 3])


def test_sink_pairs_match_enumeration():
    rng = random.Random(77)
    done = 0
    while done < 150:
        net = random_network(rng, rng.randint(3, 8), 0.35, gamma=(-2, 4), sinks=2)
        if detect_nonpositive_circuit(net) is not None:
            continue
        a, b = sorted(net.sinks)
        brute_ok = True
        for s, t in ((a, b), (b, a)):
            g = nx.DiGraph([(x.tail, x.head) for x in net.arcs])
            if s in g and t in g:
                for p in nx.all_simple_paths(g, s, t):
                    if make_path(net, p).length < 0:
                        brute_ok = False
        ok, witness = sink_pair_paths_nonnegative(net)
        assert ok == brute_ok
        if witness:
            assert make_path(net, witness).length < 0
        done += 1
