import random

import pytest
from hypothesis import given, settings, strategies as st

from tokenflow.graph import Network, NetworkError, is_admissible, total_tokens, validate_assumptions, zero_state
from tokenflow.oracle import shortest_to_sinks
from tokenflow.policy import (
    ChoiceModel,
    RNG_ALGORITHM,
    WalkLimitError,
    inject,
    is_global_rest,
    permitted_moves,
    run_token,
    run_token_enhanced,
    settle,
)

from .conftest import random_network


def state(*xs):
    return {i + 1: x for i, x in enumerate(xs)}


# -- permitted moves -------------------------------------------------------------


def test_rest_state_permits_first_hop(fig2):
    moves = permitted_moves(fig2, state(3, 2, 1, 0, 0), 1, 4)
    assert [(a.tail, a.head) for a in moves] == [(1, 2)]


def test_threshold_is_strict():
    net = Network.build([1, 2, 3], [(1, 2, 2), (2, 3, 1)], [1], [3])
    x = state(1, 0, 0)
    assert permitted_moves(net, x, 1, 2) == []  # 2 - 0 == gamma
    assert len(permitted_moves(net, x, 1, 3)) == 1


def test_zero_state_permits_nothing_from_source(fig2):
    assert permitted_moves(fig2, zero_state(fig2), 1, 1) == []


def test_permitted_moves_unknown_node(fig2):
    with pytest.raises(NetworkError):
        permitted_moves(fig2, zero_state(fig2), 99, 1)


# -- single walks -----------------------------------------------------------------


def test_rest_injection_follows_shortest_path(fig2):
    x = state(3, 2, 1, 0, 0)
    out = run_token(fig2, x, 1)
    assert out.walk == [1, 2, 3, 4, 5]
    assert out.exited and out.elementary_transitions == 4 and out.cost == 3
    assert x == state(3, 2, 1, 0, 0)


def test_zero_state_injection_stops_at_source(fig2):
    x = zero_state(fig2)
    res = inject(fig2, x, 1)
    assert res.delta == 1 and not res.outcome.exited
    assert x == state(1, 0, 0, 0, 0)


def test_negative_arc_into_sink_exits():
    net = Network.build([1, 2], [(1, 2, -1)], [1], [2])
    x = zero_state(net)
    assert run_token(net, x, 1).exited
    assert x == {1: 0, 2: 0}


def test_resident_token_crosses_negative_arc():
    net = Network.build([1, 2, 3], [(1, 2, -1), (2, 3, 5)], [1], [3])
    x = zero_state(net)
    out = run_token(net, x, 1, arriving=False)
    assert out.walk == [1, 2]
    assert x == {1: -1, 2: 1, 3: 0}


def test_source_next_to_zero_cost_sink_exits_at_once():
    net = Network.build([1, 2], [(1, 2, 0)], [1], [2])
    assert inject(net, zero_state(net), 1).outcome.walk == [1, 2]


def test_six_injections_reach_rest(fig2):
    x = zero_state(fig2)
    deltas = [inject(fig2, x, 1).delta for _ in range(6)]
    assert all(d is not None for d in deltas)
    assert x == state(3, 2, 1, 0, 0)
    assert is_global_rest(fig2, x)


def test_inject_rejects_non_sources(fig2):
    with pytest.raises(NetworkError):
        inject(fig2, zero_state(fig2), 5)
    with pytest.raises(NetworkError):
        inject(fig2, zero_state(fig2), 2)


def test_walk_cap_signals_nonpositive_circuit():
    net = Network.build([1, 2, 3], [(1, 2, -1), (2, 1, -1), (2, 3, 50)], [1], [3])
    with pytest.raises(WalkLimitError):
        run_token(net, zero_state(net), 1)


# -- choice model ------------------------------------------------------------------


def test_stochastic_draws_only_on_real_choices():
    a = ChoiceModel.stochastic(7)
    b = ChoiceModel.stochastic(7)
    assert a.pick(["only"]) == "only"
    assert [a.pick(list(range(5))) for _ in range(20)] == [b.pick(list(range(5))) for _ in range(20)]
    assert a.describe()["algorithm"] == RNG_ALGORITHM
    assert ChoiceModel.deterministic().pick([3, 1]) == 3


def test_fresh_rewinds_stream():
    a = ChoiceModel.stochastic(3)
    first = [a.pick(list(range(9))) for _ in range(5)]
    assert [a.fresh().pick(list(range(9))) for _ in range(1)] == first[:1]


def test_unknown_choice_mode():
    with pytest.raises(ValueError):
        ChoiceModel("psychic")


# -- settling ------------------------------------------------------------------------


def test_settle_admissible_is_noop(fig2):
    x = state(3, 2, 1, 0, 0)
    _, moves = settle(fig2, x)
    assert moves == [] and x == state(3, 2, 1, 0, 0)


def test_settle_cascade_from_overfull_source(fig2):
    x = state(5, 0, 0, 0, 0)
    settle(fig2, x)
    assert is_admissible(fig2, x)[0]
    assert total_tokens(x) <= 5
    assert x == state(2, 2, 1, 0, 0)


def test_settle_moves_lowest_id_first():
    # both 1 and 2 are above threshold; node 1 must move first
    net = Network.build([1, 2, 3], [(1, 3, 0), (2, 3, 0)], [1, 2], [3])
    x = {1: 1, 2: 1, 3: 0}
    _, moves = settle(net, x)
    assert [m.walk[0] for m in moves] == [1, 2]


def test_arcs_leaving_a_sink_do_not_constrain():
    net = Network.build([1, 2, 3], [(1, 2, 1), (2, 3, -1), (3, 1, 1)], [1], [2])
    x = zero_state(net)
    settle(net, x)
    assert is_admissible(net, x)[0]
    assert x == {1: 0, 2: 0, 3: 0}


def test_settle_makes_hills_negative():
    # a peak with steep downhill arcs: zero state is not admissible
    net = Network.build([1, 2, 3], [(1, 2, -2), (2, 1, 5), (2, 3, 1), (3, 2, 1)], [2], [3])
    x = zero_state(net)
    settle(net, x)
    assert is_admissible(net, x)[0]
    assert x[1] < 0


# -- enhanced policy ------------------------------------------------------------------


def test_enhanced_walks_through_in_one_injection(fig2):
    x = zero_state(fig2)
    out = run_token_enhanced(fig2, x, 1)
    assert out.exited and out.walk == [1, 2, 3, 4, 5]
    assert out.virtual_tokens == 3
    assert x == state(1, 1, 1, 0, 0)
    assert is_admissible(fig2, x)[0]


def test_enhanced_fig2_rests_after_three_injections(fig2):
    x = zero_state(fig2)
    for _ in range(3):
        assert inject(fig2, x, 1, policy="enhanced").outcome.exited
    assert x == state(3, 2, 1, 0, 0)
    assert is_global_rest(fig2, x, policy="enhanced")


def test_enhanced_matches_original_when_a_move_exists(fig2):
    a = state(3, 2, 1, 0, 0)
    b = dict(a)
    assert run_token(fig2, a, 1).walk == run_token_enhanced(fig2, b, 1).walk
    assert a == b


def test_enhanced_stops_at_dead_end():
    net = Network.build([1, 2, 3], [(1, 2, 5), (1, 3, 9)], [1], [3])
    x = zero_state(net)
    out = run_token_enhanced(net, x, 1)
    assert out.walk == [1, 2] and not out.exited
    assert x[2] == 1


def test_enhanced_loses_nothing_on_strongly_connected_network():
    rng = random.Random(3)
    for _ in range(20):
        n = rng.randint(3, 8)
        nodes = list(range(1, n + 1))
        arcs = [(i, i % n + 1, rng.randint(1, 5)) for i in nodes] + [(i % n + 1, i, rng.randint(1, 5)) for i in nodes if n > 2]
        net = Network.build(nodes, arcs, [1], [n])
        x = zero_state(net)
        for _ in range(30):
            assert inject(net, x, 1, policy="enhanced").outcome.exited


# -- global rest ----------------------------------------------------------------------


def test_zero_state_is_not_rest_and_probe_is_committed(fig2):
    x = zero_state(fig2)
    assert not is_global_rest(fig2, x)
    assert x == state(1, 0, 0, 0, 0)


def test_maximal_rest_state_is_global_rest_for_any_sources():
    rng = random.Random(9)
    done = 0
    while done < 30:
        net = random_network(rng, rng.randint(3, 7), 0.4, gamma=(-1, 4), sources=2)
        dist = shortest_to_sinks(net) if validate_assumptions(net).ok else None
        if dist is None or any(d == float("inf") for d in dist.dist.values()):
            continue
        x = dist.as_state()
        everyone = net.with_changes(sources=frozenset(v for v in net.nodes if v not in net.sinks))
        assert is_global_rest(everyone, x)
        assert x == dist.as_state()
        done += 1


# -- properties on random validated networks -------------------------------------------


@st.composite
def validated_network(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    rng = random.Random(seed)
    while True:
        net = random_network(rng, rng.randint(3, 7), 0.45, gamma=(-1, 4))
        if validate_assumptions(net).ok:
            return net


@settings(max_examples=60, deadline=None)
@given(net=validated_network(), steps=st.integers(1, 60), seed=st.integers(0, 1000))
def test_injection_invariants(net, steps, seed):
    x = zero_state(net)
    settle(net, x)
    dist = shortest_to_sinks(net)
    choice = ChoiceModel.stochastic(seed)
    (src,) = net.sources
    for _ in range(steps):
        before = dict(x)
        res = inject(net, x, src, choice)
        out = res.outcome
        # step shape: unchanged or one unit added at the stopping node
        diff = {v: x[v] - before[v] for v in x if x[v] != before[v]}
        assert diff == ({} if res.delta is None else {res.delta: 1})
        assert is_admissible(net, x)[0]
        assert len(set(out.walk)) == len(out.walk)
        assert all(x[v] <= dist.dist[v] for v in net.nodes)
        length = sum(net.arc_map[(a, b)].gamma for a, b in zip(out.walk, out.walk[1:]))
        if out.exited:
            assert length == dist.dist[src] == before[src]
