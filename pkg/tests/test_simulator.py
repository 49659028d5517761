import csv
import json

import numpy as np
import pytest

from tokenflow.graph import Modification, Network, incidence_matrix, is_admissible
from tokenflow.oracle import shortest_to_sinks
from tokenflow.simulator import (
    SimConfig,
    SimulationRefused,
    run,
    run_dynamic,
    summarize,
    write_metrics_csv,
    write_summary_json,
    write_trace_jsonl,
)


def test_fig2_unconstrained_summary(fig2):
    (row,) = summarize(run(SimConfig(fig2)))
    assert row.as_tuple() == (3, 3, 4, 6, 6, 6)
    assert not row.partial


def test_fig2_constrained_summary(fig2):
    (row,) = summarize(run(SimConfig(fig2, c_max=2)))
    assert row.as_tuple() == (4, 2, 3, 10, 10, 10)


def test_fig2_enhanced_summary(fig2):
    mlog = run(SimConfig(fig2, policy="enhanced"))
    (row,) = summarize(mlog)
    assert row.L_ss == 3 and row.T_ss == 3 and row.V_ss == 6 and row.l_ss == 0


def test_v_series_counts_buffered_tokens(fig2):
    mlog = run(SimConfig(fig2))
    assert mlog.v_series[:7] == [0, 1, 2, 3, 4, 5, 6]
    assert set(mlog.v_series[7:]) == {6}
    assert [r.k for r in mlog.records] == list(range(1, mlog.injections + 1))


def test_zero_steps_is_a_partial_run(fig2):
    mlog = run(SimConfig(fig2, stop="max_steps", steps=0))
    assert mlog.v_series == [0] and mlog.injections == 0
    (row,) = summarize(mlog)
    assert row.partial and row.L_ss is None


def test_identical_configs_identical_logs(fig2):
    for choice in ("deterministic", "stochastic"):
        a = run(SimConfig(fig2, choice=choice, seed=5, c_max=2))
        b = run(SimConfig(fig2, choice=choice, seed=5, c_max=2))
        assert a.v_series == b.v_series and a.records == b.records


def test_stochastic_default_samples(fig2):
    mlog = run(SimConfig(fig2, choice="stochastic", seed=1))
    assert len(mlog.post_rest[1]) == 100
    assert mlog.injections == mlog.t_ss + 100


def test_lost_tokens_equal_growth_without_exits(fig2):
    mlog = run(SimConfig(fig2))
    assert mlog.l_ss == mlog.v_ss - mlog.initial_v


def test_steady_state_matches_distances(fig2):
    mlog = run(SimConfig(fig2))
    assert mlog.final_state == shortest_to_sinks(fig2).as_state()


def test_rest_then_extra(fig2):
    mlog = run(SimConfig(fig2, stop="rest_then_extra", n_post=5))
    assert len(mlog.post_rest[1]) == 5
    assert mlog.arc_histogram[(1, 2)] == 5


def test_invalid_network_refused():
    net = Network.build([1, 2, 3], [(1, 2, -2), (2, 1, 1), (2, 3, 1)], [1], [3])
    with pytest.raises(SimulationRefused):
        run(SimConfig(net))


def test_bad_config_values(fig2):
    for kwargs in (dict(policy="lazy"), dict(choice="x"), dict(stop="never"), dict(c_max=-1), dict(schedule="lifo")):
        with pytest.raises(ValueError):
            SimConfig(fig2, **kwargs)


def test_multi_source_round_robin():
    net = Network.build([1, 2, 3], [(1, 3, 2), (2, 3, 1)], [1, 2], [3])
    mlog = run(SimConfig(net))
    rows = summarize(mlog)
    assert [r.L_ss for r in rows] == [2, 1]
    assert [r.source for r in mlog.records[:4]] == [1, 2, 1, 2]


def test_single_source_schedule():
    net = Network.build([1, 2, 3], [(1, 3, 2), (2, 3, 1)], [1, 2], [3])
    mlog = run(SimConfig(net, schedule="single:2"))
    assert {r.source for r in mlog.records} == {2}
    assert mlog.final_state == {1: 0, 2: 1, 3: 0}


def test_scheduled_events_fire_at_their_step(fig2):
    ev = Modification("remove_nodes", {"nodes": [3]}, 2)
    mlog = run(SimConfig(fig2, scenario=[ev], record_trace=True))
    assert mlog.trace[2].events == [ev]
    (row,) = summarize(mlog)
    assert row.L_ss == 4


# -- dynamic segments ------------------------------------------------------------


def test_removing_and_restoring_a_node(fig2):
    events = [
        Modification("remove_nodes", {"nodes": [3]}, 10),
        Modification("add_nodes", {"nodes": [3], "arcs": [[2, 3, 1, 1], [3, 4, 1, 1]]}, 20),
    ]
    dl = run_dynamic(SimConfig(fig2, scenario=events))
    assert dl.refused is None
    l = [summarize(s)[0].L_ss for s in dl.segments]
    assert l == [3, 4, 3]
    mid = dl.segments[1]
    assert set(mid.final_state) == {1, 2, 4, 5}
    assert mid.discarded == 1  # node 3 held one token


def test_removal_off_the_optimal_path_changes_nothing(fig2):
    dl = run_dynamic(SimConfig(fig2, scenario=[Modification("remove_arcs", {"arcs": [[2, 4]]}, 10)]))
    a, b = dl.segments
    assert summarize(a)[0].L_ss == summarize(b)[0].L_ss == 3
    assert b.t_ss == b.start_k


def test_dynamic_refusal_is_reported(fig2):
    bad = Modification("add_arcs", {"arcs": [[3, 2, -5, 0]]}, 10)
    dl = run_dynamic(SimConfig(fig2, scenario=[bad]))
    assert len(dl.segments) == 1 and dl.refused is not None and dl.refused.segment == 1


# -- outputs --------------------------------------------------------------------------


def test_metrics_csv(fig2, tmp_path):
    mlog = run(SimConfig(fig2))
    path = tmp_path / "m.csv"
    write_metrics_csv(mlog, str(path))
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["k", "V", "injected_source", "delta_node_or_exit"]
    assert rows[1] == ["0", "0", "", ""]
    assert rows[2] == ["1", "1", "1", "1"]
    assert rows[-1][3] == "exit:5"


def test_summary_json(fig2, tmp_path):
    cfg = SimConfig(fig2, c_max=2)
    path = tmp_path / "s.json"
    write_summary_json(run(cfg), str(path), cfg)
    d = json.loads(path.read_text())
    assert d["rows"][0]["L_ss"] == 4 and d["config"]["mode"] == "constrained"
    assert d["final_state"]["x"]["1"] == [4, 0, 0]


def test_trace_replays_through_incidence_matrix(fig2, tmp_path):
    mlog = run(SimConfig(fig2, record_trace=True))
    path = tmp_path / "t.jsonl"
    write_trace_jsonl(mlog, str(path))
    lines = [json.loads(s) for s in path.read_text().splitlines()]
    assert len(lines) == mlog.injections
    nodes = list(fig2.non_sink_nodes)
    arcs = [(a.tail, a.head) for a in fig2.arcs]
    B = incidence_matrix(fig2)
    x = np.zeros(len(nodes), dtype=int)
    for ev in lines:
        u = np.zeros(len(arcs), dtype=int)
        for t, h in zip(ev["walk"], ev["walk"][1:]):
            u[arcs.index((t, h))] += 1
        e = np.zeros(len(nodes), dtype=int)
        e[nodes.index(ev["source"])] = 1
        x = x + e + B @ u
    state = {**dict(zip(nodes, x.tolist())), 5: 0}
    assert state == mlog.final_state and is_admissible(fig2, state)[0]
