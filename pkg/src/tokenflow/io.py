"""JSON documents for networks, scenarios and states.

Network: ``{"nodes": [...], "arcs": [{"tail", "head", "gamma", "sigma"}],
"sources": [...], "sinks": [...], "metadata": {...}}``.
Scenario: ``{"events": [{"at_step", "kind", "payload"}]}``.
State: ``{"x": {"<id>": int}}`` or ``{"c_max": C, "x": {"<id>": [int, ...]}}``.
"""

from __future__ import annotations

import json
from typing import Any, Dict, List, Mapping, Union

from tokenflow.constrained import BucketedState
from tokenflow.graph import Modification, Network, NetworkError


def network_to_dict(net: Network) -> Dict[str, Any]:
    d: Dict[str, Any] = {
        "nodes": list(net.nodes),
        "arcs": [{"tail": a.tail, "head": a.head, "gamma": a.gamma, "sigma": a.sigma} for a in net.arcs],
        "sources": sorted(net.sources),
        "sinks": sorted(net.sinks),
    }
    if net.metadata:
        d["metadata"] = net.metadata
    return d


def network_from_dict(d: Mapping[str, Any]) -> Network:
    try:
        arcs = []
        for a in d["arcs"]:
            if isinstance(a, Mapping):
                arcs.append((a["tail"], a["head"], _int(a["gamma"]), _int(a.get("sigma", 0))))
            else:
                arcs.append(tuple(a))
        return Network.build(d["nodes"], arcs, d["sources"], d["sinks"], d.get("metadata"))
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"malformed network document: {exc!r}") from exc


def _int(v: Any) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise NetworkError(f"arc costs must be integers, got {v!r}")
    return v


def dumps_network(net: Network) -> str:
    return json.dumps(network_to_dict(net), indent=2, sort_keys=True) + "\n"


def save_network(net: Network, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_network(net))


def load_network(path: str) -> Network:
    with open(path) as fh:
        return network_from_dict(json.load(fh))


def scenario_to_dict(events: List[Modification]) -> Dict[str, Any]:
    return {
        "events": [{"at_step": m.at_step, "kind": m.kind, "payload": dict(m.payload)} for m in events]
    }


def scenario_from_dict(d: Mapping[str, Any]) -> List[Modification]:
    try:
        return [Modification(e["kind"], e.get("payload", {}), int(e["at_step"])) for e in d["events"]]
    except (KeyError, TypeError) as exc:
        raise NetworkError(f"malformed scenario document: {exc!r}") from exc


def load_scenario(path: str) -> List[Modification]:
    with open(path) as fh:
        return scenario_from_dict(json.load(fh))


def save_scenario(events: List[Modification], path: str) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(events), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _node_key(net: Network, raw: str) -> Any:
    lookup = {str(v): v for v in net.nodes}
    if raw not in lookup:
        raise NetworkError(f"state refers to unknown node {raw}")
    return lookup[raw]


def state_from_dict(net: Network, d: Mapping[str, Any]) -> Union[Dict[Any, int], BucketedState]:
    """Parse a state document against ``net``; missing nodes read as zero."""
    x = d.get("x")
    if not isinstance(x, Mapping):
        raise NetworkError("state document needs an 'x' object")
    if "c_max" in d:
        c_max = int(d["c_max"])
        bstate = BucketedState.zeros(net, c_max)
        for raw, buckets in x.items():
            if len(buckets) != c_max + 1:
                raise NetworkError(f"node {raw}: expected {c_max + 1} buckets")
            bstate.x[_node_key(net, raw)] = [int(b) for b in buckets]
        return bstate
    state = {v: 0 for v in net.nodes}
    for raw, k in x.items():
        state[_node_key(net, raw)] = int(k)
    return state


def load_state(net: Network, path: str) -> Union[Dict[Any, int], BucketedState]:
    with open(path) as fh:
        return state_from_dict(net, json.load(fh))
