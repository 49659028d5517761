"""Network model, token-count states and structural checks.

A state of the unconstrained system is a plain ``dict`` mapping every node to
its (possibly negative) token count; sinks are always 0.  Constrained states
live in :mod:`tokenflow.constrained`.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Any, Dict, Hashable, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np

INT64_MAX = 2**63 - 1

Node = Hashable
State = Dict[Node, int]


class NetworkError(ValueError):
    """Malformed network, state or modification."""


class Arc(NamedTuple):
    tail: Node
    head: Node
    gamma: int
    sigma: int = 0


@dataclass(frozen=True, eq=True)
class Network:
    """Directed network with integer primary (gamma) and secondary (sigma) arc costs.

    Use :meth:`build` rather than the raw constructor: it sorts nodes and arcs
    (ascending ids fix every scan order in the package) and checks the
    structural invariants.
    """

    nodes: Tuple[Node, ...]
    arcs: Tuple[Arc, ...]
    sources: frozenset
    sinks: frozenset
    metadata: Dict[str, Any] = field(default_factory=dict, compare=False)

    @classmethod
    def build(
        cls,
        nodes: Iterable[Node],
        arcs: Iterable[Sequence],
        sources: Iterable[Node],
        sinks: Iterable[Node],
        metadata: Optional[Mapping[str, Any]] = None,
    ) -> "Network":
        node_list = sorted(set(nodes))
        node_set = set(node_list)
        arc_list = []
        seen = set()
        for a in arcs:
            arc = Arc(a[0], a[1], int(a[2]), int(a[3]) if len(a) > 3 else 0)
            if arc.tail not in node_set or arc.head not in node_set:
                raise NetworkError(f"arc {arc.tail}->{arc.head} references an undeclared node")
            if arc.tail == arc.head:
                raise NetworkError(f"self-loop on node {arc.tail}")
            if (arc.tail, arc.head) in seen:
                raise NetworkError(f"duplicate arc {arc.tail}->{arc.head}")
            seen.add((arc.tail, arc.head))
            arc_list.append(arc)
        arc_list.sort(key=lambda a: (a.tail, a.head))
        src = frozenset(sources)
        snk = frozenset(sinks)
        for s in src | snk:
            if s not in node_set:
                raise NetworkError(f"source/sink {s} is not a declared node")
        if src & snk:
            raise NetworkError(f"nodes {sorted(src & snk)} are both source and sink")
        return cls(tuple(node_list), tuple(arc_list), src, snk, dict(metadata or {}))

    # -- derived lookups (cached; the dataclass is frozen) -----------------

    @cached_property
    def out_arcs(self) -> Dict[Node, Tuple[Arc, ...]]:
        """Out-arcs of every node sorted by head id (the deterministic scan order)."""
        out: Dict[Node, List[Arc]] = {v: [] for v in self.nodes}
        for a in self.arcs:
            out[a.tail].append(a)
        return {v: tuple(lst) for v, lst in out.items()}

    @cached_property
    def scan(self) -> Dict[Node, Tuple[Tuple[Node, int, int, bool], ...]]:
        # (head, gamma, sigma, head_is_sink) per out-arc; hot loop of the engines
        sinks = self.sinks
        return {
            v: tuple((a.head, a.gamma, a.sigma, a.head in sinks) for a in arcs)
            for v, arcs in self.out_arcs.items()
        }

    @cached_property
    def in_arcs(self) -> Dict[Node, Tuple[Arc, ...]]:
        inn: Dict[Node, List[Arc]] = {v: [] for v in self.nodes}
        for a in self.arcs:
            inn[a.head].append(a)
        return {v: tuple(lst) for v, lst in inn.items()}

    @cached_property
    def arc_map(self) -> Dict[Tuple[Node, Node], Arc]:
        return {(a.tail, a.head): a for a in self.arcs}

    @cached_property
    def node_set(self) -> frozenset:
        return frozenset(self.nodes)

    @cached_property
    def non_sink_nodes(self) -> Tuple[Node, ...]:
        return tuple(v for v in self.nodes if v not in self.sinks)

    @cached_property
    def gamma_bar(self) -> int:
        """Largest primary arc cost (0 for an arcless network)."""
        return max((a.gamma for a in self.arcs), default=0)

    @cached_property
    def sigma_bar(self) -> int:
        return max((a.sigma for a in self.arcs), default=0)

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, node: object) -> bool:
        return node in self.node_set

    def with_changes(self, **kwargs: Any) -> "Network":
        """Rebuild with some of nodes/arcs/sources/sinks/metadata replaced."""
        parts = dict(
            nodes=self.nodes, arcs=self.arcs, sources=self.sources, sinks=self.sinks,
            metadata=self.metadata,
        )
        parts.update(kwargs)
        return Network.build(**parts)


@dataclass(frozen=True)
class Path:
    nodes: Tuple[Node, ...]
    length: int
    secondary_cost: int

    @property
    def arc_count(self) -> int:
        return len(self.nodes) - 1


def make_path(net: Network, nodes: Sequence[Node], allow_repeats: bool = False) -> Path:
    """Build a :class:`Path` (or a walk, with ``allow_repeats``) and total its costs."""
    nodes = tuple(nodes)
    if not nodes:
        raise NetworkError("empty path")
    if not allow_repeats and len(set(nodes)) != len(nodes):
        raise NetworkError(f"path {nodes} repeats a node")
    length = 0
    cost = 0
    amap = net.arc_map
    for t, h in zip(nodes, nodes[1:]):
        arc = amap.get((t, h))
        if arc is None:
            raise NetworkError(f"{t}->{h} is not an arc")
        length += arc.gamma
        cost += arc.sigma
    return Path(nodes, length, cost)


def zero_state(net: Network) -> State:
    return {v: 0 for v in net.nodes}


def total_tokens(state: Mapping[Node, int]) -> int:
    """V(x): total number of (possibly virtual) tokens buffered in the network."""
    return sum(state.values())


def _check_state_keys(net: Network, state: Mapping[Node, int]) -> None:
    extra = [v for v in state if v not in net.node_set]
    if extra:
        raise NetworkError(f"state refers to unknown nodes {sorted(extra)[:5]}")
    missing = [v for v in net.nodes if v not in state]
    if missing:
        raise NetworkError(f"state has no entry for nodes {missing[:5]}")


def is_admissible(net: Network, state: Mapping[Node, int]) -> Tuple[bool, List[Arc]]:
    """Check x_i - x_j <= gamma_ij on every arc; return the flag and the violating arcs.

    Arcs leaving a sink are skipped: tokens exit on entering a sink, so
    those arcs never carry one.
    """
    _check_state_keys(net, state)
    sinks = net.sinks
    bad = []
    for a in net.arcs:
        if a.tail in sinks:
            continue
        xj = 0 if a.head in sinks else state[a.head]
        if state[a.tail] - xj > a.gamma:
            bad.append(a)
    return not bad, bad


def incidence_matrix(net: Network) -> np.ndarray:
    """Node-arc incidence matrix without the sink rows.

    Rows follow ``net.non_sink_nodes``, columns follow ``net.arcs``; each
    column has -1 at the tail row and +1 at the head row.
    """
    rows = {v: r for r, v in enumerate(net.non_sink_nodes)}
    B = np.zeros((len(rows), len(net.arcs)), dtype=np.int64)
    for col, a in enumerate(net.arcs):
        if a.tail in rows:
            B[rows[a.tail], col] = -1
        if a.head in rows:
            B[rows[a.head], col] = 1
    return B


# -- rational costs -----------------------------------------------------------


def scale_rational_costs(costs: Sequence[Any]) -> Tuple[List[int], int]:
    """Scale rational costs by the lcm of their denominators.

    Accepts ints, :class:`fractions.Fraction` or ``"p/q"`` strings.  Returns
    the integer costs and the scale factor.  Raises ``OverflowError`` when a
    scaled cost does not fit in a signed 64-bit integer.
    """
    try:
        fr = [Fraction(c) for c in costs]
    except ZeroDivisionError as exc:
        raise NetworkError("zero denominator in rational cost") from exc
    mu = 1
    for f in fr:
        mu = mu * f.denominator // math.gcd(mu, f.denominator)
    scaled = []
    for f in fr:
        v = f * mu
        assert v.denominator == 1
        iv = int(v)
        if abs(iv) > INT64_MAX:
            raise OverflowError(f"scaled cost {iv} exceeds the 64-bit range (scale {mu})")
        scaled.append(iv)
    return scaled, mu


def rational_network(
    nodes: Iterable[Node],
    arcs: Iterable[Sequence],
    sources: Iterable[Node],
    sinks: Iterable[Node],
    metadata: Optional[Mapping[str, Any]] = None,
) -> Tuple[Network, int]:
    """Network whose primary costs are given as rationals; returns (network, scale)."""
    arcs = [tuple(a) for a in arcs]
    gammas, mu = scale_rational_costs([a[2] for a in arcs])
    int_arcs = [(a[0], a[1], g, int(a[3]) if len(a) > 3 else 0) for a, g in zip(arcs, gammas)]
    meta = dict(metadata or {})
    meta["gamma_scale"] = mu
    return Network.build(nodes, int_arcs, sources, sinks, meta), mu


# -- assumption validation ----------------------------------------------------


@dataclass
class ValidationReport:
    weakly_connected: bool
    feasible_path_per_source: Dict[Node, bool]
    nonpositive_gamma_circuit: Optional[List[Node]]
    negative_sigma_circuit: Optional[List[Node]]
    negative_sink_pair_path: Optional[List[Node]]
    gamma_bound: int
    sigma_bound: int
    c_max: Optional[int] = None
    negative_sigma_arcs: List[Arc] = field(default_factory=list)
    overflow_risk: bool = False
    messages: List[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return (
            self.weakly_connected
            and all(self.feasible_path_per_source.values())
            and self.nonpositive_gamma_circuit is None
            and self.negative_sigma_circuit is None
            and self.negative_sink_pair_path is None
            and not self.negative_sigma_arcs
            and not self.overflow_risk
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "ok": self.ok,
            "weakly_connected": self.weakly_connected,
            "feasible_path_per_source": {str(k): v for k, v in sorted(self.feasible_path_per_source.items())},
            "nonpositive_gamma_circuit": self.nonpositive_gamma_circuit,
            "negative_sigma_circuit": self.negative_sigma_circuit,
            "negative_sink_pair_path": self.negative_sink_pair_path,
            "gamma_bound": self.gamma_bound,
            "sigma_bound": self.sigma_bound,
            "c_max": self.c_max,
            "negative_sigma_arcs": [list(a) for a in self.negative_sigma_arcs],
            "overflow_risk": self.overflow_risk,
            "messages": list(self.messages),
        }


def _weakly_connected(net: Network) -> bool:
    if not net.nodes:
        return False
    adj: Dict[Node, List[Node]] = {v: [] for v in net.nodes}
    for a in net.arcs:
        adj[a.tail].append(a.head)
        adj[a.head].append(a.tail)
    start = net.nodes[0]
    seen = {start}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                queue.append(w)
    return len(seen) == len(net.nodes)


def _min_sigma_to_sink(net: Network) -> Dict[Node, float]:
    """Least secondary cost from each node to its first sink (sigma >= 0 assumed)."""
    import heapq

    best: Dict[Node, float] = {v: math.inf for v in net.nodes}
    heap = []
    for t in net.sinks:
        best[t] = 0
        heap.append((0, t))
    heapq.heapify(heap)
    while heap:
        d, v = heapq.heappop(heap)
        if d > best[v]:
            continue
        for a in net.in_arcs[v]:
            u = a.tail
            if u in net.sinks:
                continue
            nd = d + a.sigma
            if nd < best[u]:
                best[u] = nd
                heapq.heappush(heap, (nd, u))
    return best


def _reaches_sink(net: Network) -> set:
    seen = set(net.sinks)
    queue = deque(net.sinks)
    while queue:
        v = queue.popleft()
        for a in net.in_arcs[v]:
            if a.tail not in seen:
                seen.add(a.tail)
                queue.append(a.tail)
    return seen


def validate_assumptions(net: Network, c_max: Optional[int] = None) -> ValidationReport:
    """Evaluate the standing assumptions on a network; failures are reported, never raised.

    With ``c_max`` the per-source feasibility also requires a path whose
    secondary cost fits the budget, and negative secondary costs are rejected.
    """
    from tokenflow import oracle

    msgs: List[str] = []
    connected = _weakly_connected(net)
    if not connected:
        msgs.append("network is not weakly connected")
    if not net.sources:
        msgs.append("network has no source")
    if not net.sinks:
        msgs.append("network has no sink")

    neg_sigma = [a for a in net.arcs if a.sigma < 0]
    if c_max is not None:
        if c_max < 0:
            msgs.append(f"c_max must be non-negative, got {c_max}")
        if neg_sigma:
            msgs.append(
                f"negative secondary costs are not supported in constrained mode "
                f"({len(neg_sigma)} arcs, e.g. {tuple(neg_sigma[0])})"
            )

    feasible: Dict[Node, bool] = {}
    if c_max is not None and not neg_sigma:
        best = _min_sigma_to_sink(net)
        for s in sorted(net.sources):
            feasible[s] = best[s] <= c_max
    else:
        reach = _reaches_sink(net)
        for s in sorted(net.sources):
            feasible[s] = s in reach
    for s, ok in feasible.items():
        if not ok:
            msgs.append(f"source {s} has no feasible path to a sink")

    gamma_circ = oracle.detect_nonpositive_circuit(net, cost="gamma", strict=False)
    if gamma_circ is not None:
        msgs.append(f"non-positive gamma circuit {gamma_circ}")
    sigma_circ = oracle.detect_nonpositive_circuit(net, cost="sigma", strict=True)
    if sigma_circ is not None:
        msgs.append(f"negative sigma circuit {sigma_circ}")

    pair_witness = None
    if gamma_circ is None:
        ok_pairs, pair_witness = oracle.sink_pair_paths_nonnegative(net)
        if not ok_pairs:
            msgs.append(f"negative path between sinks {pair_witness}")

    gmax = max((abs(a.gamma) for a in net.arcs), default=0)
    n = len(net.nodes)
    layers = 1 if c_max is None else c_max + 1
    overflow = gmax * (n * layers) ** 2 > INT64_MAX
    if overflow:
        msgs.append("worst-case token accumulation could overflow 64-bit integers")

    return ValidationReport(
        weakly_connected=connected and bool(net.sources) and bool(net.sinks),
        feasible_path_per_source=feasible,
        nonpositive_gamma_circuit=gamma_circ,
        negative_sigma_circuit=sigma_circ,
        negative_sink_pair_path=pair_witness,
        gamma_bound=net.gamma_bar,
        sigma_bound=net.sigma_bar,
        c_max=c_max,
        negative_sigma_arcs=neg_sigma if c_max is not None else [],
        overflow_risk=overflow,
        messages=msgs,
    )


# -- dynamic modifications ---------------------------------------------------

MODIFICATION_KINDS = ("remove_nodes", "add_nodes", "remove_arcs", "add_arcs", "set_sources", "set_sinks")


@dataclass(frozen=True)
class Modification:
    """One structural change applied at slow-dynamics step ``at_step``.

    Payload by kind:
      remove_nodes / set_sources / set_sinks: ``{"nodes": [...]}``
      add_nodes: ``{"nodes": [...], "arcs": [arc, ...]}``
      remove_arcs: ``{"arcs": [[tail, head], ...]}``
      add_arcs: ``{"arcs": [arc, ...]}``
    where ``arc`` is ``[tail, head, gamma, sigma]`` or the JSON object form.
    """

    kind: str
    payload: Mapping[str, Any]
    at_step: int = 0

    def __post_init__(self) -> None:
        if self.kind not in MODIFICATION_KINDS:
            raise NetworkError(f"unknown modification kind {self.kind!r}")


def _arc_tuple(a: Any) -> Tuple:
    if isinstance(a, Mapping):
        return (a["tail"], a["head"], a["gamma"], a.get("sigma", 0))
    return tuple(a)


def apply_modification(net: Network, state: Any, mod: Modification) -> Tuple[Network, Any]:
    """Apply ``mod`` and carry the state over to the new network.

    ``state`` is a plain node->int dict or a :class:`~tokenflow.constrained.BucketedState`.
    Tokens buffered in removed nodes or in nodes that become sinks are
    discarded; added nodes start empty.  The returned state may be
    non-admissible and must be settled before further injections.
    """
    from tokenflow.constrained import BucketedState

    nodes = set(net.nodes)
    arcs = {(a.tail, a.head): a for a in net.arcs}
    sources = set(net.sources)
    sinks = set(net.sinks)
    p = mod.payload

    def known(ids: Iterable[Node]) -> List[Node]:
        ids = list(ids)
        unknown = [v for v in ids if v not in nodes]
        if unknown:
            raise NetworkError(f"{mod.kind}: unknown nodes {unknown}")
        return ids

    if mod.kind == "remove_nodes":
        gone = set(known(p["nodes"]))
        nodes -= gone
        arcs = {k: a for k, a in arcs.items() if a.tail not in gone and a.head not in gone}
        sources -= gone
        sinks -= gone
    elif mod.kind == "add_nodes":
        new = [v for v in p["nodes"]]
        clash = [v for v in new if v in nodes]
        if clash:
            raise NetworkError(f"add_nodes: nodes {clash} already present")
        nodes |= set(new)
        for raw in p.get("arcs", []):
            a = Arc(*_arc_tuple(raw))
            arcs[(a.tail, a.head)] = a
    elif mod.kind == "remove_arcs":
        for raw in p["arcs"]:
            key = (raw[0], raw[1]) if not isinstance(raw, Mapping) else (raw["tail"], raw["head"])
            if key not in arcs:
                raise NetworkError(f"remove_arcs: {key} is not an arc")
            del arcs[key]
    elif mod.kind == "add_arcs":
        for raw in p["arcs"]:
            a = Arc(*_arc_tuple(raw))
            known([a.tail, a.head])
            arcs[(a.tail, a.head)] = a
    elif mod.kind == "set_sources":
        sources = set(known(p["nodes"]))
    elif mod.kind == "set_sinks":
        sinks = set(known(p["nodes"]))

    new_net = Network.build(nodes, arcs.values(), sources, sinks, net.metadata)

    if isinstance(state, BucketedState):
        width = state.c_max + 1
        x = {}
        for v in new_net.nodes:
            if v in new_net.sinks or v not in state.x:
                x[v] = [0] * width
            else:
                x[v] = list(state.x[v])
        return new_net, BucketedState(x, state.c_max)
    new_state = {}
    for v in new_net.nodes:
        new_state[v] = 0 if v in new_net.sinks else state.get(v, 0)
    return new_net, new_state
