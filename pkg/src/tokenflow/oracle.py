"""Exact shortest-path ground truth.

Nothing here touches the token dynamics: distances come from plain
label-correcting relaxation so the simulated policy can be checked against
an independent computation.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from typing import Dict, Hashable, List, Optional, Tuple

from tokenflow.graph import Network

Node = Hashable
INF = math.inf


class NonPositiveCircuitError(RuntimeError):
    """Relaxation failed to settle: the network has a non-positive circuit."""


@dataclass
class DistanceMap:
    """Distance of every node to its closest sink.

    ``next_hop[i]`` is the smallest-id successor of ``i`` on some shortest
    outgoing path (``None`` for sinks and nodes that cannot reach a sink).
    """

    dist: Dict[Node, float]
    next_hop: Dict[Node, Optional[Node]]

    def as_state(self) -> Dict[Node, int]:
        """The maximal rest state; raises if some node cannot reach a sink."""
        if any(d == INF for d in self.dist.values()):
            raise ValueError("maximal rest state undefined: some node cannot reach a sink")
        return {v: int(d) for v, d in self.dist.items()}


def shortest_to_sinks(net: Network) -> DistanceMap:
    """Shortest distance from every node to its closest sink (sinks absorb, distance 0)."""
    dist: Dict[Node, float] = {v: INF for v in net.nodes}
    queue = deque()
    in_queue = set()
    for t in sorted(net.sinks):
        dist[t] = 0
        queue.append(t)
        in_queue.add(t)
    budget = max(1, len(net.nodes)) * max(1, len(net.arcs)) + len(net.nodes)
    relaxations = 0
    while queue:
        v = queue.popleft()
        in_queue.discard(v)
        dv = dist[v]
        for a in net.in_arcs[v]:
            u = a.tail
            if u in net.sinks:
                continue
            cand = a.gamma + dv
            if cand < dist[u]:
                relaxations += 1
                if relaxations > budget:
                    raise NonPositiveCircuitError("distance labels do not settle (non-positive circuit)")
                dist[u] = cand
                if u not in in_queue:
                    queue.append(u)
                    in_queue.add(u)
    next_hop: Dict[Node, Optional[Node]] = {}
    for v in net.nodes:
        next_hop[v] = None
        if v in net.sinks or dist[v] == INF:
            continue
        for a in net.out_arcs[v]:
            if dist[a.head] != INF and a.gamma + dist[a.head] == dist[v]:
                next_hop[v] = a.head
                break
    return DistanceMap(dist, next_hop)


def canonical_path(net: Network, dmap: DistanceMap, start: Node) -> Optional[List[Node]]:
    """Lexicographically smallest shortest outgoing path from ``start``."""
    if dmap.dist[start] == INF:
        return None
    path = [start]
    v = start
    while v not in net.sinks:
        v = dmap.next_hop[v]
        path.append(v)
    return path


def all_shortest_paths(net: Network, dmap: DistanceMap, start: Node, limit: int = 10_000) -> List[List[Node]]:
    """Every shortest outgoing path from ``start`` (for small networks)."""
    if dmap.dist[start] == INF:
        return []
    out: List[List[Node]] = []

    def rec(path: List[Node]) -> None:
        if len(out) >= limit:
            return
        v = path[-1]
        if v in net.sinks:
            out.append(list(path))
            return
        for a in net.out_arcs[v]:
            if dmap.dist[a.head] != INF and a.gamma + dmap.dist[a.head] == dmap.dist[v]:
                path.append(a.head)
                rec(path)
                path.pop()

    rec([start])
    return out


# -- constrained ground truth --------------------------------------------------


@dataclass(frozen=True)
class ConstrainedPath:
    length: int
    secondary_cost: int
    path: Tuple[Node, ...]


def constrained_distances(net: Network, c_max: int) -> Dict[Tuple[Node, int], float]:
    """Shortest distance to a sink from every (node, spent budget) pair.

    A move along (i, j) from spent budget c is allowed only when
    c + sigma_ij <= c_max.  Secondary costs must be non-negative.
    """
    if any(a.sigma < 0 for a in net.arcs):
        raise ValueError("negative secondary costs are not supported")
    dist: Dict[Tuple[Node, int], float] = {}
    for v in net.nodes:
        for c in range(c_max + 1):
            dist[(v, c)] = INF
    queue = deque()
    in_queue = set()
    for t in sorted(net.sinks):
        for c in range(c_max + 1):
            dist[(t, c)] = 0
            queue.append((t, c))
            in_queue.add((t, c))
    n_states = len(dist)
    budget = max(1, n_states) * max(1, len(net.arcs) * (c_max + 1)) + n_states
    relaxations = 0
    while queue:
        j, cj = queue.popleft()
        in_queue.discard((j, cj))
        dj = dist[(j, cj)]
        for a in net.in_arcs[j]:
            i = a.tail
            ci = cj - a.sigma
            if ci < 0 or i in net.sinks:
                continue
            cand = a.gamma + dj
            if cand < dist[(i, ci)]:
                relaxations += 1
                if relaxations > budget:
                    raise NonPositiveCircuitError("constrained labels do not settle")
                dist[(i, ci)] = cand
                if (i, ci) not in in_queue:
                    queue.append((i, ci))
                    in_queue.add((i, ci))
    return dist


def constrained_shortest(net: Network, start: Node, c_max: int) -> Optional[ConstrainedPath]:
    """Shortest feasible outgoing path from ``start`` with budget ``c_max``; ``None`` if infeasible."""
    dist = constrained_distances(net, c_max)
    d0 = dist[(start, 0)]
    if d0 == INF:
        return None
    path = [start]
    v, c = start, 0
    while v not in net.sinks:
        for a in net.out_arcs[v]:
            nc = c + a.sigma
            if nc <= c_max and dist[(a.head, nc)] != INF and a.gamma + dist[(a.head, nc)] == dist[(v, c)]:
                v, c = a.head, nc
                break
        else:  # pragma: no cover - labels are consistent by construction
            raise AssertionError("broken constrained labels")
        path.append(v)
    return ConstrainedPath(int(d0), c, tuple(path))


def all_constrained_shortest(net: Network, start: Node, c_max: int, limit: int = 10_000) -> List[ConstrainedPath]:
    """Every shortest feasible outgoing path from ``start`` (for small networks)."""
    dist = constrained_distances(net, c_max)
    if dist[(start, 0)] == INF:
        return []
    out: List[ConstrainedPath] = []
    total = int(dist[(start, 0)])

    def rec(path: List[Node], c: int) -> None:
        if len(out) >= limit:
            return
        v = path[-1]
        if v in net.sinks:
            out.append(ConstrainedPath(total, c, tuple(path)))
            return
        for a in net.out_arcs[v]:
            nc = c + a.sigma
            if nc <= c_max and dist[(a.head, nc)] != INF and a.gamma + dist[(a.head, nc)] == dist[(v, c)]:
                path.append(a.head)
                rec(path, nc)
                path.pop()

    rec([start], 0)
    return out


# -- circuit detectors ---------------------------------------------------------


def detect_nonpositive_circuit(net: Network, cost: str = "gamma", strict: bool = False) -> Optional[List[Node]]:
    """Find a circuit whose total ``cost`` is <= 0 (or < 0 with ``strict``).

    Returns the circuit as ``[v1, ..., vk, v1]`` starting at its smallest
    node, or ``None``.  The non-strict case scales every cost w to
    (n+1)*w - 1, which turns circuits of total <= 0 into negative ones.
    """
    n = len(net.nodes)
    if n == 0:
        return None
    idx = {v: k for k, v in enumerate(net.nodes)}
    edges = []
    for a in net.arcs:
        w = a.gamma if cost == "gamma" else a.sigma
        if not strict:
            w = (n + 1) * w - 1
        edges.append((idx[a.tail], idx[a.head], w))
    d = [0] * n
    pred = [-1] * n
    last = -1
    for _ in range(n):
        last = -1
        for t, h, w in edges:
            if d[t] + w < d[h]:
                d[h] = d[t] + w
                pred[h] = t
                last = h
        if last == -1:
            return None
    v = last
    for _ in range(n):
        v = pred[v]
    cycle = [v]
    u = pred[v]
    while u != v:
        cycle.append(u)
        u = pred[u]
    cycle.reverse()
    k = cycle.index(min(cycle, key=lambda i: net.nodes[i]))
    cycle = cycle[k:] + cycle[:k]
    nodes = [net.nodes[i] for i in cycle]
    return nodes + [nodes[0]]


def sink_pair_paths_nonnegative(net: Network) -> Tuple[bool, Optional[List[Node]]]:
    """Check that no path between two sinks has negative primary length.

    Assumes no non-positive circuits.  Returns ``(True, None)`` or
    ``(False, witness_path)``.
    """
    sinks = sorted(net.sinks)
    if len(sinks) < 2:
        return True, None
    n = len(net.nodes)
    for t in sinks:
        dist: Dict[Node, float] = {v: INF for v in net.nodes}
        pred: Dict[Node, Optional[Node]] = {v: None for v in net.nodes}
        dist[t] = 0
        for _ in range(max(0, n - 1)):
            changed = False
            for a in net.arcs:
                if dist[a.tail] + a.gamma < dist[a.head] and a.head != t:
                    dist[a.head] = dist[a.tail] + a.gamma
                    pred[a.head] = a.tail
                    changed = True
            if not changed:
                break
        for t2 in sinks:
            if t2 != t and dist[t2] < 0:
                path = [t2]
                while path[-1] != t:
                    path.append(pred[path[-1]])
                return False, path[::-1]
    return True, None
