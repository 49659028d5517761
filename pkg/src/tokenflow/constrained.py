"""Budget-constrained threshold policy.

Each node keeps one buffer per accumulated secondary cost ``c`` in
``0..c_max``.  A token carrying spent budget ``c`` at node i may cross
(i, j) only if ``c + sigma_ij <= c_max`` and the threshold rule holds between
buffer ``x_i^c`` and buffer ``x_j^(c + sigma_ij)``.  A token with no
budget-feasible out-arc falls asleep where it is.

The same dynamics run unchanged on the expanded network whose nodes are the
pairs ``(i, c)``; :func:`expand`, :func:`lift_state` and :func:`project_state`
convert between the two views.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Dict, Hashable, List, Optional, Tuple

from tokenflow.graph import Arc, Network, NetworkError, State
from tokenflow.policy import (
    ChoiceModel,
    StepResult,
    TokenOutcome,
    WalkLimitError,
    _DETERMINISTIC,
    settle,
)

Node = Hashable


@dataclass
class BucketedState:
    """Per-node token counts indexed by accumulated secondary cost."""

    x: Dict[Node, List[int]]
    c_max: int

    @classmethod
    def zeros(cls, net: Network, c_max: int) -> "BucketedState":
        if c_max < 0:
            raise NetworkError("c_max must be non-negative")
        return cls({v: [0] * (c_max + 1) for v in net.nodes}, c_max)

    def total(self) -> int:
        return sum(sum(b) for b in self.x.values())

    def copy(self) -> "BucketedState":
        return BucketedState({v: list(b) for v, b in self.x.items()}, self.c_max)

    def collapsed(self) -> Dict[Node, int]:
        """Sum over buckets per node."""
        return {v: sum(b) for v, b in self.x.items()}

    def nonzero(self) -> Dict[Tuple[Node, int], int]:
        return {(v, c): k for v, b in self.x.items() for c, k in enumerate(b) if k}


def bucketed_admissible(net: Network, bstate: BucketedState) -> Tuple[bool, List[Tuple[Arc, int]]]:
    """Admissibility x_i^c - x_j^(c+sigma) <= gamma for every arc and budget that fits.

    Arcs leaving a sink are skipped, as in the unconstrained check.
    """
    sinks = net.sinks
    bad = []
    for a in net.arcs:
        if a.tail in sinks:
            continue
        xi = bstate.x[a.tail]
        xj = bstate.x[a.head]
        for c in range(0, bstate.c_max - a.sigma + 1):
            vj = 0 if a.head in sinks else xj[c + a.sigma]
            if xi[c] - vj > a.gamma:
                bad.append((a, c))
    return not bad, bad


# -- expanded network ------------------------------------------------------------


@dataclass(frozen=True)
class ExpandedNetwork:
    """Unconstrained network on ``(node, budget)`` pairs equivalent to a constrained one."""

    network: Network
    base: Network
    c_max: int

    def provenance(self, node: Tuple[Node, int]) -> Tuple[Node, int]:
        return node

    def to_json_network(self) -> Network:
        """Copy with string node ids ``"i@c"`` for export."""
        label = {v: f"{v[0]}@{v[1]}" for v in self.network.nodes}
        return Network.build(
            label.values(),
            [(label[a.tail], label[a.head], a.gamma, 0) for a in self.network.arcs],
            [label[s] for s in self.network.sources],
            [label[t] for t in self.network.sinks],
            {"expanded_from": {"c_max": self.c_max}},
        )


def expand(net: Network, c_max: int, prune: bool = True) -> ExpandedNetwork:
    """Replicate ``net`` over budget steps 0..c_max.

    Arc (i, j) becomes ((i, c), (j, c + sigma_ij)) for every c with
    c + sigma_ij <= c_max; expanded arcs keep gamma and carry sigma 0.
    Sources are (s, 0), sinks every (t, c).  With ``prune``, nodes that no
    token injected at a source can reach are dropped (tokens stop at sinks).
    """
    if c_max < 0:
        raise NetworkError("c_max must be non-negative")
    if any(a.sigma < 0 for a in net.arcs):
        raise NetworkError("negative secondary costs are not supported")
    sinks = net.sinks
    if prune:
        keep = set()
        queue = deque()
        for s in sorted(net.sources):
            keep.add((s, 0))
            queue.append((s, 0))
        while queue:
            v, c = queue.popleft()
            if v in sinks:
                continue
            for a in net.out_arcs[v]:
                nc = c + a.sigma
                if nc <= c_max and (a.head, nc) not in keep:
                    keep.add((a.head, nc))
                    queue.append((a.head, nc))
        nodes = keep
    else:
        nodes = {(v, c) for v in net.nodes for c in range(c_max + 1)}
    arcs = []
    for a in net.arcs:
        for c in range(0, c_max - a.sigma + 1):
            t, h = (a.tail, c), (a.head, c + a.sigma)
            if t in nodes and h in nodes:
                arcs.append((t, h, a.gamma, 0))
    sources = [(s, 0) for s in net.sources if (s, 0) in nodes]
    sink_nodes = [v for v in nodes if v[0] in sinks]
    ex = Network.build(nodes, arcs, sources, sink_nodes, {"expanded_from": {"c_max": c_max}})
    return ExpandedNetwork(ex, net, c_max)


def lift_state(bstate: BucketedState, expanded: ExpandedNetwork) -> State:
    """Bucketed state -> state on the expanded network."""
    if bstate.c_max != expanded.c_max:
        raise NetworkError(f"c_max mismatch: state {bstate.c_max}, expansion {expanded.c_max}")
    kept = expanded.network.node_set
    out: State = {}
    for v, buckets in bstate.x.items():
        if len(buckets) != bstate.c_max + 1:
            raise NetworkError(f"node {v} has {len(buckets)} buckets, expected {bstate.c_max + 1}")
        for c, k in enumerate(buckets):
            if (v, c) in kept:
                out[(v, c)] = k
            elif k:
                raise NetworkError(f"bucket ({v}, {c}) holds {k} tokens but was pruned from the expansion")
    missing = [u for u in kept if u not in out]
    if missing:
        raise NetworkError(f"state lacks expanded nodes {sorted(missing)[:5]}")
    return out


def project_state(xe: State, expanded: ExpandedNetwork) -> BucketedState:
    """State on the expanded network -> bucketed state (pruned buckets read 0)."""
    width = expanded.c_max + 1
    x = {v: [0] * width for v in expanded.base.nodes}
    for (v, c), k in xe.items():
        if v not in x or not 0 <= c < width:
            raise NetworkError(f"expanded node {(v, c)} does not belong to the base network")
        x[v][c] = k
    return BucketedState(x, expanded.c_max)


# -- constrained walks ----------------------------------------------------------------


def _walk(
    net: Network,
    bstate: BucketedState,
    source: Node,
    choice: Optional[ChoiceModel],
    enhanced: bool,
) -> StepResult:
    if source not in net.node_set:
        raise NetworkError(f"unknown node {source}")
    if source in net.sinks:
        raise NetworkError(f"cannot inject at sink {source}")
    if source not in net.sources:
        raise NetworkError(f"node {source} is not a source")
    choice = choice or _DETERMINISTIC
    det = choice.is_deterministic
    scan = net.scan
    x = bstate.x
    c_max = bstate.c_max
    n_states = len(net.nodes) * (c_max + 1)
    max_generations = None
    v, c = source, 0
    walk = [v]
    steps = 0
    generations = 0
    virtual = 0
    while True:
        xv = x[v]
        occ = xv[c] + 1
        feasible = [e for e in scan[v] if c + e[2] <= c_max]
        if not feasible:
            xv[c] += 1
            return StepResult(TokenOutcome(walk, False, asleep=True, virtual_tokens=virtual, cost=c), (v, c))
        nxt = None
        if det:
            for e in feasible:
                if occ - (0 if e[3] else x[e[0]][c + e[2]]) > e[1]:
                    nxt = e
                    break
        else:
            cands = [e for e in feasible if occ - (0 if e[3] else x[e[0]][c + e[2]]) > e[1]]
            if cands:
                nxt = choice.pick(cands)
        if nxt is None:
            if not enhanced:
                xv[c] += 1
                return StepResult(TokenOutcome(walk, False, virtual_tokens=virtual, cost=c), (v, c))
            best = None
            best_gap = None
            for e in feasible:
                gap = e[1] + (0 if e[3] else x[e[0]][c + e[2]]) - xv[c]
                if best_gap is None or gap < best_gap:
                    best, best_gap = e, gap
            xv[c] += best_gap
            virtual += best_gap
            generations += 1
            if max_generations is None:
                gmax = max(1, max((abs(a.gamma) for a in net.arcs), default=1))
                max_generations = n_states * (n_states * gmax) + n_states
            if generations > max_generations:
                raise WalkLimitError(f"enhanced token from {source} keeps generating virtual tokens")
            nxt = best
        steps += 1
        if steps > n_states * (generations + 1):
            raise WalkLimitError(f"token from {source} exceeded {n_states} transitions: non-positive circuit traversed")
        v = nxt[0]
        c += nxt[2]
        walk.append(v)
        if nxt[3]:
            return StepResult(TokenOutcome(walk, True, virtual_tokens=virtual, cost=c), None)


def constrained_inject(
    net: Network, bstate: BucketedState, source: Node, choice: Optional[ChoiceModel] = None
) -> StepResult:
    """Inject a token with zero spent budget at ``source``; ``bstate`` is updated in place.

    ``delta`` is the ``(node, c)`` bucket incremented when the token stops or
    falls asleep.
    """
    return _walk(net, bstate, source, choice, enhanced=False)


def constrained_inject_enhanced(
    net: Network, bstate: BucketedState, source: Node, choice: Optional[ChoiceModel] = None
) -> StepResult:
    """Constrained injection with virtual-token top-up.

    The asleep test comes first: a token with no budget-feasible out-arc
    falls asleep and generates nothing.
    """
    return _walk(net, bstate, source, choice, enhanced=True)


def constrained_settle(
    net: Network,
    bstate: BucketedState,
    choice: Optional[ChoiceModel] = None,
) -> BucketedState:
    """Settle a non-admissible bucketed state through the (unpruned) expansion.

    Buckets are scanned by (node, c) ascending.  ``bstate`` is updated in
    place and returned.
    """
    ex = expand(net, bstate.c_max, prune=False)
    xe = lift_state(bstate, ex)
    settle(ex.network, xe, choice)
    bstate.x = project_state(xe, ex).x
    return bstate


def constrained_is_global_rest(
    net: Network,
    bstate: BucketedState,
    choice: Optional[ChoiceModel] = None,
    policy: str = "original",
) -> bool:
    """Probe every source once; same commit semantics as :func:`tokenflow.policy.is_global_rest`."""
    step = constrained_inject_enhanced if policy == "enhanced" else constrained_inject
    for s in sorted(net.sources):
        if step(net, bstate, s, choice).changed:
            return False
    return True
