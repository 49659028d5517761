"""Threshold policy for the unconstrained system.

A token at node i with occupancy ``occ`` (the buffer count of i, plus one
if the token has just arrived) may cross arc (i, j) only when
``occ - x_j > gamma_ij``.  It keeps walking while some arc is permitted,
leaves the network on entering a sink and otherwise stops, incrementing
the buffer where it stops.
"""

from __future__ import annotations

import heapq
import random
from dataclasses import dataclass
from typing import Hashable, List, Optional, Sequence, Tuple

from tokenflow.graph import Arc, Network, NetworkError, State

Node = Hashable

RNG_ALGORITHM = "python-random/MT19937/randrange-v1"


class WalkLimitError(RuntimeError):
    """A walk or settling run exceeded its diagnostic bound.

    On networks satisfying the standing assumptions this never happens; it
    signals a non-positive circuit or a bug.
    """


class ChoiceModel:
    """Which permitted arc a token takes when several are open.

    ``deterministic`` takes the first permitted arc in scan order (ascending
    head id).  ``stochastic`` draws uniformly with ``random.Random(seed)``;
    a draw is consumed only when two or more arcs are permitted, so two
    engines making the same decisions stay on the same stream.
    """

    __slots__ = ("mode", "seed", "_rng")

    def __init__(self, mode: str = "deterministic", seed: int = 0):
        if mode not in ("deterministic", "stochastic"):
            raise ValueError(f"unknown choice mode {mode!r}")
        self.mode = mode
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._rng = random.Random(self.seed) if mode == "stochastic" else None

    @classmethod
    def deterministic(cls) -> "ChoiceModel":
        return cls("deterministic")

    @classmethod
    def stochastic(cls, seed: int) -> "ChoiceModel":
        return cls("stochastic", seed)

    @property
    def is_deterministic(self) -> bool:
        return self._rng is None

    def pick(self, candidates: Sequence):
        if self._rng is None or len(candidates) == 1:
            return candidates[0]
        return candidates[self._rng.randrange(len(candidates))]

    def fresh(self) -> "ChoiceModel":
        """Same model, stream rewound to the seed."""
        return ChoiceModel(self.mode, self.seed)

    def describe(self) -> dict:
        d = {"mode": self.mode}
        if self._rng is not None:
            d.update(seed=self.seed, algorithm=RNG_ALGORITHM)
        return d

    def __repr__(self) -> str:
        return f"ChoiceModel({self.mode!r}, seed={self.seed})"


@dataclass
class TokenOutcome:
    """Record of one token walk.

    ``walk`` starts at the node the token started from.  When ``exited`` the
    last node is the sink it left through; otherwise it is where the token
    stopped (``asleep`` marks a constrained token that ran out of budget).
    ``cost`` is the secondary cost accumulated along the walk.
    """

    walk: List[Node]
    exited: bool
    asleep: bool = False
    virtual_tokens: int = 0
    cost: int = 0

    @property
    def destination(self) -> Node:
        return self.walk[-1]

    @property
    def elementary_transitions(self) -> int:
        return len(self.walk) - 1

    @property
    def lost(self) -> bool:
        return not self.exited


@dataclass
class StepResult:
    """Outcome of one injection; ``delta`` is the buffer incremented, ``None`` if none."""

    outcome: TokenOutcome
    delta: Optional[Hashable]

    @property
    def changed(self) -> bool:
        return self.delta is not None or self.outcome.virtual_tokens > 0


_DETERMINISTIC = ChoiceModel()


def permitted_moves(net: Network, state: State, node: Node, occupancy: int) -> List[Arc]:
    """Out-arcs of ``node`` a token may take at the given occupancy, in scan order."""
    if node not in net.node_set:
        raise NetworkError(f"unknown node {node}")
    sinks = net.sinks
    return [
        a
        for a in net.out_arcs[node]
        if occupancy - (0 if a.head in sinks else state[a.head]) > a.gamma
    ]


def _check_start(net: Network, start: Node) -> None:
    if start not in net.node_set:
        raise NetworkError(f"unknown node {start}")
    if start in net.sinks:
        raise NetworkError(f"node {start} is a sink")


def run_token(
    net: Network,
    state: State,
    start: Node,
    choice: Optional[ChoiceModel] = None,
    arriving: bool = True,
) -> TokenOutcome:
    """Walk one token from ``start`` until it stops or exits; ``state`` is updated in place.

    ``arriving`` tokens (injected ones) see occupancy ``x_start + 1``; a
    resident token (settling) sees ``x_start`` and, if it moves, leaves
    ``start`` one token lighter.
    """
    _check_start(net, start)
    choice = choice or _DETERMINISTIC
    det = choice.is_deterministic
    scan = net.scan
    limit = len(net.nodes)
    v = start
    walk = [v]
    occ = state[v] + 1 if arriving else state[v]
    cost = 0
    steps = 0
    while True:
        nxt = None
        if det:
            for h, g, s, is_sink in scan[v]:
                if occ - (0 if is_sink else state[h]) > g:
                    nxt = (h, g, s, is_sink)
                    break
        else:
            cands = [e for e in scan[v] if occ - (0 if e[3] else state[e[0]]) > e[1]]
            if cands:
                nxt = choice.pick(cands)
        if nxt is None:
            break
        if steps == 0 and not arriving:
            state[v] -= 1
        steps += 1
        if steps > limit:
            raise WalkLimitError(f"token from {start} exceeded {limit} transitions: non-positive circuit traversed")
        v = nxt[0]
        cost += nxt[2]
        walk.append(v)
        if nxt[3]:
            return TokenOutcome(walk, True, cost=cost)
        occ = state[v] + 1
    if arriving or steps:
        state[v] += 1
    return TokenOutcome(walk, False, cost=cost)


def run_token_enhanced(
    net: Network,
    state: State,
    start: Node,
    choice: Optional[ChoiceModel] = None,
) -> TokenOutcome:
    """Injected-token walk that tops up blocked buffers with virtual tokens.

    Where no out-arc is permitted, the buffer of the current node i is raised
    to ``min_j(x_j + gamma_ij)`` (first minimiser in scan order) and the token
    crosses to that minimiser.  Nodes without out-arcs still stop the token.
    """
    _check_start(net, start)
    choice = choice or _DETERMINISTIC
    det = choice.is_deterministic
    scan = net.scan
    n = len(net.nodes)
    max_generations = None
    v = start
    walk = [v]
    occ = state[v] + 1
    cost = 0
    steps = 0
    generations = 0
    virtual = 0
    while True:
        arcs = scan[v]
        if not arcs:
            break
        nxt = None
        if det:
            for e in arcs:
                if occ - (0 if e[3] else state[e[0]]) > e[1]:
                    nxt = e
                    break
        else:
            cands = [e for e in arcs if occ - (0 if e[3] else state[e[0]]) > e[1]]
            if cands:
                nxt = choice.pick(cands)
        if nxt is None:
            xv = state[v]
            best = None
            best_gap = None
            for e in arcs:
                gap = e[1] + (0 if e[3] else state[e[0]]) - xv
                if best_gap is None or gap < best_gap:
                    best, best_gap = e, gap
            state[v] = xv + best_gap
            virtual += best_gap
            generations += 1
            if max_generations is None:
                gmax = max(1, max((abs(a.gamma) for a in net.arcs), default=1))
                low = min(0, min(state.values(), default=0))
                max_generations = n * (n * gmax - low) + n
            if generations > max_generations:
                raise WalkLimitError(f"enhanced token from {start} keeps generating virtual tokens")
            nxt = best
        steps += 1
        if steps > n * (generations + 1):
            raise WalkLimitError(f"enhanced token from {start} cycles without generating tokens")
        v = nxt[0]
        cost += nxt[2]
        walk.append(v)
        if nxt[3]:
            return TokenOutcome(walk, True, virtual_tokens=virtual, cost=cost)
        occ = state[v] + 1
    state[v] += 1
    return TokenOutcome(walk, False, virtual_tokens=virtual, cost=cost)


def inject(
    net: Network,
    state: State,
    source: Node,
    choice: Optional[ChoiceModel] = None,
    policy: str = "original",
) -> StepResult:
    """Inject one token at ``source``; returns the walk and the buffer it incremented."""
    if source not in net.node_set:
        raise NetworkError(f"unknown node {source}")
    if source in net.sinks:
        raise NetworkError(f"cannot inject at sink {source}")
    if source not in net.sources:
        raise NetworkError(f"node {source} is not a source")
    if policy == "original":
        out = run_token(net, state, source, choice, arriving=True)
    elif policy == "enhanced":
        out = run_token_enhanced(net, state, source, choice)
    else:
        raise ValueError(f"unknown policy {policy!r}")
    return StepResult(out, None if out.exited else out.destination)


def _above_threshold(net: Network, state: State, v: Node) -> bool:
    xv = state[v]
    for h, g, _s, is_sink in net.scan[v]:
        if xv - (0 if is_sink else state[h]) > g:
            return True
    return False


def settle(
    net: Network,
    state: State,
    choice: Optional[ChoiceModel] = None,
    max_walks: Optional[int] = None,
) -> Tuple[State, List[TokenOutcome]]:
    """Move resident above-threshold tokens until the state is admissible.

    Always the lowest-id node holding an above-threshold token moves next,
    and its walk runs to completion before the next scan.  ``state`` is
    updated in place and also returned, with the list of walks performed.
    """
    choice = choice or _DETERMINISTIC
    sinks = net.sinks
    if max_walks is None:
        n = len(net.nodes)
        gmax = max((abs(a.gamma) for a in net.arcs), default=0)
        violation = 0
        for a in net.arcs:
            xi = 0 if a.tail in sinks else state[a.tail]
            xj = 0 if a.head in sinks else state[a.head]
            violation += max(0, xi - xj - a.gamma)
        spread = sum(abs(state[v]) for v in net.nodes)
        max_walks = n * (violation + n * gmax + spread) + n
    heap = [v for v in net.nodes if v not in sinks]
    heapq.heapify(heap)
    queued = set(heap)
    moves: List[TokenOutcome] = []
    while heap:
        v = heapq.heappop(heap)
        queued.discard(v)
        if not _above_threshold(net, state, v):
            continue
        out = run_token(net, state, v, choice, arriving=False)
        moves.append(out)
        if len(moves) > max_walks:
            raise WalkLimitError(f"settling exceeded {max_walks} walks")
        touched = [v]
        touched.extend(a.tail for a in net.in_arcs[v])
        if not out.exited:
            touched.append(out.destination)
        for u in touched:
            if u not in queued and u not in sinks:
                queued.add(u)
                heapq.heappush(heap, u)
    return state, moves


def is_global_rest(
    net: Network,
    state: State,
    choice: Optional[ChoiceModel] = None,
    policy: str = "original",
) -> bool:
    """Probe every source in ascending order with a real injection.

    Returns ``True`` when every probe left the state unchanged.  The first
    probe that changes the state is kept (it is a legitimate injection) and
    ``False`` is returned.
    """
    for s in sorted(net.sources):
        if inject(net, state, s, choice, policy).changed:
            return False
    return True
