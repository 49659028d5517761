"""Reproducible test networks.

All generators are pure functions of their arguments (and seed) and emit a
:class:`~tokenflow.graph.Network` whose ``metadata`` records how it was made.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, FrozenSet, Iterable, List, Sequence, Tuple, Union

from tokenflow.graph import Network, NetworkError

Pixel = Tuple[int, int]
Rational = Union[int, str, Fraction]


def fig2_network() -> Network:
    """The five-node example network: source 1, sink 5.

    Shortest path 1-2-3-4-5 has length 3 and secondary cost 3; with a
    budget of 2 the best feasible path is 1-2-4-5 (length 4, cost 2).
    """
    arcs = [
        (1, 2, 1, 1),
        (2, 3, 1, 1),
        (2, 4, 3, 1),
        (3, 4, 1, 1),
        (4, 5, 0, 0),
    ]
    return Network.build(range(1, 6), arcs, [1], [5], {"generator": "fig2"})


# -- altitude grids ------------------------------------------------------------------


@dataclass
class AltitudeMap:
    """Integer altitude raster; pixel (x, y) is column x, row y."""

    width: int
    height: int
    h: List[List[int]]  # h[y][x]
    obstacles: FrozenSet[Pixel] = frozenset()
    sources: Tuple[Pixel, ...] = ()
    sinks: Tuple[Pixel, ...] = ()

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise NetworkError("map dimensions must be positive")
        if len(self.h) != self.height or any(len(row) != self.width for row in self.h):
            raise NetworkError("altitude raster does not match the map dimensions")
        self.obstacles = frozenset(self.obstacles)
        for p in tuple(self.sources) + tuple(self.sinks):
            if not (0 <= p[0] < self.width and 0 <= p[1] < self.height):
                raise NetworkError(f"pixel {p} lies outside the map")
            if p in self.obstacles:
                raise NetworkError(f"pixel {p} is an obstacle")

    def node_id(self, p: Pixel) -> int:
        return p[1] * self.width + p[0] + 1


def pixel_of(node: int, width: int) -> Pixel:
    """Inverse of :meth:`AltitudeMap.node_id`."""
    return ((node - 1) % width, (node - 1) // width)


def _ceil(q: Fraction) -> int:
    return -((-q.numerator) // q.denominator)


def arc_cost(dh: int, h0: int, m_minus: Fraction, m_plus: Fraction) -> int:
    """Cost of moving across an altitude change ``dh`` (exact rational ceil)."""
    slope = m_minus if dh <= h0 else m_plus
    return _ceil(slope * (dh - h0))


NEIGHBOURS = [(dx, dy) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dx, dy) != (0, 0)]


def grid_from_altitude(
    amap: AltitudeMap,
    h0: int = -30,
    m_minus: Rational = Fraction(2, 5),
    m_plus: Rational = Fraction(9, 10),
) -> Network:
    """8-neighbourhood grid network with altitude-driven costs and unit secondary costs."""
    m_minus = Fraction(m_minus)
    m_plus = Fraction(m_plus)
    if not h0 < 0:
        raise NetworkError("h0 must be negative")
    if not 0 < m_minus < m_plus:
        raise NetworkError("slopes must satisfy 0 < m_minus < m_plus")
    if not amap.sources or not amap.sinks:
        raise NetworkError("altitude map needs at least one source and one sink")
    nodes = []
    arcs = []
    for y in range(amap.height):
        for x in range(amap.width):
            if (x, y) in amap.obstacles:
                continue
            nid = amap.node_id((x, y))
            nodes.append(nid)
            for dx, dy in NEIGHBOURS:
                q = (x + dx, y + dy)
                if not (0 <= q[0] < amap.width and 0 <= q[1] < amap.height) or q in amap.obstacles:
                    continue
                dh = amap.h[q[1]][q[0]] - amap.h[y][x]
                arcs.append((nid, amap.node_id(q), arc_cost(dh, h0, m_minus, m_plus), 1))
    meta = {
        "generator": "grid",
        "grid": {"width": amap.width, "height": amap.height, "id_rule": "y*width+x+1"},
        "params": {"h0": h0, "m_minus": str(m_minus), "m_plus": str(m_plus)},
    }
    return Network.build(
        nodes, arcs, [amap.node_id(p) for p in amap.sources], [amap.node_id(p) for p in amap.sinks], meta
    )


def hills_altitude(
    width: int,
    height: int,
    n_hills: int,
    amplitude: int,
    spread: float,
    seed: int,
) -> List[List[int]]:
    """Smooth random terrain: a sum of Gaussian bumps, rounded to integers."""
    rng = random.Random(seed)
    bumps = []
    for _ in range(n_hills):
        cx = rng.uniform(0, width - 1)
        cy = rng.uniform(0, height - 1)
        amp = rng.uniform(0.3, 1.0) * amplitude * rng.choice((1, 1, -1))
        bumps.append((cx, cy, amp))
    h = []
    for y in range(height):
        row = []
        for x in range(width):
            z = sum(a * math.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * spread**2)) for cx, cy, a in bumps)
            row.append(int(round(z)))
        h.append(row)
    return h


def read_pgm(path: str) -> List[List[int]]:
    """Read an ASCII (P2) or binary (P5) PGM raster as integer altitudes."""
    with open(path, "rb") as fh:
        data = fh.read()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise NetworkError(f"{path}: not a PGM file")
    tokens: List[bytes] = []
    pos = 2
    while len(tokens) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    width, height, maxval = (int(t) for t in tokens)
    if magic == b"P2":
        body = [ln.split(b"#", 1)[0] for ln in data[pos:].splitlines()]
        values = [int(t) for ln in body for t in ln.split()]
    else:
        pos += 1
        size = 2 if maxval > 255 else 1
        raw = data[pos : pos + width * height * size]
        values = [int.from_bytes(raw[i : i + size], "big") for i in range(0, len(raw), size)]
    if len(values) < width * height:
        raise NetworkError(f"{path}: expected {width * height} samples, found {len(values)}")
    return [values[y * width : (y + 1) * width] for y in range(height)]


def write_pgm(path: str, h: Sequence[Sequence[int]]) -> None:
    """Write an ASCII PGM; values are shifted to be non-negative (offset recorded in a comment)."""
    lo = min(min(r) for r in h)
    offset = -lo if lo < 0 else 0
    hi = max(max(r) for r in h) + offset
    with open(path, "w") as fh:
        fh.write(f"P2\n# offset {offset}\n{len(h[0])} {len(h)}\n{max(1, hi)}\n")
        for row in h:
            fh.write(" ".join(str(v + offset) for v in row) + "\n")


# -- small-world networks -----------------------------------------------------------


def small_world(
    n: int,
    delta: int,
    beta: float,
    gamma_max: int,
    sigma_max: int,
    seed: int,
    max_tries: int = 100,
) -> Network:
    """Single-source single-sink Watts-Strogatz network with both arc directions.

    A ring lattice links each node to its ``delta/2`` successors; each of
    those links is rewired with probability ``beta`` to a uniform random
    node.  Every link yields both directed arcs, so there are ``n*delta``
    arcs and the mean out-degree is ``delta``.  Costs are uniform on
    ``1..gamma_max`` and ``1..sigma_max``, drawn independently per arc.
    Rewiring is redrawn (same stream) until the graph is connected.
    """
    if n < 2:
        raise NetworkError("need at least two nodes")
    if delta < 2 or delta % 2 or delta >= n:
        raise NetworkError("delta must be even, at least 2 and below n")
    if not 0 <= beta <= 1:
        raise NetworkError("beta must lie in [0, 1]")
    if gamma_max < 1 or sigma_max < 1:
        raise NetworkError("maximum costs must be positive")
    rng = random.Random(seed)
    nodes = list(range(1, n + 1))
    half = delta // 2
    for attempt in range(max_tries):
        edges = set()
        for i in range(n):
            for d in range(1, half + 1):
                edges.add((i, (i + d) % n))
        for i in range(n):
            for d in range(1, half + 1):
                e = (i, (i + d) % n)
                if rng.random() < beta:
                    choices = [
                        w for w in range(n)
                        if w != i and (i, w) not in edges and (w, i) not in edges
                    ]
                    if choices:
                        edges.discard(e)
                        edges.add((i, rng.choice(choices)))
        if _connected(n, edges):
            break
    else:
        raise NetworkError(f"no connected rewiring found in {max_tries} tries")
    arcs = []
    for u, w in sorted(edges):
        for t, h in ((u, w), (w, u)):
            arcs.append((t + 1, h + 1, rng.randint(1, gamma_max), rng.randint(1, sigma_max)))
    source = rng.choice(nodes)
    sink = rng.choice([v for v in nodes if v != source])
    meta = {
        "generator": "small_world",
        "params": {
            "n": n, "delta": delta, "beta": beta, "gamma_max": gamma_max,
            "sigma_max": sigma_max, "seed": seed,
        },
        "arc_count_convention": "n*delta directed arcs including both directions of every link",
        "cost_distribution": "uniform integers on 1..gamma_max and 1..sigma_max, per arc",
        "placement": "source then sink drawn from the seeded stream after the costs",
        "rewiring_attempts": attempt + 1,
    }
    return Network.build(nodes, arcs, [source], [sink], meta)


def _connected(n: int, edges: Iterable[Tuple[int, int]]) -> bool:
    adj: Dict[int, List[int]] = {i: [] for i in range(n)}
    for u, w in edges:
        adj[u].append(w)
        adj[w].append(u)
    seen = {0}
    stack = [0]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                stack.append(w)
    return len(seen) == n
