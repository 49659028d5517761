"""Slow-dynamics experiment driver.

Time is the injection counter k.  Rest is certified by probing: the system is
taken to be at global rest once every scheduled source has received
``n_post`` injections in a row that left the state unchanged.  Those
injections are also the post-rest samples from which path metrics are read.
"""

from __future__ import annotations

import csv
import json
import logging
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, Hashable, List, Optional, Sequence, Tuple

from tokenflow.constrained import (
    BucketedState,
    bucketed_admissible,
    constrained_inject,
    constrained_inject_enhanced,
    constrained_settle,
)
from tokenflow.graph import (
    Modification,
    Network,
    ValidationReport,
    apply_modification,
    is_admissible,
    total_tokens,
    validate_assumptions,
    zero_state,
)
from tokenflow.policy import ChoiceModel, StepResult, TokenOutcome, inject, settle

log = logging.getLogger(__name__)

Node = Hashable


class SimulationRefused(ValueError):
    """The network fails the standing assumptions, so convergence is not guaranteed."""

    def __init__(self, report: ValidationReport, segment: int = 0):
        super().__init__("; ".join(report.messages) or "validation failed")
        self.report = report
        self.segment = segment


@dataclass
class SimConfig:
    """Everything that determines a run; identical configs give identical logs.

    ``schedule`` is ``"round_robin"``, ``"random"`` or ``"single:<id>"``.
    ``stop`` is ``"at_rest"``, ``"max_steps"`` (with ``steps``) or
    ``"rest_then_extra"`` (with ``n_post``).  ``n_post`` defaults to 1
    post-rest sample per source for deterministic choice and 100 for
    stochastic choice.
    """

    network: Network
    c_max: Optional[int] = None
    policy: str = "original"
    choice: str = "deterministic"
    seed: int = 0
    schedule: str = "round_robin"
    stop: str = "at_rest"
    steps: int = 0
    n_post: Optional[int] = None
    scenario: Sequence[Modification] = ()
    record_trace: bool = False
    initial_state: Any = None
    settle_first: bool = True
    max_injections: Optional[int] = None
    validate: bool = True

    def __post_init__(self) -> None:
        if self.policy not in ("original", "enhanced"):
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.choice not in ("deterministic", "stochastic"):
            raise ValueError(f"unknown choice model {self.choice!r}")
        if self.stop not in ("at_rest", "max_steps", "rest_then_extra"):
            raise ValueError(f"unknown stop mode {self.stop!r}")
        if self.c_max is not None and self.c_max < 0:
            raise ValueError("c_max must be non-negative")
        if not (self.schedule in ("round_robin", "random") or self.schedule.startswith("single:")):
            raise ValueError(f"unknown schedule {self.schedule!r}")

    @property
    def constrained(self) -> bool:
        return self.c_max is not None

    @property
    def samples_per_source(self) -> int:
        if self.n_post is not None:
            return max(1, self.n_post)
        return 1 if self.choice == "deterministic" else 100

    def describe(self) -> Dict[str, Any]:
        return {
            "mode": "constrained" if self.constrained else "unconstrained",
            "c_max": self.c_max,
            "policy": self.policy,
            "choice": ChoiceModel(self.choice, self.seed).describe(),
            "schedule": self.schedule,
            "stop": self.stop,
            "steps": self.steps,
            "n_post": self.samples_per_source,
        }


@dataclass
class StepRecord:
    k: int
    source: Node
    v: int
    exited: bool
    node: Node
    bucket: Optional[int] = None
    asleep: bool = False
    virtual_tokens: int = 0

    @property
    def delta_label(self) -> str:
        if self.exited:
            return f"exit:{self.node}"
        label = str(self.node) if self.bucket is None else f"{self.node}@{self.bucket}"
        if self.asleep:
            label = "asleep:" + label
        return label


@dataclass
class TraceEvent:
    k: int
    source: Node
    outcome: TokenOutcome
    events: List[Modification] = field(default_factory=list)


@dataclass
class PathSample:
    length: int
    cost: int
    arcs: int
    walk: Tuple[Node, ...]


@dataclass
class MetricsLog:
    """Time series and summary metrics of one run (or one dynamic segment)."""

    constrained: bool
    policy: str
    c_max: Optional[int]
    start_k: int
    initial_v: int
    v_series: List[int] = field(default_factory=list)
    records: List[StepRecord] = field(default_factory=list)
    rest_reached: bool = False
    t_ss: Optional[int] = None
    v_ss: Optional[int] = None
    l_ss: int = 0
    discarded: int = 0
    post_rest: Dict[Node, List[PathSample]] = field(default_factory=dict)
    arc_histogram: Counter = field(default_factory=Counter)
    final_state: Any = None
    trace: Optional[List[TraceEvent]] = None
    support: Tuple[Node, ...] = ()
    network: Optional[Network] = None

    @property
    def injections(self) -> int:
        return len(self.records)


@dataclass
class SummaryRow:
    source: Node
    L_ss: Optional[int]
    C_ss: Optional[int]
    E_ss: Optional[int]
    T_ss: Optional[int]
    V_ss: Optional[int]
    l_ss: int
    partial: bool

    def as_tuple(self) -> Tuple:
        return (self.L_ss, self.C_ss, self.E_ss, self.T_ss, self.V_ss, self.l_ss)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "source": self.source, "L_ss": self.L_ss, "C_ss": self.C_ss, "E_ss": self.E_ss,
            "T_ss": self.T_ss, "V_ss": self.V_ss, "l_ss": self.l_ss, "partial": self.partial,
        }


# -- the runner --------------------------------------------------------------------


class _Runner:
    """Owns the network, state and random streams of one simulation."""

    def __init__(self, config: SimConfig):
        self.config = config
        self.net = config.network
        self.choice = ChoiceModel(config.choice, config.seed)
        # schedule stream kept apart from the routing stream
        self.sched_rng = random.Random((config.seed * 0x9E3779B97F4A7C15 + 1) & 0xFFFFFFFFFFFFFFFF)
        self.rr_pos = 0
        self.k = 0
        if config.initial_state is not None:
            init = config.initial_state
            if config.constrained:
                if not isinstance(init, BucketedState):
                    raise TypeError("constrained runs need a BucketedState initial state")
                self.state = init.copy()
            else:
                self.state = {v: int(init.get(v, 0)) for v in self.net.nodes}
                for t in self.net.sinks:
                    self.state[t] = 0
        elif config.constrained:
            self.state = BucketedState.zeros(self.net, config.c_max)
        else:
            self.state = zero_state(self.net)

    # state helpers
    def total(self) -> int:
        if self.config.constrained:
            return self.state.total()
        return total_tokens(self.state)

    def admissible(self) -> bool:
        if self.config.constrained:
            return bucketed_admissible(self.net, self.state)[0]
        return is_admissible(self.net, self.state)[0]

    def settle(self) -> None:
        if self.admissible():
            return
        if self.config.constrained:
            constrained_settle(self.net, self.state, self.choice)
        else:
            settle(self.net, self.state, self.choice)

    def step(self, source: Node) -> StepResult:
        cfg = self.config
        if cfg.constrained:
            fn = constrained_inject_enhanced if cfg.policy == "enhanced" else constrained_inject
            return fn(self.net, self.state, source, self.choice)
        return inject(self.net, self.state, source, self.choice, cfg.policy)

    def support(self) -> Tuple[Node, ...]:
        sched = self.config.schedule
        if sched.startswith("single:"):
            raw = sched.split(":", 1)[1]
            for s in self.net.sources:
                if str(s) == raw:
                    return (s,)
            raise ValueError(f"schedule source {raw} is not a source")
        return tuple(sorted(self.net.sources))

    def next_source(self, support: Tuple[Node, ...]) -> Node:
        if self.config.schedule == "random":
            return support[self.sched_rng.randrange(len(support))] if len(support) > 1 else support[0]
        s = support[self.rr_pos % len(support)]
        self.rr_pos += 1
        return s

    def check(self) -> None:
        if self.config.validate:
            report = validate_assumptions(self.net, self.config.c_max)
            if not report.ok:
                raise SimulationRefused(report)

    def injection_cap(self, support: Tuple[Node, ...]) -> int:
        if self.config.max_injections is not None:
            return self.config.max_injections
        n = len(self.net.nodes) * (1 if self.config.c_max is None else self.config.c_max + 1)
        gmax = max(1, self.net.gamma_bar)
        changes = max(0, gmax * n * (n - 1) // 2 - self.total()) + 1
        per_change = len(support) * self.config.samples_per_source + 1
        if self.config.schedule == "random":
            per_change *= 4 * len(support) + 4
        return changes * per_change

    def path_sample(self, out: TokenOutcome) -> PathSample:
        amap = self.net.arc_map
        length = sum(amap[(t, h)].gamma for t, h in zip(out.walk, out.walk[1:]))
        return PathSample(length, out.cost, len(out.walk) - 1, tuple(out.walk))

    def segment(
        self,
        stop: str,
        steps: int = 0,
        events: Optional[Dict[int, List[Modification]]] = None,
        settle_first: bool = True,
    ) -> MetricsLog:
        """Inject until the stop condition; events (keyed by k) apply before the injection at k+1."""
        cfg = self.config
        events = dict(events or {})
        if settle_first:
            self.settle()
        support = self.support()
        need = cfg.samples_per_source
        cap = self.injection_cap(support) if stop != "max_steps" else steps
        mlog = MetricsLog(
            constrained=cfg.constrained, policy=cfg.policy, c_max=cfg.c_max,
            start_k=self.k, initial_v=self.total(), support=support,
        )
        mlog.v_series.append(mlog.initial_v)
        if cfg.record_trace:
            mlog.trace = []
        last_change = self.k
        lost_by_change = 0
        samples: Dict[Node, List[PathSample]] = {s: [] for s in support}
        hist: Counter = Counter()
        start = self.k
        pending_events: List[Modification] = []
        v = mlog.initial_v

        def at_rest() -> bool:
            return all(len(samples[s]) >= need for s in support)

        while True:
            due = [k for k in events if k <= self.k]
            if due:
                for k in sorted(due):
                    for mod in events.pop(k):
                        before = self.total()
                        self.net, self.state = apply_modification(self.net, self.state, mod)
                        mlog.discarded += before - self.total()
                        pending_events.append(mod)
                if cfg.validate:
                    self.check()
                self.settle()
                v = self.total()
                support = self.support()
                mlog.support = support
                samples = {s: [] for s in support}
                hist = Counter()
                last_change = self.k
            if stop == "max_steps":
                if self.k - start >= steps:
                    break
            else:
                if at_rest() and not events:
                    break
                if self.k - start >= cap:
                    log.warning("no global rest after %d injections", self.k - start)
                    break
            source = self.next_source(support)
            res = self.step(source)
            self.k += 1
            out = res.outcome
            if res.delta is None:
                node, bucket = out.destination, None
            elif isinstance(res.delta, tuple) and cfg.constrained:
                node, bucket = res.delta
            else:
                node, bucket = res.delta, None
            v += out.virtual_tokens + (res.delta is not None)
            mlog.v_series.append(v)
            mlog.records.append(
                StepRecord(self.k, source, v, out.exited, node, bucket, out.asleep, out.virtual_tokens)
            )
            if mlog.trace is not None:
                mlog.trace.append(TraceEvent(self.k, source, out, pending_events))
            pending_events = []
            if out.lost:
                lost_by_change += 1
            if res.changed:
                last_change = self.k
                mlog.l_ss = lost_by_change
                samples = {s: [] for s in support}
                hist = Counter()
            else:
                samples[source].append(self.path_sample(out))
                hist.update(zip(out.walk, out.walk[1:]))
        mlog.rest_reached = at_rest() and not events
        mlog.t_ss = last_change
        mlog.v_ss = self.total()
        mlog.l_ss = lost_by_change
        mlog.post_rest = samples
        mlog.arc_histogram = hist
        mlog.final_state = self.state.copy() if cfg.constrained else dict(self.state)
        mlog.network = self.net
        return mlog


def _events_by_step(scenario: Sequence[Modification]) -> Dict[int, List[Modification]]:
    out: Dict[int, List[Modification]] = {}
    for mod in scenario:
        out.setdefault(int(mod.at_step), []).append(mod)
    return out


def run(config: SimConfig) -> MetricsLog:
    """Run one simulation.  Scenario events fire exactly at their step counter."""
    runner = _Runner(config)
    if config.stop != "max_steps":
        runner.check()
    stop = "max_steps" if config.stop == "max_steps" else "at_rest"
    return runner.segment(stop, config.steps, _events_by_step(config.scenario), config.settle_first)


@dataclass
class DynamicLog:
    segments: List[MetricsLog]
    refused: Optional[SimulationRefused] = None


def run_dynamic(config: SimConfig) -> DynamicLog:
    """Run to rest, then apply each group of scenario events and run to rest again.

    Events sharing an ``at_step`` form one group; the step value orders the
    groups but segments always run until rest, however far apart the steps.
    A group that leaves the network failing validation ends the run with
    ``refused`` set.
    """
    runner = _Runner(config)
    runner.check()
    segments = [runner.segment("at_rest", settle_first=config.settle_first)]
    for _, mods in sorted(_events_by_step(config.scenario).items()):
        before = runner.total()
        for mod in mods:
            runner.net, runner.state = apply_modification(runner.net, runner.state, mod)
        discarded = before - runner.total()
        try:
            runner.check()
        except SimulationRefused as exc:
            exc.segment = len(segments)
            return DynamicLog(segments, exc)
        seg = runner.segment("at_rest")
        seg.discarded += discarded
        segments.append(seg)
    return DynamicLog(segments)


def summarize(mlog: MetricsLog) -> List[SummaryRow]:
    """One row of steady-state metrics per scheduled source."""
    rows = []
    for s in mlog.support:
        samp = mlog.post_rest.get(s) or []
        first = samp[0] if samp else None
        rows.append(
            SummaryRow(
                source=s,
                L_ss=first.length if first else None,
                C_ss=first.cost if first else None,
                E_ss=first.arcs if first else None,
                T_ss=mlog.t_ss if mlog.rest_reached else None,
                V_ss=mlog.v_ss if mlog.rest_reached else None,
                l_ss=mlog.l_ss,
                partial=not mlog.rest_reached,
            )
        )
    return rows


# -- file outputs ------------------------------------------------------------------


def write_metrics_csv(mlog: MetricsLog, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["k", "V", "injected_source", "delta_node_or_exit"])
        w.writerow([mlog.start_k, mlog.initial_v, "", ""])
        for r in mlog.records:
            w.writerow([r.k, r.v, r.source, r.delta_label])


def write_arc_histogram_csv(mlog: MetricsLog, path: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["tail", "head", "count"])
        for (t, h), cnt in sorted(mlog.arc_histogram.items()):
            w.writerow([t, h, cnt])


def state_to_jsonable(state: Any) -> Dict[str, Any]:
    if isinstance(state, BucketedState):
        return {"c_max": state.c_max, "x": {str(v): list(b) for v, b in sorted(state.x.items())}}
    return {"x": {str(v): int(k) for v, k in sorted(state.items())}}


def summary_dict(mlog: MetricsLog, config: Optional[SimConfig] = None) -> Dict[str, Any]:
    d: Dict[str, Any] = {
        "config": config.describe() if config else None,
        "rest_reached": mlog.rest_reached,
        "start_k": mlog.start_k,
        "injections": mlog.injections,
        "initial_V": mlog.initial_v,
        "T_ss": mlog.t_ss,
        "V_ss": mlog.v_ss,
        "l_ss": mlog.l_ss,
        "discarded": mlog.discarded,
        "rows": [r.to_dict() for r in summarize(mlog)],
        "final_state": state_to_jsonable(mlog.final_state),
        "arc_histogram": [[t, h, c] for (t, h), c in sorted(mlog.arc_histogram.items())],
    }
    if mlog.network is not None:
        d["network_metadata"] = mlog.network.metadata
    return d


def write_summary_json(mlog: MetricsLog, path: str, config: Optional[SimConfig] = None) -> None:
    with open(path, "w") as fh:
        json.dump(summary_dict(mlog, config), fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def write_trace_jsonl(mlog: MetricsLog, path: str) -> None:
    with open(path, "w") as fh:
        for ev in mlog.trace or []:
            fh.write(
                json.dumps(
                    {
                        "k": ev.k,
                        "source": ev.source,
                        "walk": list(ev.outcome.walk),
                        "exited": ev.outcome.exited,
                        "asleep": ev.outcome.asleep,
                        "virtual_tokens": ev.outcome.virtual_tokens,
                        "cost": ev.outcome.cost,
                        "events": [m.kind for m in ev.events],
                    },
                    sort_keys=True,
                    default=str,
                )
                + "\n"
            )
