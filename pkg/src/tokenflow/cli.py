"""Command-line interface.

Exit codes: 0 success, 2 bad input or failed validation, 3 no rest reached,
4 policy/oracle mismatch.  Diagnostics go to stderr; stdout carries JSON
only when ``--json`` is given (``generate`` without ``--out`` prints the
network document).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from typing import Any, Dict, List, Optional, Sequence, Tuple

from tokenflow import generators, io
from tokenflow.constrained import BucketedState
from tokenflow.graph import Network, NetworkError, validate_assumptions
from tokenflow.oracle import (
    NonPositiveCircuitError,
    all_constrained_shortest,
    all_shortest_paths,
    canonical_path,
    constrained_shortest,
    shortest_to_sinks,
)
from tokenflow.policy import ChoiceModel, WalkLimitError, inject
from tokenflow.constrained import constrained_inject
from tokenflow.simulator import (
    MetricsLog,
    SimConfig,
    SimulationRefused,
    run,
    summarize,
    summary_dict,
    write_metrics_csv,
    write_summary_json,
    write_trace_jsonl,
)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NO_REST = 3
EXIT_MISMATCH = 4

log = logging.getLogger("tokenflow")


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"tokenflow: {msg}", file=sys.stderr)


def _emit(obj: Any) -> None:
    json.dump(obj, sys.stdout, indent=2, sort_keys=True, default=str)
    sys.stdout.write("\n")


def parse_rational(text: str) -> Fraction:
    """Exact ``p/q`` or integer; decimals are refused so costs stay bit-exact."""
    text = text.strip()
    if "." in text or "e" in text.lower():
        raise argparse.ArgumentTypeError(f"{text!r}: give rationals as p/q, not decimals")
    try:
        q = Fraction(text)
    except (ValueError, ZeroDivisionError) as exc:
        raise argparse.ArgumentTypeError(f"{text!r} is not a rational p/q") from exc
    return q


def parse_pixel(text: str) -> Tuple[int, int]:
    try:
        x, y = (int(t) for t in text.split(","))
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"{text!r}: expected X,Y") from exc
    return (x, y)


def parse_stop(text: str) -> Tuple[str, int, Optional[int]]:
    """``rest`` | ``steps:K`` | ``rest+N`` -> (stop mode, steps, n_post)."""
    if text == "rest":
        return "at_rest", 0, None
    if text.startswith("steps:"):
        k = int(text.split(":", 1)[1])
        if k < 0:
            raise argparse.ArgumentTypeError("steps must be non-negative")
        return "max_steps", k, None
    if text.startswith("rest+"):
        n = int(text.split("+", 1)[1])
        if n < 1:
            raise argparse.ArgumentTypeError("rest+N needs N >= 1")
        return "rest_then_extra", 0, n
    raise argparse.ArgumentTypeError(f"unknown stop rule {text!r}")


def parse_schedule(text: str) -> str:
    if text in ("rr", "round_robin"):
        return "round_robin"
    if text in ("rand", "random"):
        return "random"
    if text.startswith("single:"):
        return text
    raise argparse.ArgumentTypeError(f"unknown schedule {text!r}")


# -- generate -------------------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    if args.kind == "fig2":
        net = generators.fig2_network()
    elif args.kind == "small-world":
        net = generators.small_world(args.n, args.delta, args.beta, args.gamma_max, args.sigma_max, args.seed)
    else:
        if args.map:
            h = generators.read_pgm(args.map)
            origin = {"raster": os.path.basename(args.map)}
        else:
            if not (args.width and args.height):
                raise UsageError("grid needs --map or --width/--height")
            h = generators.hills_altitude(args.width, args.height, args.hills, args.amplitude, args.spread, args.seed)
            origin = {
                "raster": "hills", "hills": args.hills, "amplitude": args.amplitude,
                "spread": args.spread, "seed": args.seed,
            }
        if not args.source or not args.sink:
            raise UsageError("grid needs at least one --source and one --sink pixel")
        amap = generators.AltitudeMap(
            len(h[0]), len(h), h, frozenset(args.obstacle or ()), tuple(args.source), tuple(args.sink)
        )
        net = generators.grid_from_altitude(amap, args.h0, args.m_minus, args.m_plus)
        meta = dict(net.metadata)
        meta["grid"] = dict(meta["grid"], **origin)
        net = net.with_changes(metadata=meta)
    if args.out:
        io.save_network(net, args.out)
        _err(f"wrote {args.out}: {len(net.nodes)} nodes, {len(net.arcs)} arcs")
    else:
        sys.stdout.write(io.dumps_network(net))
    return EXIT_OK


# -- validate -------------------------------------------------------------------------


def cmd_validate(args: argparse.Namespace) -> int:
    net = io.load_network(args.net)
    report = validate_assumptions(net, args.cmax)
    if args.json:
        _emit(report.to_dict())
    for m in report.messages:
        _err(m)
    if report.ok:
        _err("all assumptions hold")
        return EXIT_OK
    return EXIT_INPUT


# -- oracle ---------------------------------------------------------------------------


def _oracle_report(net: Network, c_max: Optional[int], sources: Sequence, all_paths: bool) -> Dict[str, Any]:
    out: Dict[str, Any] = {"c_max": c_max, "sources": {}}
    if c_max is None:
        dmap = shortest_to_sinks(net)
        out["distances"] = {str(v): (None if d == float("inf") else d) for v, d in sorted(dmap.dist.items())}
        for s in sources:
            entry: Dict[str, Any] = {"length": out["distances"][str(s)]}
            path = canonical_path(net, dmap, s)
            entry["path"] = path
            if path:
                entry["secondary_cost"] = sum(net.arc_map[(a, b)].sigma for a, b in zip(path, path[1:]))
            if all_paths and path:
                entry["all_paths"] = all_shortest_paths(net, dmap, s)
            out["sources"][str(s)] = entry
    else:
        for s in sources:
            best = constrained_shortest(net, s, c_max)
            if best is None:
                out["sources"][str(s)] = {"feasible": False}
                continue
            entry = {
                "feasible": True, "length": best.length,
                "secondary_cost": best.secondary_cost, "path": list(best.path),
            }
            if all_paths:
                entry["all_paths"] = [list(p.path) for p in all_constrained_shortest(net, s, c_max)]
            out["sources"][str(s)] = entry
    return out


def _resolve_nodes(net: Network, raw: Optional[Sequence[str]]) -> List:
    if not raw:
        return sorted(net.sources)
    lookup = {str(v): v for v in net.nodes}
    missing = [r for r in raw if r not in lookup]
    if missing:
        raise UsageError(f"unknown nodes {missing}")
    return [lookup[r] for r in raw]


def cmd_oracle(args: argparse.Namespace) -> int:
    net = io.load_network(args.net)
    rep = _oracle_report(net, args.cmax, _resolve_nodes(net, args.node), args.all_paths)
    if args.json:
        _emit(rep)
    else:
        for s, e in rep["sources"].items():
            if e.get("feasible", True) and e.get("path"):
                print(f"{s}: L={e['length']} C={e.get('secondary_cost')} path={'-'.join(map(str, e['path']))}", file=sys.stderr)
            else:
                print(f"{s}: no feasible path", file=sys.stderr)
    return EXIT_OK


# -- simulate -------------------------------------------------------------------------


def _sim_config(args: argparse.Namespace, net: Network, seed: int) -> SimConfig:
    stop, steps, n_post = args.stop
    if args.n_post is not None:
        n_post = args.n_post
    init = io.load_state(net, args.initial_state) if args.initial_state else None
    if init is not None:
        if isinstance(init, BucketedState) != (args.cmax is not None):
            raise UsageError("initial state kind does not match --cmax")
        if isinstance(init, BucketedState) and init.c_max != args.cmax:
            raise UsageError(f"initial state has c_max {init.c_max}, --cmax is {args.cmax}")
    return SimConfig(
        network=net,
        c_max=args.cmax,
        policy=args.policy,
        choice="deterministic" if args.choice == "det" else "stochastic",
        seed=seed,
        schedule=args.schedule,
        stop=stop,
        steps=steps,
        n_post=n_post,
        scenario=io.load_scenario(args.scenario) if args.scenario else (),
        record_trace=bool(args.trace),
        initial_state=init,
        settle_first=not args.no_settle,
        max_injections=args.max_injections,
        validate=not args.skip_validate,
    )


def _run_one(config: SimConfig) -> MetricsLog:
    return run(config)


def _summary_path(metrics: str) -> str:
    root, ext = os.path.splitext(metrics)
    return (root if ext == ".csv" else metrics) + ".summary.json"


def _rep_path(path: str, i: int) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}.r{i}{ext}"


def _simulate(args: argparse.Namespace, net: Network) -> Tuple[List[SimConfig], List[MetricsLog]]:
    reps = max(1, args.replications)
    configs = [_sim_config(args, net, args.seed + i) for i in range(reps)]
    if reps > 1 and args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            logs = list(pool.map(_run_one, configs))
    else:
        logs = [_run_one(c) for c in configs]
    return configs, logs


def _validation_failure(exc: SimulationRefused) -> int:
    _err("network fails the standing assumptions:")
    for m in exc.report.messages:
        _err(f"  {m}")
    print(json.dumps(exc.report.to_dict(), sort_keys=True, default=str), file=sys.stderr)
    return EXIT_INPUT


def cmd_simulate(args: argparse.Namespace) -> int:
    net = io.load_network(args.net)
    try:
        configs, logs = _simulate(args, net)
    except SimulationRefused as exc:
        return _validation_failure(exc)
    summaries = []
    for i, (cfg, mlog) in enumerate(zip(configs, logs)):
        metrics = args.metrics if len(logs) == 1 else _rep_path(args.metrics, i)
        write_metrics_csv(mlog, metrics)
        write_summary_json(mlog, _summary_path(metrics), cfg)
        if args.trace:
            write_trace_jsonl(mlog, args.trace if len(logs) == 1 else _rep_path(args.trace, i))
        summaries.append(summary_dict(mlog, cfg))
    if len(logs) > 1:
        merged = {"replications": summaries, "seeds": [c.seed for c in configs]}
        with open(_summary_path(args.metrics), "w") as fh:
            json.dump(merged, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")
    for mlog in logs:
        for row in summarize(mlog):
            flag = " (partial)" if row.partial else ""
            _err(f"source {row.source}: L={row.L_ss} C={row.C_ss} E={row.E_ss} T={row.T_ss} V={row.V_ss} l={row.l_ss}{flag}")
    if args.json:
        _emit(summaries[0] if len(summaries) == 1 else {"replications": summaries})
    wants_rest = configs[0].stop != "max_steps"
    if wants_rest and not all(m.rest_reached for m in logs):
        _err("global rest not reached")
        return EXIT_NO_REST
    return EXIT_OK


# -- compare --------------------------------------------------------------------------


def _check_against_oracle(cfg: SimConfig, mlog: MetricsLog) -> List[Dict[str, Any]]:
    """Post-rest walks and source states versus the oracle; returns the mismatches."""
    net = mlog.network
    diffs: List[Dict[str, Any]] = []
    if cfg.constrained:
        target = {s: constrained_shortest(net, s, cfg.c_max) for s in mlog.support}
        want = {s: (None if t is None else t.length) for s, t in target.items()}
    else:
        dmap = shortest_to_sinks(net)
        want = {s: dmap.dist[s] for s in mlog.support}
    state = mlog.final_state
    for s in mlog.support:
        expect = want[s]
        have_x = state.x[s][0] if cfg.constrained else state[s]
        if expect is None or expect == float("inf"):
            diffs.append({"source": s, "problem": "oracle finds no feasible path"})
            continue
        if have_x != expect:
            diffs.append({"source": s, "problem": "source state differs from distance", "x": have_x, "oracle": expect})
        samples = mlog.post_rest.get(s) if mlog.rest_reached else None
        if samples:
            walks = [(p.length, p.cost, True, list(p.walk)) for p in samples]
        else:
            # no certified samples: probe a copy of the final state once
            probe = state.copy() if cfg.constrained else dict(state)
            choice = ChoiceModel(cfg.choice, cfg.seed)
            if cfg.constrained:
                out = constrained_inject(net, probe, s, choice).outcome
            else:
                out = inject(net, probe, s, choice).outcome
            length = sum(net.arc_map[(a, b)].gamma for a, b in zip(out.walk, out.walk[1:]))
            walks = [(length, out.cost, out.exited, list(out.walk))]
        for length, cost, exited, walk in walks:
            if not exited:
                diffs.append({"source": s, "problem": "token did not exit", "walk": walk})
            elif length != expect:
                diffs.append({"source": s, "problem": "walk length differs", "walk": walk, "length": length, "oracle": expect})
            elif cfg.constrained and cost > cfg.c_max:
                diffs.append({"source": s, "problem": "budget exceeded", "walk": walk, "cost": cost})
    return diffs


def cmd_compare(args: argparse.Namespace) -> int:
    net = io.load_network(args.net)
    args.replications = 1
    try:
        (cfg,), (mlog,) = _simulate(args, net)
    except SimulationRefused as exc:
        return _validation_failure(exc)
    try:
        diffs = _check_against_oracle(cfg, mlog)
    except NonPositiveCircuitError as exc:
        _err(str(exc))
        return EXIT_INPUT
    report = {"rest_reached": mlog.rest_reached, "match": not diffs, "mismatches": diffs}
    if args.json:
        _emit(report)
    if diffs:
        for d in diffs:
            _err("mismatch: " + json.dumps(d, sort_keys=True, default=str))
        return EXIT_MISMATCH
    if cfg.stop != "max_steps" and not mlog.rest_reached:
        _err("global rest not reached")
        return EXIT_NO_REST
    _err(f"all {len(mlog.support)} sources match the oracle")
    return EXIT_OK


# -- export-plot ----------------------------------------------------------------------


def cmd_export_plot(args: argparse.Namespace) -> int:
    summary_file = _summary_path(args.metrics)
    if not os.path.exists(args.metrics):
        raise UsageError(f"{args.metrics} does not exist")
    summary = None
    if os.path.exists(summary_file):
        with open(summary_file) as fh:
            summary = json.load(fh)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if args.what == "v-series":
            limit = None
            if summary and summary.get("rest_reached") and not args.full:
                limit = summary["T_ss"]
            w.writerow(["k", "V"])
            with open(args.metrics) as mf:
                for row in csv.DictReader(mf):
                    if limit is not None and int(row["k"]) > limit:
                        break
                    w.writerow([row["k"], row["V"]])
        elif args.what == "arc-histogram":
            if summary is None:
                raise UsageError(f"arc histogram needs {summary_file}")
            w.writerow(["tail", "head", "count"])
            for t, h, c in summary["arc_histogram"]:
                w.writerow([t, h, c])
        else:
            if summary is None:
                raise UsageError(f"state map needs {summary_file}")
            grid = (summary.get("network_metadata") or {}).get("grid")
            if not grid:
                raise UsageError("state map needs a grid network (no grid metadata in the summary)")
            width = int(grid["width"])
            fs = summary["final_state"]
            w.writerow(["x_pixel", "y_pixel", "value"])
            for node, val in fs["x"].items():
                x, y = generators.pixel_of(int(node), width)
                if isinstance(val, list):
                    val = val[args.bucket]
                w.writerow([x, y, val])
    _err(f"wrote {args.out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tokenflow", description=__doc__.split("\n\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a network JSON document")
    g.add_argument("kind", choices=["fig2", "grid", "small-world"])
    g.add_argument("--out")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--delta", type=int, default=4)
    g.add_argument("--beta", type=float, default=0.15)
    g.add_argument("--gamma-max", type=int, default=50)
    g.add_argument("--sigma-max", type=int, default=10)
    g.add_argument("--map", help="PGM altitude raster")
    g.add_argument("--width", type=int)
    g.add_argument("--height", type=int)
    g.add_argument("--hills", type=int, default=6)
    g.add_argument("--amplitude", type=int, default=400)
    g.add_argument("--spread", type=float, default=2.5)
    g.add_argument("--h0", type=int, default=-30)
    g.add_argument("--m-minus", type=parse_rational, default=Fraction(2, 5))
    g.add_argument("--m-plus", type=parse_rational, default=Fraction(9, 10))
    g.add_argument("--source", type=parse_pixel, action="append", help="source pixel X,Y (repeatable)")
    g.add_argument("--sink", type=parse_pixel, action="append", help="sink pixel X,Y (repeatable)")
    g.add_argument("--obstacle", type=parse_pixel, action="append", help="obstacle pixel X,Y (repeatable)")
    g.set_defaults(func=cmd_generate)

    v = sub.add_parser("validate", help="check the standing assumptions")
    v.add_argument("--net", required=True)
    v.add_argument("--cmax", type=int)
    v.add_argument("--json", action="store_true")
    v.set_defaults(func=cmd_validate)

    o = sub.add_parser("oracle", help="exact shortest (constrained) paths")
    o.add_argument("--net", required=True)
    o.add_argument("--cmax", type=int)
    o.add_argument("--node", action="append", help="start node (default: every source)")
    o.add_argument("--all-paths", action="store_true")
    o.add_argument("--json", action="store_true")
    o.set_defaults(func=cmd_oracle)

    def sim_flags(sp: argparse.ArgumentParser) -> None:
        sp.add_argument("--net", required=True)
        sp.add_argument("--cmax", type=int)
        sp.add_argument("--policy", choices=["original", "enhanced"], default="original")
        sp.add_argument("--choice", choices=["det", "sto"], default="det")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--schedule", type=parse_schedule, default="round_robin")
        sp.add_argument("--stop", type=parse_stop, default=("at_rest", 0, None))
        sp.add_argument("--n-post", type=int, help="post-rest samples per source")
        sp.add_argument("--scenario")
        sp.add_argument("--initial-state")
        sp.add_argument("--no-settle", action="store_true", help="do not settle the initial state")
        sp.add_argument("--max-injections", type=int)
        sp.add_argument("--skip-validate", action="store_true")
        sp.add_argument("--json", action="store_true")

    s = sub.add_parser("simulate", help="run the token dynamics")
    sim_flags(s)
    s.add_argument("--metrics", required=True, help="per-step CSV; the summary goes next to it")
    s.add_argument("--trace", help="JSON-lines walk trace")
    s.add_argument("--replications", type=int, default=1)
    s.add_argument("--jobs", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("compare", help="simulate to rest and check every source against the oracle")
    sim_flags(c)
    c.set_defaults(func=cmd_compare, metrics=None, trace=None, jobs=1)

    e = sub.add_parser("export-plot", help="tidy CSV for external plotting")
    e.add_argument("--metrics", required=True)
    e.add_argument("--what", choices=["v-series", "state-map", "arc-histogram"], required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--bucket", type=int, default=0, help="bucket shown by state-map for constrained runs")
    e.add_argument("--full", action="store_true", help="v-series past the rest step")
    e.set_defaults(func=cmd_export_plot)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except (UsageError, NetworkError, OverflowError, ValueError, TypeError, OSError, json.JSONDecodeError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    except (WalkLimitError, NonPositiveCircuitError) as exc:
        _err(f"dynamics diverged: {exc}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
