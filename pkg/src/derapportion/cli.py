"""Command-line front end: ``derapportion validate | run | oracle``."""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

import numpy as np

from .apportion import CommandInstant, DerKind, Mode, normalize_capacity
from .protocol import oracle_consensus_ratio, oracle_window_extrema
from .simnet import (
    ENGINES,
    CapacityProfile,
    CommandFailed,
    CsvSink,
    Scenario,
    ScenarioError,
    load_scenario,
    run_scenario,
    scenario_from_json,
)
from .simnet.scenario import command_from_json
from .simnet.trace import write_summary
from .topology import (
    TopologyError,
    epoch_length,
    exact_diameter,
    graph_from_dict,
    random_strongly_connected,
    validate_strong_connectivity,
)

OUT_ENV = "DERAPPORTION_OUT"
BUNDLED = ("testcase1", "testcase2")


def resolve_scenario_path(name: str) -> Path:
    """A filesystem path, or the name of a bundled scenario."""
    p = Path(name)
    if p.exists():
        return p
    stem = name[:-5] if name.endswith(".json") else name
    if stem in BUNDLED:
        return Path(str(resources.files("derapportion") / "scenarios" / f"{stem}.json"))
    raise FileNotFoundError(f"no such scenario file: {name}")


def _apply_overrides(sc: Scenario, args) -> Scenario:
    over = {}
    for flag, field_name in (("seed", "seed"), ("rho", "rho"), ("tau_bar", "tau_bar"),
                             ("epoch_cap", "epoch_cap"), ("engine", "engine")):
        v = getattr(args, flag, None)
        if v is not None:
            over[field_name] = v
    if not over:
        return sc
    return replace(sc, overrides={**sc.overrides, **over}, **over)


# --- validate -----------------------------------------------------------------

def _detect_kind(d) -> str:
    if isinstance(d, list):
        if d and isinstance(d[0], dict) and "mode" in d[0]:
            return "schedule"
        return "capacities"
    if "schedule" in d or "schedule_file" in d:
        if "graph" in d or "graph_file" in d:
            return "scenario"
        return "schedule"
    if "nodes" in d and "edges" in d:
        return "graph"
    if "capacities" in d:
        return "capacities"
    return "unknown"


def _validate_graph(d) -> list[str]:
    try:
        g = graph_from_dict(d)
    except (TopologyError, KeyError, TypeError, ValueError) as exc:
        return [f"graph: {exc}"]
    if not validate_strong_connectivity(g):
        return ["graph: not strongly connected (some node cannot reach another)"]
    if g.diameter_bound is not None and g.diameter_bound < exact_diameter(g):
        return [f"graph: diameter_bound {g.diameter_bound} below exact diameter {exact_diameter(g)}"]
    return []


def _validate_capacities(items) -> list[str]:
    if isinstance(items, dict):
        items = items["capacities"]
    errs = []
    for i, c in enumerate(items):
        try:
            p = CapacityProfile.from_json(c)
            if p.rating is None and p.times is None:
                normalize_capacity(p.at(0.0, None, 1000.0))
        except (ValueError, KeyError) as exc:
            errs.append(f"capacities[{i}]: {exc}")
    return errs


def _validate_schedule(items) -> list[str]:
    if isinstance(items, dict):
        items = items["schedule"]
    errs, times = [], []
    for m, c in enumerate(items):
        try:
            cmd = command_from_json(c)
            times.append(cmd.t_m)
        except (ValueError, KeyError) as exc:
            errs.append(f"schedule[{m}]: {exc}")
    if any(b <= a for a, b in zip(times, times[1:])):
        errs.append("schedule: times must be strictly increasing")
    return errs


def validate_file(path: Path, args=None) -> tuple[str, list[str]]:
    try:
        d = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        return "unreadable", [str(exc)]
    kind = _detect_kind(d)
    if kind == "graph":
        return kind, _validate_graph(d)
    if kind == "capacities":
        return kind, _validate_capacities(d)
    if kind == "schedule":
        return kind, _validate_schedule(d)
    if kind == "scenario":
        try:
            sc = scenario_from_json(d, path.parent)
        except (ScenarioError, TopologyError, OSError, ValueError) as exc:
            return kind, [str(exc)]
        if args is not None:
            sc = _apply_overrides(sc, args)
        return kind, sc.validate()
    return kind, ["unrecognized file: expected a graph, capacities, schedule or scenario"]


def cmd_validate(args) -> int:
    status = 0
    for name in args.paths:
        try:
            path = resolve_scenario_path(name)
        except FileNotFoundError as exc:
            print(f"{name}: error: {exc}")
            status = 1
            continue
        kind, errs = validate_file(path, args)
        if errs:
            status = 1
            for e in errs:
                print(f"{name}: {kind}: error: {e}")
        else:
            print(f"{name}: {kind}: ok")
    return status


# --- run ----------------------------------------------------------------------

def build_report(sc: Scenario, trace, trace_sha256: str | None) -> dict:
    cmds = trace.summary()
    return {
        "scenario": sc.name,
        "seed": sc.seed,
        "engine": sc.engine,
        "config_digest": sc.digest(),
        "overrides": dict(sc.overrides),
        "trace_sha256": trace_sha256,
        "commands": cmds,
        "audit": trace.audit.to_json(),
        "all_converged": all(c["epochs"] > 0 and c["sum_pi_star"] is not None for c in cmds),
    }


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _print_table(cmds: list[dict]):
    print(f"{'#':>3} {'t[s]':>7} {'mode':>5} {'command':>9} {'epochs':>6} {'rounds':>6} "
          f"{'sum pi*':>10} {'residual':>9} {'early@':>6}  feasibility")
    for c in cmds:
        early = c["early_dispatch_from_theta"]
        print(f"{c['index']:>3} {c['t']:>7.1f} {c['mode_used']:>5} {c['command_abs']:>9.2f} "
              f"{c['epochs']:>6} {c['rounds']:>6} {c['sum_pi_star']:>10.3f} {c['residual']:>9.3f} "
              f"{'-' if early is None else early:>6}  {c['feasibility']}")


def cmd_run(args) -> int:
    try:
        sc = load_scenario(resolve_scenario_path(args.scenario))
    except (FileNotFoundError, ScenarioError, TopologyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    sc = _apply_overrides(sc, args)
    errs = sc.validate()
    if errs:
        for e in errs:
            print(f"error: {e}", file=sys.stderr)
        return 2
    out = Path(args.out or os.environ.get(OUT_ENV, "out"))
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "trace.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        try:
            trace = run_scenario(sc, keep_rows=False, row_sink=CsvSink(fh))
        except CommandFailed as exc:
            cause = exc.cause
            print(f"error: command {exc.index} did not converge: {cause}", file=sys.stderr)
            print(f"  tracker gap at the last check: {getattr(cause, 'gap', float('nan')):.6g} "
                  f"(rho = {sc.rho}); raise --epoch-cap or loosen --rho", file=sys.stderr)
            return 3
    report = build_report(sc, trace, _sha256(csv_path))
    write_summary(out / "summary.json", report)
    with open(out / "output.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("round,time_s,output_total,reference_total\n")
        for k, (o, r) in enumerate(zip(trace.output_total, trace.reference_total), start=1):
            fh.write(f"{k},{k / sc.rounds_per_second!r},{o!r},{r!r}\n")
    if not args.quiet:
        _print_table(report["commands"])
        a = report["audit"]
        print(f"audits: {'ok' if a['ok'] else 'FAILED'}  conservation "
              f"{max(a['conservation_rel_r'], a['conservation_rel_s']):.2e}  extremum mismatches "
              f"{a['extremum_mismatches']}/{a['extremum_checks']}  monotonicity violations "
              f"{a['monotonicity_violations']}")
        print(f"wrote {csv_path}, {out / 'summary.json'}, {out / 'output.csv'}")
    return 0 if report["audit"]["ok"] and report["all_converged"] else 1


# --- oracle -------------------------------------------------------------------

def oracle_compare(sc: Scenario) -> list[dict]:
    """Re-run ``sc`` and compare against the centralized ratio and window oracles.

    Window extrema are recomputed by brute force from the recorded ``(r, s)``
    history, independently of the simulator's own audit.
    """
    trace = run_scenario(sc, keep_rows=True, audit=False)
    T = epoch_length(sc.diameter_bound(), sc.tau_bar)
    out = []
    for rec in trace.commands:
        rows = [row for row in trace.rows
                if rec.start_round <= row.round <= rec.start_round + rec.rounds]
        r_hist = np.stack([row.r for row in rows])
        s_hist = np.stack([row.s for row in rows])
        target = oracle_consensus_ratio(rec.r0, rec.s0)
        ratio_err = float(np.max(np.abs(rec.terminal_ratios - target)))
        mism = 0
        for ch in rec.checks:
            M, m = oracle_window_extrema(r_hist, s_hist, (ch.theta - 1) * T, sc.tau_bar)
            mism += int(np.count_nonzero(ch.z_nodes != M) + np.count_nonzero(ch.w_nodes != m))
        out.append({
            "index": rec.index, "n": sc.n, "tau_bar": sc.tau_bar, "rho": sc.rho,
            "oracle_ratio": target, "ratio_error": ratio_err, "epochs": rec.epochs,
            "extremum_checks": len(rec.checks), "extremum_mismatches": mism,
            "ok": ratio_err < sc.rho and mism == 0,
        })
    return out


def random_instance(n: int, rng: np.random.Generator, rho: float = 1e-3,
                    tau_bar: int | None = None) -> Scenario:
    """Random feasible black-start instance on a strongly connected digraph."""
    g = random_strongly_connected(n, rng)
    caps = []
    for _ in range(n):
        lo = float(rng.uniform(-5.0, 2.0))
        caps.append(CapacityProfile(DerKind.ESS if lo < 0 else DerKind.RES, lo,
                                    lo + float(rng.uniform(0.5, 10.0))))
    lo_tot = sum(c.pi_min for c in caps)
    hi_tot = sum(c.pi_max for c in caps)
    demand = float(rng.uniform(lo_tot, hi_tot))
    l = int(rng.integers(1, n + 1))
    nodes = tuple(int(i) for i in rng.choice(n, size=l, replace=False))
    tb = int(rng.integers(0, 4)) if tau_bar is None else tau_bar
    return Scenario(graph=g, capacities=caps,
                    schedule=[CommandInstant(0.0, Mode.BLACK, demand, nodes)],
                    rho=rho, tau_bar=tb, seed=int(rng.integers(0, 2**31)),
                    epoch_cap=400, name=f"random-{n}")


def _print_oracle(rows: list[dict], label: str):
    for r in rows:
        print(f"{label:>14} cmd {r['index']:>3}  N={r['n']:<4} tau={r['tau_bar']}  "
              f"|ratio - oracle| = {r['ratio_error']:.3e} (rho {r['rho']:g})  "
              f"extremum mismatches {r['extremum_mismatches']}/{2 * r['n'] * r['extremum_checks']}"
              f"  {'ok' if r['ok'] else 'MISMATCH'}")


def cmd_oracle(args) -> int:
    results = []
    if args.random:
        rng = np.random.default_rng(args.seed if args.seed is not None else 0)
        for t in range(args.random):
            sc = random_instance(args.nodes, rng, rho=args.rho or 1e-3)
            rows = oracle_compare(sc)
            results += rows
            _print_oracle(rows, f"random[{t}]")
    for name in args.scenarios:
        try:
            sc = load_scenario(resolve_scenario_path(name))
        except (FileNotFoundError, ScenarioError, TopologyError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        sc = _apply_overrides(sc, args)
        if sc.n > args.max_nodes:
            print(f"error: {name} has {sc.n} nodes, above --max-nodes {args.max_nodes}",
                  file=sys.stderr)
            return 2
        errs = sc.validate()
        if errs:
            for e in errs:
                print(f"error: {e}", file=sys.stderr)
            return 2
        rows = oracle_compare(sc)
        results += rows
        _print_oracle(rows, Path(name).stem[:14])
    if not results:
        print("nothing to check: give scenario files or --random K", file=sys.stderr)
        return 2
    bad = sum(not r["ok"] for r in results)
    print(f"{len(results) - bad}/{len(results)} commands match the oracles")
    return 0 if bad == 0 else 1


# --- entry point ----------------------------------------------------------------

def _add_overrides(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, help="override the scenario's delay seed")
    p.add_argument("--rho", type=float, help="override the termination threshold")
    p.add_argument("--tau-bar", dest="tau_bar", type=int, help="override the delay bound")
    p.add_argument("--epoch-cap", dest="epoch_cap", type=int, help="override the epoch cap")
    p.add_argument("--engine", choices=sorted(ENGINES), help="simulation engine")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="derapportion",
                                 description="Distributed finite-time power apportioning simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check graph, capacity, schedule or scenario files")
    p.add_argument("paths", nargs="+")
    _add_overrides(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("run", help="simulate a scenario and write trace.csv / summary.json")
    p.add_argument("scenario", help="scenario file or bundled name (testcase1, testcase2)")
    p.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./out)")
    p.add_argument("-q", "--quiet", action="store_true")
    _add_overrides(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("oracle", help="cross-check small instances against centralized oracles")
    p.add_argument("scenarios", nargs="*")
    p.add_argument("--random", type=int, default=0, metavar="K", help="also check K random instances")
    p.add_argument("--nodes", type=int, default=6, help="node count for random instances")
    p.add_argument("--max-nodes", dest="max_nodes", type=int, default=50)
    _add_overrides(p)
    p.set_defaults(func=cmd_oracle)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
