"""prtsim command line: validate, run, sweep, compare and net export-dot.

Exit codes: 0 ok, 2 input error, 3 runtime assertion, 4 not saturated,
5 engines diverge.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .analytics import NotSaturated, compute_metrics, curve_csv, curve_svg, metrics_csv, write_text
from .engine_ca import CollisionDetected
from .network import NetworkError
from .safety import SafetyMonitor
from .scenario import BUNDLED, ParseError, ValidationError, load_scenario, scenario_path
from . import sweep as sw

OK, INPUT, RUNTIME, NOT_SATURATED, DIVERGED = 0, 2, 3, 4, 5


class InvariantBroken(RuntimeError):
    pass


def _out_dir(arg) -> Path:
    p = Path(arg or os.environ.get("PRTSIM_OUT") or "prtsim-out")
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load(path, lenient=False):
    return load_scenario(scenario_path(path), strict=not lenient)


def _scales(text):
    try:
        vals = sorted({float(x) for x in text.split(",") if x.strip()})
    except ValueError:
        raise ParseError(f"bad scale list {text!r}", field="--scales") from None
    if any(v < 0 for v in vals):
        raise ParseError("scales must be >= 0", field="--scales")
    return vals


def _err(msg):
    print(f"prtsim: {msg}", file=sys.stderr)


def check_run(res, sc, monitor=None):
    """Raise InvariantBroken if a finished run broke conservation or safety."""
    mgr = res.manager
    problems = []
    if res.engine.vehicle_count() != sc.fleet.count:
        problems.append(f"vehicle count {res.engine.vehicle_count()} != fleet {sc.fleet.count}")
    if not mgr.accounting_closed():
        problems.append(f"passenger accounting open: spawned {mgr.spawned}, arrived {mgr.arrived}, "
                        f"riding {mgr.riding}, waiting {mgr.waiting}")
    if monitor is not None:
        problems += monitor.all_violations()[:20]
    if problems:
        raise InvariantBroken("; ".join(problems))


# -- commands ---------------------------------------------------------------------------


def cmd_validate(args) -> int:
    sc = _load(args.scenario, args.lenient)
    net = sc.network
    print(f"ok: {len(net.nodes)} nodes, {len(net.segments)} segments, {len(net.stations)} stations, "
          f"{len(net.capacitors)} capacitors, track {net.total_length:g} m")
    return OK


def cmd_run(args) -> int:
    sc = _load(args.scenario, args.lenient)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    if args.scale is not None:
        sc = sc.with_scale(args.scale)
    out = _out_dir(args.out)
    monitor = None
    if args.check and args.engine == "ed":
        monitor = SafetyMonitor(sc.network, sc.engine.sector_length_m, sc.traffic.static_separation_m)
    res = sw.simulate(sc, args.engine, trace=args.trace, monitor=monitor)
    check_run(res, sc, monitor)
    rep = compute_metrics(res.log, sc.warmup_s)
    write_text(out / "events.csv", res.log.to_csv())
    write_text(out / "metrics.csv", metrics_csv([rep]))
    print(f"{args.engine}: {rep.trips_full_per_h:.1f} full/h, {rep.trips_empty_per_h:.1f} empty/h, "
          f"wait {rep.wait_mean_s:.1f} s -> {out}")
    return OK


def cmd_sweep(args) -> int:
    sc = _load(args.scenario, args.lenient)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    seeds = [sc.seed + i for i in range(args.replications)]
    out = _out_dir(args.out)
    sat = None
    if args.auto_saturation:
        try:
            search = sw.find_saturation(sc, args.engine, seeds=seeds[:1], workers=args.jobs)
        except NotSaturated as e:
            _err(f"not saturated up to demand scale {e.upper_bound:g}")
            return NOT_SATURATED
        sat = search.scale
        print(f"saturation scale {sat:g} after {len(search.probes)} probes")
        scales = sw.six_point_scales(sat)
    elif args.scales:
        scales = _scales(args.scales)
        if len(scales) < 2:
            raise ParseError("need at least 2 scales", field="--scales")
    else:
        raise ParseError("give --scales or --auto-saturation", field="--scales")
    res = sw.sweep(sc, args.engine, scales, seeds, args.jobs, sat)
    rows = res.curve_rows()
    reports = [r for s in res.scales for r in res.reports[s]]
    write_text(out / "metrics.csv", metrics_csv(reports))
    text = curve_csv(rows)
    write_text(out / "curve.csv", text)
    write_text(out / "curve.svg", curve_svg(rows))
    if len(rows) >= 4:
        c = res.mean_curve()
        where = "interior" if c.interior else "at an endpoint"
        print(f"empty-trip maximum {c.values[c.argmax]:.1f}/h at scale {c.scales[c.argmax]:g} ({where}, "
              f"{c.margin:.2f}x the larger endpoint)")
    sys.stdout.write(text)
    return OK


def cmd_compare(args) -> int:
    sc = _load(args.scenario, args.lenient)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    seeds = [sc.seed + i for i in range(args.replications)]
    if args.scales:
        scales = _scales(args.scales)
    else:
        try:
            sat = sw.find_saturation(sc, "ed", seeds=seeds[:1], workers=args.jobs).scale
        except NotSaturated as e:
            _err(f"not saturated up to demand scale {e.upper_bound:g}")
            return NOT_SATURATED
        scales = [0.5 * sat]
        print(f"ED saturation scale {sat:g}; comparing at {scales[0]:g}")
    rows = sw.compare(sc, scales, seeds, args.jobs)
    tol, etol = args.tolerance / 100.0, args.empty_tolerance / 100.0
    lines = ["demand_scale,ed_full_per_h,ca_full_per_h,d_full,ed_empty_per_h,ca_empty_per_h,d_empty,"
             "ed_wait_s,ca_wait_s,d_wait,ok"]
    good = True
    for r in rows:
        ok = r.ok(tol, etol)
        good &= ok
        f = lambda x: "%.6g" % x  # noqa: E731
        lines.append(",".join([f(r.scale), f(r.ed[0]), f(r.ca[0]), f(r.diffs[0]), f(r.ed[1]), f(r.ca[1]),
                               f(r.diffs[1]), f(r.ed[2]), f(r.ca[2]), f(r.diffs[2]), "1" if ok else "0"]))
    text = "\n".join(lines) + "\n"
    if args.out or os.environ.get("PRTSIM_OUT"):
        write_text(_out_dir(args.out) / "compare.csv", text)
    sys.stdout.write(text)
    return OK if good else DIVERGED


def cmd_export_dot(args) -> int:
    if args.network in BUNDLED:
        from .scenario import bundled_networks
        net = bundled_networks()[args.network]
    else:
        net = _load(args.network, args.lenient).network
    text = net.export_dot()
    if args.out:
        write_text(_out_dir(args.out) / "network.dot", text)
    sys.stdout.write(text)
    return OK


# -- parser -----------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="prtsim", description="Personal rapid transit network simulator")
    sub = p.add_subparsers(dest="cmd", required=True)

    def common(q, scenario=True):
        if scenario:
            q.add_argument("scenario", help=f"scenario file, or a bundled name ({', '.join(BUNDLED)})")
        q.add_argument("--lenient", action="store_true", help="warn about unknown keys instead of failing")

    q = sub.add_parser("validate", help="check a scenario and its network")
    common(q)
    q.set_defaults(fn=cmd_validate)

    q = sub.add_parser("run", help="run one simulation")
    common(q)
    q.add_argument("--engine", choices=("ed", "ca"), default="ed")
    q.add_argument("--out")
    q.add_argument("--seed", type=int)
    q.add_argument("--scale", type=float, help="override demand_scale")
    q.add_argument("--trace", action="store_true", help="also log every sector crossing / cell move")
    q.add_argument("--check", action="store_true", help="attach the separation monitor (ed)")
    q.set_defaults(fn=cmd_run)

    q = sub.add_parser("sweep", help="sweep demand scales and build the empty-trip curve")
    common(q)
    q.add_argument("--engine", choices=("ed", "ca"), default="ed")
    g = q.add_mutually_exclusive_group()
    g.add_argument("--scales", help="comma-separated demand scales")
    g.add_argument("--auto-saturation", action="store_true")
    q.add_argument("--replications", type=int, default=1)
    q.add_argument("--seed", type=int)
    q.add_argument("--jobs", type=int, default=1)
    q.add_argument("--out")
    q.set_defaults(fn=cmd_sweep)

    q = sub.add_parser("compare", help="run both engines and report relative differences")
    common(q)
    q.add_argument("--scales", help="comma-separated scales (default: half the ED saturation scale)")
    q.add_argument("--tolerance", type=float, default=20.0, help="percent, throughput and mean wait")
    q.add_argument("--empty-tolerance", type=float, default=35.0, help="percent, empty trips")
    q.add_argument("--replications", type=int, default=1)
    q.add_argument("--seed", type=int)
    q.add_argument("--jobs", type=int, default=1)
    q.add_argument("--out")
    q.set_defaults(fn=cmd_compare)

    q = sub.add_parser("net", help="network utilities")
    nsub = q.add_subparsers(dest="net_cmd", required=True)
    e = nsub.add_parser("export-dot", help="print the network as Graphviz dot")
    e.add_argument("network", help="scenario file or bundled network name")
    e.add_argument("--lenient", action="store_true")
    e.add_argument("--out")
    e.set_defaults(fn=cmd_export_dot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ValidationError as e:
        _err("invalid scenario:")
        for msg in e.problems:
            print(f"  {msg}", file=sys.stderr)
        return INPUT
    except (ParseError, NetworkError, FileNotFoundError, IsADirectoryError) as e:
        _err(str(e))
        return INPUT
    except (InvariantBroken, CollisionDetected, RuntimeError, AssertionError) as e:
        _err(f"runtime assertion failed: {e}")
        return RUNTIME


if __name__ == "__main__":
    sys.exit(main())
