# mbmp_sim/cli.py
"""Command-line front end: run, sweep, analyze theta, validate."""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from colorama import Fore, Style, init as colorama_init
from dotenv import load_dotenv
from tabulate import tabulate

from mbmp_sim.analysis import DensityField, theta_analytic, theta_lower_bound, theta_monte_carlo
from mbmp_sim.errors import ConfigError, MbmpError
from mbmp_sim.geometry import ArenaConfig
from mbmp_sim.protocol import ProtocolVariant
from mbmp_sim.scenario import build, is_sweep_file, load_scenario, load_sweep
from mbmp_sim.simcore import run
from mbmp_sim.sweep import run_sweep, sweep_workers

logger = logging.getLogger("mbmp_sim")

VARIANTS = [v.value for v in ProtocolVariant]


def _status(msg, color=Fore.CYAN):
    print(f"{color}{msg}{Style.RESET_ALL}", file=sys.stderr)


def _variant(name):
    try:
        return ProtocolVariant.parse(name)
    except ValueError:
        raise ConfigError(f"unknown variant {name!r}; valid variants: {', '.join(VARIANTS)}") from None


def _write(text, out):
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


# =====================================================
# ▶️ RUN
# =====================================================
def cmd_run(args):
    scenario = load_scenario(args.scenario)
    variant = _variant(args.variant)
    _status(f"🚀 Running {scenario.name} under {variant.value} (seed={args.seed if args.seed is not None else scenario.seed})")
    result = run(scenario, variant, args.seed, trace=bool(args.trace))
    report = result.report

    if args.format == "csv":
        _write(report.window_frame().to_csv(index=False, lineterminator="\n"), args.out)
    else:
        _write(json.dumps(report.summary(), indent=2, sort_keys=True) + "\n", args.out)
    if args.trace:
        result.trace.write(args.trace)
        _status(f"📝 Trace written to {args.trace}")
    if args.bandwidth_out:
        report.bandwidth_frame().to_csv(args.bandwidth_out, index=False, lineterminator="\n")
        _status(f"📈 Bandwidth samples written to {args.bandwidth_out}")

    rows = [[f.flow_id, f"{f.src}->{f.dst}", f.status, f.w_bps, f.steady_bps,
             f.steady_ratio if f.steady_ratio is not None else "-",
             "⚠️" if f.false_admission else ""] for f in report.flows]
    if rows:
        print(tabulate(rows, headers=["flow", "pair", "status", "W", "steady", "ratio", "false"],
                       tablefmt="simple"), file=sys.stderr)
    _status(f"✅ N_f={report.n_f} bps, throughput={report.total_throughput} bps, "
            f"control={report.total_control_messages}", Fore.GREEN)
    return 0


# =====================================================
# 🔁 SWEEP
# =====================================================
def cmd_sweep(args):
    spec = load_sweep(args.spec)
    frame = run_sweep(spec, args.workers or sweep_workers())
    _write(frame.to_csv(index=False, lineterminator="\n"), args.out)
    failed = int((frame["status"] == "failed").sum())
    if failed:
        _status(f"⚠️ {failed} sweep run(s) failed", Fore.YELLOW)
    _status(f"✅ Sweep finished: {len(frame)} rows", Fore.GREEN)
    return 0


# =====================================================
# 📐 ANALYZE
# =====================================================
def _parse_arena(text):
    try:
        w, h = (float(v) for v in text.lower().split("x"))
        return ArenaConfig(width=w, height=h)
    except ValueError:
        raise ConfigError(f"malformed arena {text!r}; expected WIDTHxHEIGHT") from None


def cmd_analyze(args):
    seed = args.seed
    if args.density.startswith("uniform:"):
        arena = _parse_arena(args.arena)
        try:
            rho = float(args.density.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"malformed density {args.density!r}") from None
        if rho < 0:
            raise ConfigError(f"density must be >= 0, got {rho}")
        field = DensityField.uniform(rho, arena)
        seed = 0 if seed is None else seed
        source = field
        node_count = rho * arena.area
    elif os.path.isfile(args.density):
        scenario = load_scenario(args.density)
        seed = scenario.seed if seed is None else seed
        topology = build(scenario, seed).topology
        arena = topology.arena
        field = DensityField.empirical(topology, args.r)
        source = topology
        node_count = len(topology)
    else:
        raise ConfigError(f"malformed density {args.density!r}; use uniform:<rho> or a scenario file")

    mc = theta_monte_carlo(source, args.r, args.trials, np.random.default_rng(seed))
    out = {
        "analytic": theta_analytic(field, args.r, args.request_rate),
        "lower_bound": theta_lower_bound(node_count, arena.area, args.r),
        "monte_carlo": mc.ratio,
        "stderr": mc.stderr,
    }
    _write(json.dumps(out, indent=2, sort_keys=True) + "\n", args.out)
    return 0


# =====================================================
# 🔍 VALIDATE
# =====================================================
def cmd_validate(args):
    rows = []
    status = 0
    for path in args.scenarios:
        try:
            if is_sweep_file(path):
                spec = load_sweep(path)
                runs = len(spec.values) * spec.replicates * len(spec.variants)
                rows.append([path, "✅ ok", f"sweep:{spec.scenario.name}", "-", "-", f"{runs} runs"])
                continue
            s = load_scenario(path)
            nodes = len(s.nodes) if s.nodes is not None else s.placement.count
            flows = len(s.flows) if s.flows else (s.traffic.count if s.traffic else 0)
            rows.append([path, "✅ ok", s.name, nodes, flows, s.duration])
        except ConfigError as e:
            rows.append([path, f"❌ {e}", "", "", "", ""])
            status = 2
    print(tabulate(rows, headers=["file", "status", "name", "nodes", "flows", "duration"]))
    return status


# =====================================================
# 🧭 ENTRY POINT
# =====================================================
def build_parser():
    parser = argparse.ArgumentParser(prog="mbmp-sim", description="MBMP admission-control simulator")
    parser.add_argument("--log-level", default=os.getenv("MBMP_SIM_LOG_LEVEL", "WARNING"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one scenario under one variant")
    p.add_argument("--scenario", required=True)
    p.add_argument("--variant", default=ProtocolVariant.MBMP_MULTIHOP.value)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out")
    p.add_argument("--trace")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--bandwidth-out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run a parameter sweep")
    p.add_argument("--spec", required=True)
    p.add_argument("--out")
    p.add_argument("--workers", type=int, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="overhead-ratio mathematics")
    asub = p.add_subparsers(dest="analysis", required=True)
    t = asub.add_parser("theta")
    t.add_argument("--density", required=True)
    t.add_argument("--r", type=float, default=250.0)
    t.add_argument("--arena", default="1000x1000")
    t.add_argument("--trials", type=int, default=10000)
    t.add_argument("--request-rate", type=float, default=1.0)
    t.add_argument("--seed", type=int, help="defaults to the scenario seed, or 0")
    t.add_argument("--out")
    t.set_defaults(func=cmd_analyze)

    p = sub.add_parser("validate", help="validate scenario files")
    p.add_argument("scenarios", nargs="+")
    p.set_defaults(func=cmd_validate)
    return parser


def main(argv=None):
    load_dotenv()
    colorama_init()
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except ConfigError as e:
        _status(f"❌ {e}", Fore.RED)
        return 2
    except MbmpError as e:
        _status(f"❌ {e}", Fore.RED)
        return 1


if __name__ == "__main__":
    sys.exit(main())
