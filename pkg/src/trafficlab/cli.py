"""Command-line entry point: ``trafficlab {gen-roadnet,gen-flow,run,report}``."""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from . import harness
from .netmodel import RoadnetError, gen_synthetic_flow, grid_network, load_roadnet, save_flow, save_roadnet


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    """One ``--flag`` per ExperimentConfig field; unset flags leave the config value alone."""
    for f in dataclasses.fields(harness.ExperimentConfig):
        flag = "--" + f.name.replace("_", "-")
        default = f.default
        if isinstance(default, bool):
            p.add_argument(flag, dest=f.name, default=None,
                           type=lambda s: s.lower() in ("1", "true", "yes", "on"),
                           metavar="BOOL")
        elif f.name == "prune_rates":
            p.add_argument(flag, dest=f.name, default=None, type=float, nargs="+")
        elif f.name in ("alpha_override",):
            p.add_argument(flag, dest=f.name, default=None, type=float)
        elif f.name in ("roadnet", "flow", "controller", "action_mode", "flow_profile"):
            p.add_argument(flag, dest=f.name, default=None,
                           choices=harness.CONTROLLERS if f.name == "controller" else None)
        else:
            p.add_argument(flag, dest=f.name, default=None, type=type(default))


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trafficlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-roadnet", help="write a grid road network")
    g.add_argument("--rows", type=int, default=1)
    g.add_argument("--cols", type=int, default=3)
    g.add_argument("--lane-length", type=float, default=300.0)
    g.add_argument("--speed-limit", type=float, default=11.11)
    g.add_argument("-o", "--output", required=True)

    f = sub.add_parser("gen-flow", help="write a synthetic vehicle flow")
    f.add_argument("--roadnet", help="roadnet file (default: grid from --rows/--cols)")
    f.add_argument("--rows", type=int, default=1)
    f.add_argument("--cols", type=int, default=3)
    f.add_argument("--rate", type=float, default=500.0, help="mean vehicles per hour per entry road")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--duration", type=int, default=3600)
    f.add_argument("--profile", choices=("gaussian", "uniform"), default="gaussian")
    f.add_argument("-o", "--output", required=True)

    r = sub.add_parser("run", help="run an experiment and write per-episode reports")
    r.add_argument("--config", help="TOML file with ExperimentConfig keys")
    r.add_argument("-o", "--output", required=True, help="reports CSV path")
    r.add_argument("--checkpoints", help="directory for agent checkpoints and the round log")
    r.add_argument("--trace", help="per-tick vehicle trace CSV for the first episode")
    r.add_argument("--quiet", action="store_true")
    _add_config_flags(r)

    s = sub.add_parser("report", help="summarise a reports CSV")
    s.add_argument("reports")
    s.add_argument("--window", type=int, default=10)
    s.add_argument("--tol", type=float, default=0.05)
    return parser


def _cmd_gen_roadnet(args) -> int:
    net = grid_network(args.rows, args.cols, args.lane_length, args.speed_limit)
    save_roadnet(net, args.output)
    return 0


def _cmd_gen_flow(args) -> int:
    net = load_roadnet(args.roadnet) if args.roadnet else grid_network(args.rows, args.cols)
    flow = gen_synthetic_flow(net, args.rate, args.seed, args.duration, profile=args.profile)
    save_flow(flow, args.output)
    return 0


def _cmd_run(args) -> int:
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(harness.ExperimentConfig)}
    if args.config:
        cfg = harness.load_config(args.config, **overrides)
    else:
        cfg = harness.config_from_mapping({}, **overrides)
    if args.trace:
        _write_trace(cfg, args.trace)

    def progress(rep: harness.EpisodeReport) -> None:
        if not args.quiet:
            print(f"episode {rep.episode}: avg travel time {rep.avg_travel_time:.2f} s, "
                  f"mean reward {rep.mean_reward:.3f}", file=sys.stderr)

    result = harness.run_experiment(cfg, args.checkpoints, progress)
    harness.emit_reports(result.reports, args.output)
    return 0


def _write_trace(cfg: harness.ExperimentConfig, path: str) -> None:
    """Replay the first episode under the configured heuristic, or MaxHP for learners."""
    from . import pressure
    from .simcore import PHASE_DURATION, Simulation

    net = harness.build_network(cfg)
    flow = harness.build_flow(cfg, net)
    kind = cfg.controller if cfg.controller in harness.HEURISTICS else "maxhp"
    with open(path, "w", newline="") as fh:
        sim = Simulation(net, flow, trace=fh)
        for _ in range(cfg.episode_seconds // PHASE_DURATION):
            if kind == "fixedtime":
                phases = [pressure.fixedtime_select(sim.now)] * len(net.intersections)
            else:
                select = pressure.maxhp_select if kind == "maxhp" else pressure.maxpressure_select
                phases = [select(o) for o in sim.observe_all()]
            sim.run(PHASE_DURATION, phases)


def _cmd_report(args) -> int:
    reports = harness.read_reports(args.reports)
    print(f"{'episode':>7}  {'avg_travel_time_s':>17}  {'mean_reward':>12}  {'completed':>9}  {'in_network':>10}")
    for r in reports:
        print(f"{r.episode:>7}  {r.avg_travel_time:>17.3f}  {r.mean_reward:>12.4f}  "
              f"{r.completed:>9}  {r.in_network:>10}")
    conv = harness.detect_convergence(reports, args.window, args.tol)
    print(f"converged at episode: {conv if conv is not None else 'none'}")
    if len(reports) >= 2:
        print(f"pearson(travel time, -mean reward): {harness.reward_correlation(reports):.4f}")
    if reports:
        best = min(reports, key=lambda r: r.avg_travel_time)
        print(f"best episode: {best.episode} ({best.avg_travel_time:.3f} s)")
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    handlers = {"gen-roadnet": _cmd_gen_roadnet, "gen-flow": _cmd_gen_flow,
                "run": _cmd_run, "report": _cmd_report}
    try:
        return handlers[args.command](args)
    except (harness.ConfigError, RoadnetError, OSError, ValueError) as exc:
        print(f"trafficlab: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
