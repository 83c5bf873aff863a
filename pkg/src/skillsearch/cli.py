"""Command line entry point: ``skillsearch {run,surface,wmap,ik-check,validate}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config, envs, harness, ik
from .kinematics import ContractError, MetricWeights, Pose, default_chain, forward_kinematics, load_chain


def _experiment_flags(p: argparse.ArgumentParser):
    g = p.add_argument_group("experiment overrides (take precedence over the file)")
    g.add_argument("--runs", type=int)
    g.add_argument("--episodes", type=int)
    g.add_argument("--base-seed", type=int)
    g.add_argument("--sigma-joint", type=float)
    g.add_argument("--sigma-cartesian", type=float)
    g.add_argument("--w-pos", type=float)
    g.add_argument("--w-rot", type=float)
    g.add_argument("--task")
    g.add_argument("--chain")
    g.add_argument("--output", help="output directory (run) or file (surface/wmap)")


def _overrides(args) -> dict:
    keys = ("runs", "episodes", "base_seed", "sigma_joint", "sigma_cartesian", "w_pos", "w_rot", "task", "chain")
    return {k: getattr(args, k) for k in keys}


def _offsets(text: str) -> list[float]:
    """``"a,b,c"`` or ``"start:stop:count"`` (inclusive linspace)."""
    if ":" in text:
        start, stop, count = text.split(":")
        return [float(v) for v in np.linspace(float(start), float(stop), int(count))]
    return [float(v) for v in text.split(",") if v.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skillsearch", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one or more experiment files")
    p.add_argument("configs", nargs="+", type=Path)
    _experiment_flags(p)
    p.add_argument("--workers", type=int, default=1, help="threads used to spread runs")
    p.add_argument("--plot", type=Path, help="write an SVG of all learning curves")

    p = sub.add_parser("surface", help="reward along one weight of the trained best policy")
    p.add_argument("config", type=Path)
    _experiment_flags(p)
    p.add_argument("--index", type=int, default=49, help="0-based genome index (default 49, the 50th weight)")
    p.add_argument("--offsets", type=_offsets, default=_offsets("-10:10:41"),
                   help="comma list or start:stop:count (default -10:10:41)")

    p = sub.add_parser("wmap", help="rewards of genomes sampled from the initial search distribution")
    p.add_argument("configs", nargs="+", type=Path)
    _experiment_flags(p)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("ik-check", help="solve a single IK query and print the result as JSON")
    p.add_argument("--chain", type=Path)
    p.add_argument("--position", type=float, nargs=3, required=True)
    p.add_argument("--orientation", type=float, nargs=4, default=[1.0, 0.0, 0.0, 0.0], help="w x y z")
    p.add_argument("--q0", type=float, nargs="+", help="start configuration (default: zeros)")
    p.add_argument("--solver", choices=("approx", "exact"), default="approx")
    p.add_argument("--w-pos", type=float, default=1.0)
    p.add_argument("--w-rot", type=float, default=1.0)
    p.add_argument("--restarts", type=int, default=0)

    p = sub.add_parser("validate", help="check experiment, task or chain files")
    p.add_argument("files", nargs="+", type=Path)
    return parser


def _cmd_run(args) -> int:
    cfgs = [harness.load_config(path, _overrides(args)) for path in args.configs]
    if args.output and len(cfgs) > 1:
        outputs = [Path(args.output) / (c.name or p.stem) for c, p in zip(cfgs, args.configs)]
    else:
        outputs = [Path(args.output) if args.output else _default_output(c, p) for c, p in zip(cfgs, args.configs)]
    curves = []
    for cfg, out in zip(cfgs, outputs):
        curve = harness.run_experiment(cfg, out, workers=args.workers)
        lo, hi = curve.band()
        print(f"{cfg.label}: final best-so-far {curve.mean[-1]:.6g} (+-{curve.stderr[-1]:.3g}, "
              f"{curve.runs} runs x {curve.episodes} episodes) -> {out}")
        curves.append(curve)
    if args.plot:
        print(f"plot: {harness.plot_curves(curves, args.plot)}")
    return 0


def _default_output(cfg, path: Path) -> Path:
    return Path(cfg.output) if cfg.output else Path("results") / (cfg.name or path.stem)


def _cmd_surface(args) -> int:
    cfg = harness.load_config(args.config, _overrides(args))
    out = Path(args.output) if args.output else _default_output(cfg, args.config) / "surface.csv"
    probe = harness.reward_surface_projection(cfg, args.offsets, args.index, out)
    print(f"{cfg.label}: trained best {probe.best_reward:.6g}; {len(probe.offsets)} offsets on weight "
          f"{probe.index} -> {out}")
    return 0


def _cmd_wmap(args) -> int:
    for path in args.configs:
        cfg = harness.load_config(path, _overrides(args))
        if args.output and len(args.configs) > 1:
            out = Path(args.output) / f"{cfg.name or path.stem}_wmap.csv"
        elif args.output:
            out = Path(args.output)
        else:
            out = _default_output(cfg, path) / "wmap.csv"
        _, rewards = harness.weight_reward_map(cfg, args.samples, args.seed, out)
        print(f"{cfg.label}: {args.samples} samples, reward median {np.median(rewards):.6g} -> {out}")
    return 0


def _cmd_ik_check(args) -> int:
    chain = load_chain(args.chain) if args.chain else default_chain()
    q0 = np.zeros(chain.n_joints) if args.q0 is None else np.array(args.q0)
    target = Pose.from_unnormalized(args.position, args.orientation)
    settings = ik.IkSettings(weights=MetricWeights(args.w_pos, args.w_rot), restarts=args.restarts)
    res = ik.solve(chain, target, q0, settings, args.solver)
    reached = forward_kinematics(chain, res.q)
    print(json.dumps({
        "solver": args.solver,
        "converged": bool(res.converged),
        "iterations": int(res.iterations),
        "residual": float(res.residual),
        "q": [float(v) for v in res.q],
        "position": [float(v) for v in reached.position],
        "orientation": [float(v) for v in reached.orientation],
        "position_error": float(np.linalg.norm(reached.position - target.position)),
    }, indent=2))
    return 0


def _kind(data) -> str:
    if "joints" in data:
        return "chain"
    if "kind" in data:
        return "task"
    return "experiment"


def _cmd_validate(args) -> int:
    failures = 0
    for path in args.files:
        try:
            data = config.load_file(path)
            kind = _kind(data)
            if kind == "chain":
                load_chain(path)
            elif kind == "task":
                envs.task_from_dict(data, default_chain() if "goal" not in data else None)
            else:
                harness.load_config(path)
            print(f"{path}: ok ({kind})")
        except (config.ConfigError, ContractError) as exc:
            print(f"{exc}" if isinstance(exc, config.ConfigError) else f"{path}: {exc}", file=sys.stderr)
            failures += 1
    return 1 if failures else 0


COMMANDS = {"run": _cmd_run, "surface": _cmd_surface, "wmap": _cmd_wmap,
            "ik-check": _cmd_ik_check, "validate": _cmd_validate}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except config.ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ContractError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
