"""Command line entry point: ``semdrive train | eval | sweep | replay | defaults``.

Exit codes: 0 success, 1 configuration/validation error, 2 runtime error,
3 trace integrity failure.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

from . import config as config_mod
from . import evaluation, harness, mlp
from .config import ConfigError, RunConfig
from .state import Encoder

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME, EXIT_INTEGRITY = 0, 1, 2, 3

log = logging.getLogger("semdrive")


def _load_config(args) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"harness.seed={args.seed}")
    if getattr(args, "out_dir", None):
        overrides.append(f"out_dir={args.out_dir}")
    if args.config:
        return config_mod.load(args.config, overrides)
    data: dict = {"scenario": {"highway": {}, "merging": {}}}
    for item in overrides:
        config_mod.apply_override(data, item)
    cfg = config_mod.from_dict(data)
    env_out = os.environ.get("SEMDRIVE_OUT_DIR")
    if env_out and not getattr(args, "out_dir", None):
        cfg.out_dir = env_out
    return cfg


def cmd_train(args) -> int:
    cfg = _load_config(args)
    os.makedirs(cfg.out_dir, exist_ok=True)
    with open(os.path.join(cfg.out_dir, "config.yaml"), "w") as fh:
        fh.write(config_mod.dump(cfg))
    state = harness.train(cfg, resume_from=args.resume)
    print(
        f"trained {state.global_step} steps, {state.episodes} episodes, "
        f"{state.agent.stats.updates} updates, {state.agent.stats.syncs} target syncs -> {cfg.out_dir}"
    )
    return EXIT_OK


def _checkpoint_params(args, cfg: RunConfig):
    params, meta = mlp.load_checkpoint(args.checkpoint)
    dim = Encoder(cfg.encoder).dim
    if params.input_dim != dim:
        raise ConfigError(
            f"checkpoint input_dim {params.input_dim} does not match encoder input_dim {dim}", "encoder"
        )
    return params


def _warn_theta(cfg: RunConfig, scenario: str, theta_v: float | None) -> None:
    if theta_v is None:
        return
    sc = cfg.scenario[scenario]
    if not sc.theta_v_min <= theta_v <= sc.theta_v_max:
        msg = (
            f"theta_v={theta_v} outside the {scenario} training range "
            f"[{sc.theta_v_min:.2f}, {sc.theta_v_max:.2f}] m/s; running anyway"
        )
        print(f"warning: {msg}", file=sys.stderr)


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    params = _checkpoint_params(args, cfg)
    _warn_theta(cfg, args.scenario, args.theta_v)
    report, records = evaluation.evaluate(
        params, cfg, args.scenario, args.runs, args.theta_v, cfg.harness.seed, args.empty
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    stem = os.path.join(cfg.out_dir, f"eval_{args.scenario}")
    evaluation.write_report(report, stem + ".json", stem + ".csv")
    evaluation.write_trace(records, stem + "_trace.jsonl")
    print(f"scenario {report.scenario}  runs {report.runs}")
    print(f"collision rate       {report.collision_rate:.2f} %")
    marker = " (no collision)" if report.no_collision else ""
    print(f"avg distance         {report.avg_distance_between_collisions:.2f} km{marker}")
    print(f"rule violations      {report.rule_violation_ratio:.2f} %")
    print("lane distribution    " + "  ".join(f"{k}: {v:.2f} %" for k, v in report.lane_distribution.items()))
    print(f"avg speed            {report.avg_speed:.2f} m/s")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load_config(args)
    params = _checkpoint_params(args, cfg)
    thetas = [float(x) for x in args.thetas.split(",")]
    for tv in thetas:
        _warn_theta(cfg, args.scenario, tv)
    table = {args.scenario: evaluation.speed_sweep(params, cfg, args.scenario, thetas, False, args.runs, cfg.harness.seed)}
    if args.empty:
        table["empty"] = evaluation.speed_sweep(params, cfg, args.scenario, thetas, True, args.runs, cfg.harness.seed)
    os.makedirs(cfg.out_dir, exist_ok=True)
    path = os.path.join(cfg.out_dir, f"sweep_{args.scenario}.csv")
    evaluation.write_sweep(table, path)
    with open(path) as fh:
        print(fh.read(), end="")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        records = evaluation.read_trace(args.trace)
        encoder_cfg = _load_config(args).encoder if args.config else None
        result = evaluation.replay(records, encoder_cfg)
    except (evaluation.TraceError, KeyError, TypeError) as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    for w in result.warnings:
        print(f"warning: config mismatch: {w}", file=sys.stderr)
    if args.steps:
        print(f"{'run':>4} {'t':>4} {'act':>3} {'lane':>4} {'s':>9} {'v':>7} {'reward':>8} class")
        for r in records:
            if r["type"] == "step":
                print(
                    f"{r['run']:>4} {r['t']:>4} {r['action']:>3} {r['lane']:>4} {r['s']:>9.2f} "
                    f"{r['v']:>7.2f} {r['reward']:>8.3f} {r['class']}"
                )
    if not result.matches:
        print("integrity error: metrics mismatch", file=sys.stderr)
        return EXIT_INTEGRITY
    print("metrics match")
    return EXIT_OK


def cmd_defaults(args) -> int:
    print(config_mod.describe_defaults())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="semdrive", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("--print-defaults", action="store_true", help="print every default with its source")
    sub = p.add_subparsers(dest="command")

    def common(sp, out=True):
        sp.add_argument("--config", help="YAML run configuration")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config value")
        sp.add_argument("--seed", type=int)
        if out:
            sp.add_argument("--out-dir")

    t = sub.add_parser("train", help="train an agent")
    common(t)
    t.add_argument("--resume", help="run_state.pkl to continue from")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    common(e)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scenario", default="highway", choices=["highway", "merging"])
    e.add_argument("--runs", type=int, default=100)
    e.add_argument("--theta-v", type=float)
    e.add_argument("--empty", action="store_true", help="no background traffic")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("sweep", help="average speed over a list of desired speeds")
    common(s)
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--scenario", default="highway", choices=["highway", "merging"])
    s.add_argument("--runs", type=int, default=100)
    s.add_argument("--thetas", default="12,17,22,25,30")
    s.add_argument("--empty", action="store_true", help="add an empty-road column")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("replay", help="recompute metrics from a trace and verify its report")
    common(r, out=False)
    r.add_argument("trace")
    r.add_argument("--steps", action="store_true", help="print the per-step table")
    r.set_defaults(func=cmd_replay)

    d = sub.add_parser("defaults", help="print defaults with their sources")
    d.set_defaults(func=cmd_defaults)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.print_defaults:
        return cmd_defaults(args)
    if args.command is None:
        parser.print_help()
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except KeyboardInterrupt:
        print("interrupted; last checkpoint left in place", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
