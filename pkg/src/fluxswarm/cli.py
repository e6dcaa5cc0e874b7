"""Command-line entry point: ``fluxswarm {train,evaluate,baseline,render,inspect}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import RunConfig, config_from_dict, load_config, save_config
from .exceptions import FluxSwarmError
from .logs import CSVLog
from .neural import load_checkpoint

log = logging.getLogger("fluxswarm")

SUMMARY_COLUMNS = ("episode", "length", "status", "norm_r_progress", "norm_r_energy", "norm_r_smooth")


def _add_config(p, required=False):
    p.add_argument("--config", type=Path, required=required, help="TOML run configuration")


def build_parser():
    parser = argparse.ArgumentParser(prog="fluxswarm", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the swarm policy")
    _add_config(p, required=True)
    p.add_argument("--no-pcgrad", action="store_true", help="sum objective gradients instead of PCGrad")
    p.add_argument("--resume", type=Path, help="checkpoint to continue from")
    p.add_argument("--run-name")
    p.add_argument("--output-dir")
    p.add_argument("--updates", type=int, help="stop after this many updates in total")

    p = sub.add_parser("evaluate", help="evaluate a trained actor")
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--episodes", type=int, required=True)
    p.add_argument("--deterministic", action="store_true", help="act with the policy mean")
    p.add_argument("--seed", type=int, default=0)
    _add_config(p)
    p.add_argument("--out", type=Path, help="episode summary CSV")

    p = sub.add_parser("baseline", help="evaluate a hand-written strategy")
    p.add_argument("--kind", choices=("upstream_max", "wall_hug"), required=True)
    p.add_argument("--episodes", type=int, required=True)
    _add_config(p)
    p.add_argument("--out", type=Path, help="episode summary CSV")

    p = sub.add_parser("render", help="render a field snapshot to PPM")
    p.add_argument("--snapshot", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("inspect", help="print checkpoint architecture and progress")
    p.add_argument("--checkpoint", type=Path, required=True)
    return parser


def _positive(n, name):
    if n < 1:
        raise FluxSwarmError(f"{name} must be at least 1")


def _report(result, out):
    rows = [(k, n, str(st), *norm) for k, (norm, n, st) in enumerate(result["episodes"])]
    print(",".join(SUMMARY_COLUMNS))
    for row in rows:
        print(",".join(str(v) for v in row))
    mean, std = result["mean"], result["std"]
    print(f"# mean progress={mean[0]:.4f} energy={mean[1]:.4f} smooth={mean[2]:.4f}  "
          f"std progress={std[0]:.4f} energy={std[1]:.4f} smooth={std[2]:.4f}")
    if out is not None:
        with CSVLog(out, SUMMARY_COLUMNS, append=False) as fh:
            for row in rows:
                fh.write(row)


def cmd_train(args):
    from .ppo import Trainer

    cfg = load_config(args.config)
    if args.no_pcgrad:
        cfg = cfg.replace("ppo", pcgrad_enabled=False)
    if args.run_name:
        cfg = cfg.replace("run", run_name=args.run_name)
    if args.output_dir:
        cfg = cfg.replace("run", output_dir=args.output_dir)
    cfg.validate()
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, run_dir / "config.toml")
    trainer = Trainer(cfg.env, cfg.ppo, run_dir, seed=cfg.run.seed, snapshot_every=cfg.run.snapshot_every,
                      config_dict=cfg.to_dict())
    if args.resume is not None:
        trainer.restore(args.resume)

    def progress(stats):
        log.info("update %d  step %d  value %.4g  entropy %.3f  clip %.3f", stats["update"],
                 stats["global_step"], stats["loss_value"], stats["entropy"], stats["clip_fraction"])

    trainer.run(args.updates, callback=progress)
    print(f"trained {trainer.update} updates ({trainer.global_step} environment steps) into {run_dir}")
    return 0


def _env_config(args, header=None):
    if args.config is not None:
        return load_config(args.config).env
    if header and header.get("config"):
        return config_from_dict(header["config"]).validate().env
    return RunConfig().env


def cmd_evaluate(args):
    from .ppo import evaluate, load_actor

    _positive(args.episodes, "--episodes")
    actor, header = load_actor(args.checkpoint)
    result = evaluate(actor, args.episodes, _env_config(args, header), args.deterministic, args.seed)
    _report(result, args.out)
    return 0


def cmd_baseline(args):
    from .ppo import evaluate

    _positive(args.episodes, "--episodes")
    result = evaluate(args.kind, args.episodes, _env_config(args))
    _report(result, args.out)
    return 0


def cmd_render(args):
    from .io import render_snapshot

    w, h = render_snapshot(args.snapshot, args.out)
    print(f"wrote {args.out} ({w}x{h})")
    return 0


def cmd_inspect(args):
    _, header = load_checkpoint(args.checkpoint)
    info = {"actor": header.get("actor_sizes"), "critic": header.get("critic_sizes"),
            "update": header.get("update"), "global_step": header.get("global_step"),
            "pcgrad": header.get("ppo", {}).get("pcgrad_enabled")}
    print(json.dumps(info))
    return 0


COMMANDS = {"train": cmd_train, "evaluate": cmd_evaluate, "baseline": cmd_baseline,
            "render": cmd_render, "inspect": cmd_inspect}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (FluxSwarmError, OSError, ValueError, KeyError) as exc:
        print(f"fluxswarm {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
