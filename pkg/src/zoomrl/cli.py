"""Command-line interface.

Subcommands: gen-data, train, eval, sweep, replay, compare, config.
Flags override config-file keys. Exit codes: 0 success, 2 config error,
3 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import RunConfig, apply_overrides, dump_toml, load_toml
from .errors import ConfigInvalid, MalformedRecord, NotFound, ZoomRLError


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML config file (defaults used if omitted)")
    p.add_argument("--mode", choices=["multiturn", "singleturn"])
    p.add_argument("--seed", type=int)
    p.add_argument("--max-pixels", type=int, dest="max_pixels")
    p.add_argument("--iters", type=int)
    p.add_argument("--out", help="output directory override")


def _load_cfg(args) -> RunConfig:
    cfg = load_toml(args.config) if args.config else RunConfig()
    cfg = apply_overrides(
        cfg,
        mode=getattr(args, "mode", None),
        seed=getattr(args, "seed", None),
        max_pixels=getattr(args, "max_pixels", None),
        iters=getattr(args, "iters", None),
        out=getattr(args, "out", None),
    )
    cfg.validate()
    return cfg


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zoomrl",
        description="Crop-and-zoom visual-search RL at desk scale",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a dataset directory")
    _add_common(p)
    p.add_argument("--split", choices=["train", "eval_id", "eval_ood"], default="train")
    p.add_argument("--count", type=int, default=100, help="number of tasks")
    p.add_argument("--start", type=int, default=0, help="first task index")

    p = sub.add_parser("train", help="run RL training")
    _add_common(p)
    p.add_argument("--resume", help="checkpoint to resume from")

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("checkpoint")
    p.add_argument("--set", choices=["id", "ood"], default="ood", dest="eval_set")

    p = sub.add_parser("sweep", help="train across pixel budgets and modes")
    _add_common(p)
    p.add_argument("--budgets", type=int, nargs="+")

    p = sub.add_parser("replay", help="replay one task from a checkpoint")
    _add_common(p)
    p.add_argument("checkpoint")
    p.add_argument("task_id")
    p.add_argument("--data", required=True, help="dataset directory")

    p = sub.add_parser("compare", help="compare two run directories")
    _add_common(p)
    p.add_argument("run_a")
    p.add_argument("run_b")

    p = sub.add_parser("config", help="configuration utilities")
    _add_common(p)
    p.add_argument("--dump", action="store_true", help="print effective TOML")

    return parser


def _cmd_gen_data(args) -> int:
    from .taskgen import gen_count_task, gen_needle_task, save_dataset
    from .taskgen import QuestionKind

    cfg = _load_cfg(args)
    env = {
        "train": cfg.env_train,
        "eval_id": cfg.env_eval_id,
        "eval_ood": cfg.env_eval_ood,
    }[args.split]
    gen = (
        gen_needle_task
        if cfg.task_kind is QuestionKind.NEEDLE_CHOICE
        else gen_count_task
    )
    tasks = [gen(env, i) for i in range(args.start, args.start + args.count)]
    out = Path(cfg.output_dir) / f"dataset_{args.split}"
    save_dataset(tasks, out)
    print(f"wrote {len(tasks)} tasks to {out}")
    return 0


def _cmd_train(args) -> int:
    from .trainer import train

    cfg = _load_cfg(args)
    result = train(cfg, resume_from=args.resume)
    final = result.metrics[-1] if result.metrics else None
    if final is not None:
        print(
            f"done: {result.output_dir} "
            f"(eval id {final.eval_id_accuracy} ood {final.eval_ood_accuracy})"
        )
    from .plots import training_curve_figure

    training_curve_figure(result.metrics, result.output_dir / "training.png")
    return 0


def _cmd_eval(args) -> int:
    from .policy import params_from_jsonable
    from .trainer import TaskSource, build_run_cfg, evaluate, load_checkpoint
    from .config import from_dict

    payload = load_checkpoint(args.checkpoint)
    cfg = _load_cfg(args) if args.config else from_dict(payload["config"])
    cfg = apply_overrides(
        cfg,
        mode=args.mode,
        seed=args.seed,
        max_pixels=args.max_pixels,
        iters=None,
        out=args.out,
    )
    params = params_from_jsonable(payload["policy"])
    run_cfg, spec = build_run_cfg(cfg)
    if params.spec != spec:
        raise ConfigInvalid("checkpoint policy shape differs from config")
    env = cfg.env_eval_id if args.eval_set == "id" else cfg.env_eval_ood
    source = TaskSource(env, cfg.task_kind, cfg.imaging, raster_cache_mb=64)
    result = evaluate(params, source, cfg.eval_set_size, cfg.mode, run_cfg)
    print(
        json.dumps(
            {
                "set": args.eval_set,
                "accuracy": result.accuracy,
                "valid_ground_ratio": result.valid_ground_ratio,
                "crop_answerable_ratio": result.crop_answerable_ratio,
            }
        )
    )
    return 0


def _cmd_sweep(args) -> int:
    from .trainer import sweep_max_pixels

    cfg = _load_cfg(args)
    rows = sweep_max_pixels(cfg, budgets=args.budgets)
    for row in rows:
        print(json.dumps(row))
    return 0


def _cmd_replay(args) -> int:
    from .rollout import Mode
    from .trainer import replay

    mode = Mode(args.mode) if args.mode else None
    out = Path(args.out) if args.out else Path("replay") / args.task_id
    dest = replay(args.checkpoint, args.data, args.task_id, out, mode=mode)
    print(f"replay written to {dest}")
    return 0


def _cmd_compare(args) -> int:
    from .trainer import compare_runs

    out = Path(args.out) if args.out else None
    summary = compare_runs(args.run_a, args.run_b, out_dir=out)
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_config(args) -> int:
    cfg = _load_cfg(args)
    if args.dump:
        print(dump_toml(cfg))
    else:
        print("config OK")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
    "replay": _cmd_replay,
    "compare": _cmd_compare,
    "config": _cmd_config,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigInvalid as e:
        print(f"config error: {e}", file=sys.stderr)
        return 2
    except (NotFound, MalformedRecord, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 3
    except ZoomRLError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
