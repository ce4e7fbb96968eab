"""Command-line interface.

Subcommands: sample, sweep, train, toy, check.  Each accepts --config plus
a few overrides; without --config the packaged tree-mixture defaults apply.
Exit codes: 0 success, 1 configuration error, 2 numeric failure, 3
check-suite failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from ..errors import ConfigError, FlowLabError, NumericError, TrainingDivergedError
from ..mixture import load_mixture
from ..mlp import save_checkpoint, train
from .checks import all_passed, run_checks
from .config import ExperimentConfig, apply_overrides, dump_config, load_config
from .panels import emit_toy_panels
from .runner import (
    promote_best,
    run_sample,
    run_sweep,
    write_samples_csv,
    write_trajectories,
)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_CHECKS = 3


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", type=str, default=None, help="TOML experiment config")
    sub.add_argument("--alpha", type=float, default=None, help="override guidance alpha")
    sub.add_argument("--beta", type=float, default=None, help="override guidance beta")
    sub.add_argument("--omega", type=float, default=None, help="override CFG omega")
    sub.add_argument("--steps", type=int, default=None, help="override step count")
    sub.add_argument("--seed", type=int, default=None, help="override seed")
    sub.add_argument("--out", type=str, default=None, help="override output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in (
        ("sample", "draw guided samples and write samples.csv"),
        ("sweep", "grid-sweep guidance settings and write sweep.csv"),
        ("train", "train the velocity network and write a checkpoint"),
        ("toy", "render the 2D toy panels as SVG"),
        ("check", "run the invariant battery"),
    ):
        p = sub.add_parser(name, help=doc)
        _add_common(p)
        if name == "toy":
            p.add_argument("--step", type=int, default=None, help="field-panel step index")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    return apply_overrides(
        cfg,
        alpha=args.alpha,
        beta=args.beta,
        omega=args.omega,
        steps=args.steps,
        seed=args.seed,
        out=args.out,
    )


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(cfg, out / "config.toml")
    return out


def _cmd_sample(cfg: ExperimentConfig) -> int:
    out = _outdir(cfg)
    keep = cfg.save_trajectories > 0
    samples, record = run_sample(cfg, keep_trajectories=keep)
    with open(out / "samples.csv", "w") as f:
        write_samples_csv(f, samples)
    if keep:
        write_trajectories(out, record, cfg.save_trajectories)
    print(f"wrote {len(samples)} samples to {out / 'samples.csv'}")
    return EXIT_OK


def _cmd_sweep(cfg: ExperimentConfig) -> int:
    out = _outdir(cfg)
    result = run_sweep(cfg)
    with open(out / "sweep.csv", "w") as f:
        result.write_csv(f)
    print(f"wrote {len(result.rows)} sweep rows to {out / 'sweep.csv'}")
    failed = [r for r in result.rows if r.report is None]
    for row in failed:
        print(f"  cell alpha={row.alpha} beta={row.beta} failed: {row.error}")
    if cfg.promote_top > 0:
        promoted = promote_best(cfg, result)
        with open(out / "promoted.csv", "w") as f:
            promoted.write_csv(f)
        print(f"re-evaluated top {len(promoted.rows)} cells into {out / 'promoted.csv'}")
    return EXIT_OK


def _cmd_train(cfg: ExperimentConfig) -> int:
    out = _outdir(cfg)
    mixture = load_mixture(cfg.mixture_path())
    params, ema_params, curve = train(mixture, cfg.train)
    meta = {"train": cfg.train.to_dict(), "mixture": str(cfg.mixture_path())}
    save_checkpoint(out / "checkpoint.npz", params, meta)
    save_checkpoint(out / "checkpoint_ema.npz", ema_params, meta)
    with open(out / "loss_curve.csv", "w") as f:
        f.write("step,loss\n")
        for i, val in enumerate(curve):
            f.write(f"{i},{format(val, '.17g')}\n")
    final = curve[-1] if curve.size else float("nan")
    print(f"trained {cfg.train.steps} steps (final loss {final:.5f}); wrote {out / 'checkpoint.npz'}")
    return EXIT_OK


def _cmd_toy(cfg: ExperimentConfig, step: int | None) -> int:
    paths = emit_toy_panels(cfg, step_index=step)
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def _cmd_check(cfg: ExperimentConfig) -> int:
    results = run_checks(cfg)
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    if all_passed(results):
        print(f"all {len(results)} checks passed")
        return EXIT_OK
    print("check suite failed")
    return EXIT_CHECKS


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
        if args.command == "sample":
            return _cmd_sample(cfg)
        if args.command == "sweep":
            return _cmd_sweep(cfg)
        if args.command == "train":
            return _cmd_train(cfg)
        if args.command == "toy":
            return _cmd_toy(cfg, args.step)
        return _cmd_check(cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, TrainingDivergedError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except FlowLabError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
