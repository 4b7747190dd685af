"""Command-line entry point: ``train``, ``eval``, ``ablate`` and ``plot``.

Exit codes: 0 on success, 1 on a configuration or input error, 2 when a
trainer aborts.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from ..algos.fopg import TrainerAbort
from ..diffcore.checkpoint import CheckpointError
from .config import ConfigError
from .metrics import SchemaError

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2


def _train(args) -> int:
    from .run import run_file
    r = run_file(args.config, output_dir=args.output)
    print(f"done: {r.output_dir} iterations={r.iterations} env_steps={r.env_steps} "
          f"{r.report.summary()}")
    return EXIT_OK


def _eval(args) -> int:
    from .benchmark import load_benchmark
    from .evaluate import evaluate
    from .run import load_checkpoint
    cfg = None
    if args.config:
        from .config import load
        cfg = load(args.config)
    policy, norm, cfg = load_checkpoint(args.checkpoint, cfg)
    ecfg = cfg.eval
    if args.scenes:
        ecfg = replace(ecfg, scenes_dir=args.scenes)
    scenes = load_benchmark(ecfg.scenes_dir or None)
    levels = tuple(args.noise) if args.noise else ecfg.noise_levels
    rep = evaluate(policy, norm, cfg.nav, ecfg, episodes=args.episodes, noise_levels=levels,
                   scenes=scenes)
    print(rep.summary())
    return EXIT_OK


def _ablate(args) -> int:
    from .ablate import ablate, format_table, load_matrix
    m = load_matrix(args.matrix)
    results, table, svg = ablate(m)
    print(format_table(table))
    print(f"curves: {svg}")
    return EXIT_OK


def _plot(args) -> int:
    from .plot import plot
    out = plot(args.csv, args.output, y=args.y, title=args.title or "", log_x=args.log_x)
    print(out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fopgnav", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train from a TOML config")
    t.add_argument("config")
    t.add_argument("-o", "--output", help="override the config's output_dir")
    t.set_defaults(func=_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--noise", type=float, action="append",
                   help="depth noise sigma in meters (repeatable)")
    e.add_argument("--episodes", type=int, default=None)
    e.add_argument("--scenes", help="directory of scene files")
    e.add_argument("--config", help="config to use instead of the one beside the checkpoint")
    e.set_defaults(func=_eval)

    a = sub.add_parser("ablate", help="run an ablation matrix")
    a.add_argument("matrix")
    a.set_defaults(func=_ablate)

    pl = sub.add_parser("plot", help="learning curves from metrics CSVs")
    pl.add_argument("csv", nargs="+")
    pl.add_argument("-o", "--output", required=True)
    pl.add_argument("--y", default=None, help="column to plot")
    pl.add_argument("--title", default="")
    pl.add_argument("--log-x", action="store_true")
    pl.set_defaults(func=_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except TrainerAbort as e:
        print(f"trainer aborted: {e}", file=sys.stderr)
        return EXIT_ABORT
    except (ConfigError, CheckpointError, SchemaError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
