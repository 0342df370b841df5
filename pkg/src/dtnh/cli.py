"""Command-line entry point: ``dtnh <subcommand> ...``.

Exit codes: 0 success, 1 usage/configuration error, 2 data or parse error,
3 numeric failure during training.
"""

import argparse
import logging
from pathlib import Path
import sys

from . import config as config_mod
from .curves import export_curves
from .data import SHIFTS, FAMILIES, gen_synthetic, load_dataset
from .errors import ConfigurationError, DataError, DTNHError, FormatError, NumericError
from .pipeline import (
    CHECKPOINT_FILE,
    StageError,
    mean_std,
    prepare_data,
    run_pipeline,
    sweep,
    train_source,
    write_task,
)
from .trainer import evaluate, load_checkpoint

log = logging.getLogger("dtnh")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def _ints(text):
    return [int(t) for t in text.split(",") if t.strip()]


def _add_config_args(p):
    p.add_argument("config", help="config file, or a builtin name: hostile, related")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[],
                   metavar="SECTION.KEY=VALUE", help="override a config value")
    p.add_argument("--checkpoint", help="source checkpoint; skips source training")


def _load(args, extra=()):
    overrides = list(args.overrides) + list(extra)
    if getattr(args, "checkpoint", None):
        overrides.append(f"data.source_checkpoint={Path(args.checkpoint).resolve()}")
    return config_mod.load_config(args.config, overrides, output_dir=args.out)


def cmd_gen_data(args):
    task = gen_synthetic(args.family, args.shift, args.seed, rotation_deg=args.rotation,
                         n_target_train=args.n_target_train)
    paths = write_task(task, args.out)
    print(f"gen-data: {args.family}/{args.shift} seed={args.seed} -> "
          + ", ".join(f"{k}={len(v)}" for k, v in task.splits().items())
          + f" in {Path(args.out)}")
    return paths


def cmd_train_source(args):
    cfg = _load(args)
    task = prepare_data(cfg)
    out = Path(cfg.output_dir) / "source"
    result = train_source(cfg, task, out)
    print(f"train-source: {result.total_steps} steps, test_accuracy={result.test_accuracy:.4f}, "
          f"checkpoint={out / CHECKPOINT_FILE}")


def _extra_overrides(args):
    extra = []
    if args.seeds:
        extra.append(f"train.seeds={args.seeds}")
    if args.modes:
        extra.append(f"train.modes={args.modes}")
    if getattr(args, "lam", None) is not None:
        extra.append(f"regularizer.lambda={args.lam}")
    return extra


def cmd_transfer(args):
    cfg = _load(args, _extra_overrides(args))
    result = run_pipeline(cfg)
    parts = []
    for mode, (mean, std) in result.summary().items():
        parts.append(f"{mode}={mean:.4f}" + (f"±{std:.4f}" if std is not None else ""))
    print(f"transfer: {' '.join(parts)} summary={result.summary_path}")


def cmd_sweep(args):
    cfg = _load(args, _extra_overrides(args))
    rows, _ = sweep(cfg, _floats(args.lambdas), list(cfg.seeds), workers=args.workers)
    best = ", ".join(f"{r.mode}: lambda={r.lambda0:g} acc={r.mean_accuracy:.4f}"
                     for r in rows if r.best)
    print(f"sweep: {len(rows)} rows, best {best}; table={Path(cfg.output_dir) / 'sweep.csv'}")


def cmd_eval(args):
    spec, params = load_checkpoint(args.checkpoint)
    if args.data:
        stats = None
        if args.train_data:
            stats = load_dataset(args.train_data, args.format).channel_mean
        ds = load_dataset(args.data, args.format, input_shape=spec.input_shape,
                          num_classes=spec.num_classes, train_stats=stats)
    elif args.config:
        cfg = config_mod.load_config(args.config, args.overrides)
        ds = getattr(prepare_data(cfg), args.split)
    else:
        raise ConfigurationError("eval needs --data or --config")
    loss, acc = evaluate(spec, params, ds)
    print(f"eval: n={len(ds)} test_loss={loss!r} test_accuracy={acc!r}")


def cmd_export_curves(args):
    columns, rows = export_curves(args.metrics, args.which, args.out)
    print(f"export-curves: {len(rows)} rows of ({', '.join(columns)}) -> {args.out}")


def build_parser():
    parser = argparse.ArgumentParser(prog="dtnh", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic source/target task as CSV")
    p.add_argument("--family", choices=FAMILIES, default="gaussian-blobs")
    p.add_argument("--shift", choices=SHIFTS, default="hostile")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rotation", type=float, default=None, help="rotation in degrees")
    p.add_argument("--n-target-train", type=int, default=96)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train-source", help="train the source network")
    _add_config_args(p)
    p.set_defaults(func=cmd_train_source)

    for name, func, helptext in (
        ("transfer", cmd_transfer, "transfer from the source weights under each mode"),
        ("sweep", cmd_sweep, "grid over lambda and seeds"),
    ):
        p = sub.add_parser(name, help=helptext)
        _add_config_args(p)
        p.add_argument("--seeds", help="comma-separated seeds")
        p.add_argument("--modes", help="comma-separated subset of "
                       + ", ".join(config_mod.MODES))
        if name == "transfer":
            p.add_argument("--lambda", dest="lam", type=float)
        else:
            p.add_argument("--lambdas", required=True, help="comma-separated lambda grid")
            p.add_argument("--workers", type=int, default=1)
        p.set_defaults(func=func)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset file to evaluate on")
    p.add_argument("--train-data", help="training split whose means center --data")
    p.add_argument("--format", choices=("csv", "idx"), default="csv")
    p.add_argument("--config", help="evaluate on a split of this experiment instead")
    p.add_argument("--split", default="target_test",
                   choices=("source_train", "source_test", "target_train", "target_test"))
    p.add_argument("--set", dest="overrides", action="append", default=[])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-curves", help="extract plot-ready columns from metrics")
    p.add_argument("metrics")
    p.add_argument("--which", default="loss",
                   help="loss, angles13, angles24, or a comma-separated column list")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_curves)
    return parser


def _exit_code(exc):
    if isinstance(exc, StageError):
        log.error("%s", exc)
        exc = exc.cause
    else:
        log.error("%s", exc)
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, FormatError)):
        return EXIT_DATA
    return EXIT_USAGE


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except DTNHError as exc:
        return _exit_code(exc)
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
