"""Source training, transfer runs, seed/lambda sweeps and their summaries."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import csv
from pathlib import Path
import statistics

from . import data as data_mod
from .config import DTNH_REG, FINE_TUNING, VANILLA_REG
from .data import SyntheticTask, cap_per_class, gen_synthetic, load_dataset, normalized
from .errors import ConfigurationError, DTNHError
from .net import init_params
from .reg import NONE, RegularizerConfig
from .trainer import DTNH, VANILLA, NetworkObjective, load_checkpoint, save_checkpoint, train

METRICS_FILE = "metrics.csv"
CHECKPOINT_FILE = "checkpoint.dtnh"
SUMMARY_FILE = "summary.csv"
SWEEP_FILE = "sweep.csv"


class StageError(DTNHError):
    """A pipeline stage failed; ``cause`` holds the original exception."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage {stage!r} failed: {cause}")


def prepare_data(cfg):
    """Centered source/target splits; statistics come from each train split."""
    d = cfg.data
    if d.synthetic:
        raw = gen_synthetic(
            d.family, d.shift, d.data_seed,
            rotation_deg=d.rotation_deg,
            n_source_train=d.n_source_train,
            n_target_train=d.n_target_train,
            n_test=d.n_test,
            separation=d.separation,
        )
        src = normalized(raw.source_train)
        tgt = normalized(raw.target_train)
        task = SyntheticTask(
            source_train=src,
            source_test=normalized(raw.source_test, src.channel_mean),
            target_train=tgt,
            target_test=normalized(raw.target_test, tgt.channel_mean),
        )
    else:
        kw = {"input_shape": d.input_shape}
        src = load_dataset(d.paths["source_train"], d.format, **kw)
        tgt = load_dataset(d.paths["target_train"], d.format, **kw)
        task = SyntheticTask(
            source_train=src,
            source_test=load_dataset(d.paths["source_test"], d.format, **kw,
                                     num_classes=src.num_classes, train_stats=src.channel_mean),
            target_train=tgt,
            target_test=load_dataset(d.paths["target_test"], d.format, **kw,
                                     num_classes=tgt.num_classes, train_stats=tgt.channel_mean),
        )
    if d.per_class_cap is not None:
        task.target_train = cap_per_class(task.target_train, d.per_class_cap)
    for name, ds in task.splits().items():
        if ds.input_shape != cfg.network.input_shape:
            raise ConfigurationError(
                f"{name} samples have shape {ds.input_shape}, network expects "
                f"{cfg.network.input_shape}"
            )
        if ds.num_classes > cfg.network.num_classes:
            raise ConfigurationError(
                f"{name} has {ds.num_classes} classes, network outputs {cfg.network.num_classes}"
            )
    return task


def train_source(cfg, task, out_dir):
    """Train from scratch on the source split; writes metrics and checkpoint."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    objective = NetworkObjective(cfg.network, RegularizerConfig())
    result = train(
        objective,
        init_params(cfg.network, cfg.source_train.seed),
        task.source_train,
        replace(cfg.source_train, mode=VANILLA),
        test_dataset=task.source_test,
        metrics_path=out_dir / METRICS_FILE,
    )
    save_checkpoint(cfg.network, result.params, out_dir / CHECKPOINT_FILE)
    return result


def source_params(cfg, task, out_dir):
    """Load the configured source checkpoint or train one under ``out_dir/source``."""
    if cfg.data.source_checkpoint:
        try:
            _, params = load_checkpoint(cfg.data.source_checkpoint, expected_spec=cfg.network)
        except DTNHError as exc:
            raise StageError("load-source", exc) from exc
        return params
    try:
        return train_source(cfg, task, Path(out_dir) / "source").params
    except DTNHError as exc:
        raise StageError("train-source", exc) from exc


def regularizer_for(cfg, mode, ws):
    if mode == FINE_TUNING:
        return RegularizerConfig(NONE)
    return RegularizerConfig(cfg.reg_kind, cfg.lambda0, cfg.decay_ratio,
                             None if cfg.reg_kind in (NONE, "l2") else ws)


@dataclass
class RunRecord:
    mode: str
    seed: int
    lambda0: float
    test_accuracy: float
    test_loss: float
    obtuse_fraction: float
    metrics_path: Path


def transfer_run(cfg, task, ws, mode, seed, out_dir):
    """One transfer run initialized at the source weights."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    tcfg = replace(cfg.train, seed=seed, mode=DTNH if mode == DTNH_REG else VANILLA)
    try:
        result = train(
            NetworkObjective(cfg.network, regularizer_for(cfg, mode, ws)),
            ws,
            task.target_train,
            tcfg,
            test_dataset=task.target_test,
            metrics_path=out_dir / METRICS_FILE,
        )
        save_checkpoint(cfg.network, result.params, out_dir / CHECKPOINT_FILE)
    except DTNHError as exc:
        raise StageError(f"transfer/{mode}/seed-{seed}", exc) from exc
    return RunRecord(
        mode=mode,
        seed=seed,
        lambda0=0.0 if mode == FINE_TUNING else cfg.lambda0,
        test_accuracy=result.test_accuracy,
        test_loss=result.test_loss,
        obtuse_fraction=result.obtuse_steps / result.total_steps,
        metrics_path=out_dir / METRICS_FILE,
    )


def mean_std(values):
    """Mean and sample standard deviation (``None`` for fewer than two values)."""
    values = list(values)
    mean = statistics.fmean(values)
    std = statistics.stdev(values) if len(values) > 1 else None
    return mean, std


@dataclass
class PipelineResult:
    runs: list = field(default_factory=list)
    summary_path: Path = None

    def accuracies(self, mode):
        return [r.test_accuracy for r in self.runs if r.mode == mode]

    def summary(self):
        out = {}
        for mode in dict.fromkeys(r.mode for r in self.runs):
            out[mode] = mean_std(self.accuracies(mode))
        return out


def _fmt(x):
    return "NA" if x is None else repr(float(x))


def write_summary(runs, path):
    modes = list(dict.fromkeys(r.mode for r in runs))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "lambda0", "n_seeds", "mean_test_accuracy",
                    "std_test_accuracy", "seeds", "final_accuracies"])
        for mode in modes:
            rs = [r for r in runs if r.mode == mode]
            mean, std = mean_std(r.test_accuracy for r in rs)
            w.writerow([mode, _fmt(rs[0].lambda0), len(rs), _fmt(mean), _fmt(std),
                        ";".join(str(r.seed) for r in rs),
                        ";".join(_fmt(r.test_accuracy) for r in rs)])


def run_pipeline(cfg, task=None, ws=None):
    """Source stage (unless a checkpoint is given), then every mode x seed."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if task is None:
        try:
            task = prepare_data(cfg)
        except DTNHError as exc:
            raise StageError("prepare-data", exc) from exc
    if ws is None:
        ws = source_params(cfg, task, out)
    result = PipelineResult()
    for mode in cfg.modes:
        for seed in cfg.seeds:
            result.runs.append(transfer_run(cfg, task, ws, mode, seed, out / mode / f"seed-{seed}"))
    result.summary_path = out / SUMMARY_FILE
    write_summary(result.runs, result.summary_path)
    return result


def _lambda_dir(lam):
    return f"lambda-{lam!r}"


def _sweep_cell(args):
    cfg, task, ws, lam, seed, modes = args
    cell = cfg.with_lambda(lam)
    cell = replace(cell, seeds=(seed,), modes=modes,
                   output_dir=Path(cfg.output_dir) / _lambda_dir(lam) / f"seed-{seed}")
    return run_pipeline(cell, task=task, ws=ws).runs


@dataclass
class SweepRow:
    mode: str
    lambda0: float
    mean_accuracy: float
    std_accuracy: float | None
    n_seeds: int
    best: bool = False


def mark_best(rows):
    """Flag the highest-mean row per mode; ties go to the smaller lambda."""
    for mode in dict.fromkeys(r.mode for r in rows):
        group = [r for r in rows if r.mode == mode]
        best = min(group, key=lambda r: (-r.mean_accuracy, r.lambda0))
        best.best = True
    return rows


def sweep(cfg, lambda_grid, seed_list, workers=1, task=None, ws=None):
    """Pipeline per (lambda, seed); one summary row per (mode, lambda)."""
    lambda_grid = [float(l) for l in lambda_grid]
    seed_list = [int(s) for s in seed_list]
    if not lambda_grid or not seed_list:
        raise ConfigurationError("sweep needs at least one lambda and one seed")
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if task is None:
        try:
            task = prepare_data(cfg)
        except DTNHError as exc:
            raise StageError("prepare-data", exc) from exc
    if ws is None:
        ws = source_params(cfg, task, out)
    reg_modes = tuple(m for m in cfg.modes if m != FINE_TUNING)
    cells = [(cfg, task, ws, lam, seed, reg_modes) for lam in lambda_grid for seed in seed_list]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(c) for c in cells]
    runs = [r for cell in results for r in cell]
    rows = []
    for mode in reg_modes:
        for lam in lambda_grid:
            accs = [r.test_accuracy for r in runs if r.mode == mode and r.lambda0 == lam]
            mean, std = mean_std(accs)
            rows.append(SweepRow(mode, lam, mean, std, len(accs)))
    mark_best(rows)
    write_sweep_table(rows, out / SWEEP_FILE)
    return rows, runs


def write_sweep_table(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["mode", "lambda0", "n_seeds", "mean_test_accuracy", "std_test_accuracy", "best"])
        for r in rows:
            w.writerow([r.mode, _fmt(r.lambda0), r.n_seeds, _fmt(r.mean_accuracy),
                        _fmt(r.std_accuracy), int(r.best)])


def write_task(task, out_dir):
    """Write every split of ``task`` as CSV under ``out_dir``; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, ds in task.splits().items():
        paths[name] = out_dir / f"{name}.csv"
        data_mod.write_csv_dataset(ds, paths[name])
    return paths
