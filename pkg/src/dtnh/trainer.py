"""SGD-with-momentum training loop around the direction estimator."""

from dataclasses import dataclass, field, fields
import csv
import json
import math
import struct

import numpy as np

from . import direction
from .batch import MiniBatch
from .errors import ConfigurationError, DataError, FormatError, ParseError, TrainingDivergedError
from .net import NetworkSpec, empirical_loss_and_grad, forward, softmax_cross_entropy
from .reg import lambda_at_epoch, reg_value_and_grad
from .tensor import as_flat

VANILLA = "vanilla"
DTNH = "dtnh"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 48
    momentum: float = 0.9
    lr0: float = 0.01
    lr_drop_iters: int = 6000
    lr_drop_factor: float = 0.1
    total_iters: int = 8000
    seed: int = 0
    mode: str = DTNH
    eval_every: int = 100
    log_every: int = 10

    def __post_init__(self):
        if self.mode not in (VANILLA, DTNH):
            raise ConfigurationError(f"mode must be 'vanilla' or 'dtnh', got {self.mode!r}")
        for name in ("batch_size", "lr_drop_iters", "total_iters", "eval_every", "log_every"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be a positive integer")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not (self.lr0 > 0.0 and self.lr_drop_factor > 0.0):
            raise ConfigurationError("lr0 and lr_drop_factor must be positive")


def learning_rate(config, iteration):
    # dividing by the reciprocal keeps 0.01 -> 0.001 exact for factor 0.1
    drops = iteration // config.lr_drop_iters
    if drops == 0:
        return config.lr0
    return config.lr0 / (1.0 / config.lr_drop_factor) ** drops


@dataclass
class MetricsRow:
    iteration: int
    epoch: int
    empirical_loss: float
    reg_value: float
    lambda_effective: float
    train_total_loss: float
    test_loss: float | None
    test_accuracy: float | None
    angle1: float | None
    angle2: float | None
    angle3: float | None
    angle4: float | None
    branch: str
    norm_gJ: float
    norm_gOmega: float


METRICS_COLUMNS = tuple(f.name for f in fields(MetricsRow))
_INT_COLUMNS = {"iteration", "epoch"}
_STR_COLUMNS = {"branch"}
NA = "NA"


def _format_cell(value):
    if value is None:
        return NA
    if isinstance(value, float):
        return repr(value)
    return str(value)


class MetricsWriter:
    """Append-only CSV sink: header first, one row per logged step."""

    def __init__(self, path):
        self._fh = open(path, "w", newline="")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(METRICS_COLUMNS)

    def write(self, row):
        self._writer.writerow([_format_cell(getattr(row, c)) for c in METRICS_COLUMNS])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _parse_cell(column, text):
    if text == NA:
        return None
    if column in _INT_COLUMNS:
        return int(text)
    if column in _STR_COLUMNS:
        return text
    return float(text)


def read_metrics(path):
    """Parse a metrics CSV into a list of dicts; ``NA`` becomes ``None``."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty metrics file", path=path, position=1) from None
        rows = []
        for lineno, record in enumerate(reader, start=2):
            if len(record) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(record)}",
                    path=path,
                    position=lineno,
                )
            try:
                rows.append({c: _parse_cell(c, v) for c, v in zip(header, record)})
            except ValueError as exc:
                raise ParseError(str(exc), path=path, position=lineno) from None
    return header, rows


class EpochSampler:
    """Shuffled-epoch mini-batches: each sample appears once per epoch."""

    def __init__(self, dataset, batch_size, seed):
        if len(dataset) == 0:
            raise DataError("cannot sample from an empty dataset")
        self.dataset = dataset
        self.batch_size = int(batch_size)
        self._rng = np.random.default_rng(seed)
        self._order = None
        self._pos = 0
        self.epoch = -1

    def next_indices(self):
        if self._order is None or self._pos >= len(self._order):
            self._order = self._rng.permutation(len(self.dataset))
            self._pos = 0
            self.epoch += 1
        idx = self._order[self._pos : self._pos + self.batch_size]
        self._pos += len(idx)
        return idx

    def next(self):
        """Next batch; ``self.epoch`` is the epoch that batch belongs to."""
        return self.dataset.batch(self.next_indices())


class NetworkObjective:
    """Empirical loss and regularizer of a network on a mini-batch."""

    def __init__(self, spec, reg):
        self.spec = spec
        self.reg = reg

    def empirical(self, params, batch):
        return empirical_loss_and_grad(self.spec, params, batch)

    def regularizer(self, params, batch):
        return reg_value_and_grad(self.reg, self.spec, params, batch)

    def lam(self, epoch):
        return lambda_at_epoch(self.reg, epoch)


@dataclass
class TrainState:
    params: np.ndarray
    velocity: np.ndarray = None
    iteration: int = 0

    def __post_init__(self):
        self.params = as_flat(self.params).copy()
        if self.velocity is None:
            self.velocity = np.zeros_like(self.params)


def train_step(state, batch, objective, config, epoch=0):
    """One update; returns the new state and the step's metrics row.

    Both gradients are taken on the same ``batch``.  The direction feeds the
    velocity (``v <- mu*v + d``) and parameters move by ``-lr*v``.
    """
    J, gJ = objective.empirical(state.params, batch)
    omega, gOmega = objective.regularizer(state.params, batch)
    lam = objective.lam(epoch)
    if not (math.isfinite(J) and math.isfinite(omega)):
        raise TrainingDivergedError(
            state.iteration, J, float(np.linalg.norm(gJ)), float(np.linalg.norm(gOmega))
        )
    try:
        if config.mode == DTNH:
            res = direction.estimate_direction(gJ, gOmega, lam)
        else:
            res = direction.vanilla_direction(gJ, gOmega, lam)
    except ArithmeticError:
        raise TrainingDivergedError(
            state.iteration, J, float(np.linalg.norm(gJ)), float(np.linalg.norm(gOmega))
        ) from None
    lr = learning_rate(config, state.iteration)
    velocity = config.momentum * state.velocity + res.d_hat
    params = state.params - lr * velocity
    row = MetricsRow(
        iteration=state.iteration + 1,
        epoch=epoch,
        empirical_loss=J,
        reg_value=omega,
        lambda_effective=lam,
        train_total_loss=J + lam * omega,
        test_loss=None,
        test_accuracy=None,
        angle1=res.angle1,
        angle2=res.angle2,
        angle3=res.angle3,
        angle4=res.angle4,
        branch=res.branch,
        norm_gJ=res.norm_gJ,
        norm_gOmega=res.norm_gOmega,
    )
    return TrainState(params, velocity, state.iteration + 1), row


def evaluate(spec, params, test_dataset, chunk=4096):
    """Mean cross-entropy and top-1 accuracy; argmax ties go to the lower class."""
    n = len(test_dataset)
    if n == 0:
        raise DataError("empty test set")
    loss_sum = 0.0
    correct = 0
    for start in range(0, n, chunk):
        x = test_dataset.inputs[start : start + chunk]
        y = test_dataset.labels[start : start + chunk]
        logits = forward(spec, params, x).logits
        loss, _ = softmax_cross_entropy(logits, y)
        loss_sum += loss * len(y)
        correct += int(np.sum(np.argmax(logits, axis=1) == y))
    return loss_sum / n, correct / n


@dataclass
class TrainResult:
    params: np.ndarray
    rows: list = field(repr=False)
    test_loss: float | None = None
    test_accuracy: float | None = None
    obtuse_steps: int = 0
    total_steps: int = 0


def train(objective, params, dataset, config, test_dataset=None, metrics_path=None,
          spec=None):
    """Run ``config.total_iters`` steps; returns the final state and logged rows.

    Evaluation needs ``spec`` (or a :class:`NetworkObjective`) and a test set.
    """
    if spec is None:
        spec = getattr(objective, "spec", None)
    sampler = EpochSampler(dataset, config.batch_size, config.seed)
    state = TrainState(params)
    writer = MetricsWriter(metrics_path) if metrics_path is not None else None
    rows = []
    result = TrainResult(params=None, rows=rows)
    try:
        for _ in range(config.total_iters):
            batch = sampler.next()
            state, row = train_step(state, batch, objective, config, sampler.epoch)
            result.total_steps += 1
            result.obtuse_steps += row.branch == direction.OBTUSE
            last = state.iteration == config.total_iters
            if test_dataset is not None and spec is not None and (
                state.iteration % config.eval_every == 0 or last
            ):
                row.test_loss, row.test_accuracy = evaluate(spec, state.params, test_dataset)
                result.test_loss, result.test_accuracy = row.test_loss, row.test_accuracy
            if state.iteration % config.log_every == 0 or last or row.test_loss is not None:
                rows.append(row)
                if writer is not None:
                    writer.write(row)
    finally:
        if writer is not None:
            writer.close()
    result.params = state.params
    return result


MAGIC = b"DTNH"
VERSION = 1


def save_checkpoint(spec, params, path):
    """Write ``magic | u32 version | u32 len + spec json | u64 d | d x f64``, little-endian."""
    params = as_flat(params)
    if params.shape[0] != spec.param_count:
        raise ConfigurationError(
            f"parameter vector has length {params.shape[0]}, spec expects {spec.param_count}"
        )
    blob = json.dumps(spec.to_dict(), sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", params.shape[0]))
        fh.write(params.astype("<f8").tobytes())


def load_checkpoint(path, expected_spec=None):
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 4 or data[:4] != MAGIC:
        raise FormatError("magic", f"expected {MAGIC!r}, got {data[:4]!r}")
    pos = 4
    if len(data) < pos + 4:
        raise FormatError("version", "file truncated")
    (version,) = struct.unpack_from("<I", data, pos)
    if version != VERSION:
        raise FormatError("version", f"unsupported version {version}")
    pos += 4
    if len(data) < pos + 4:
        raise FormatError("layers", "file truncated before layer list length")
    (n,) = struct.unpack_from("<I", data, pos)
    pos += 4
    if len(data) < pos + n:
        raise FormatError("layers", "file truncated inside layer list")
    try:
        spec = NetworkSpec.from_dict(json.loads(data[pos : pos + n]))
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError("layers", f"unreadable layer list ({exc})") from None
    pos += n
    if len(data) < pos + 8:
        raise FormatError("length", "file truncated before parameter count")
    (d,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    if d != spec.param_count:
        raise FormatError("length", f"stored d={d} but layer list implies {spec.param_count}")
    if len(data) - pos != 8 * d:
        raise FormatError(
            "params", f"expected {8 * d} payload bytes, found {len(data) - pos}"
        )
    params = np.frombuffer(data, dtype="<f8", count=d, offset=pos).astype(np.float64)
    if expected_spec is not None and expected_spec.param_count != d:
        raise FormatError(
            "length",
            f"checkpoint holds d={d} parameters but the network expects "
            f"{expected_spec.param_count}",
        )
    if expected_spec is not None and not expected_spec.same_architecture(spec):
        raise FormatError("layers", "checkpoint architecture differs from the network")
    return spec, params
