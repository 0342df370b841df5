"""Dataset ingestion (IDX, CSV), centering, and synthetic transfer tasks."""

from dataclasses import dataclass
import csv
import gzip
import math
from pathlib import Path

import numpy as np

from .batch import Dataset
from .errors import ConfigurationError, DataError, ParseError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_IDX_DTYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def _read_bytes(path):
    path = Path(path)
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as fh:
            return fh.read()
    return path.read_bytes()


def read_idx(path):
    """Decode one IDX file into an ndarray of its stored dtype and shape."""
    raw = _read_bytes(path)
    if len(raw) < 4:
        raise ParseError("file too short for an IDX magic number", path, 0)
    if raw[0] != 0 or raw[1] != 0:
        raise ParseError(f"bad IDX magic {raw[:4].hex()}", path, 0)
    dtype = _IDX_DTYPES.get(raw[2])
    if dtype is None:
        raise ParseError(f"unknown IDX element type 0x{raw[2]:02x}", path, 2)
    ndim = raw[3]
    header = 4 + 4 * ndim
    if ndim == 0 or len(raw) < header:
        raise ParseError(f"truncated IDX header ({ndim} dimensions)", path, 4)
    dims = tuple(int.from_bytes(raw[4 + 4 * i : 8 + 4 * i], "big") for i in range(ndim))
    expected = math.prod(dims) * dtype.itemsize
    if len(raw) - header != expected:
        raise ParseError(
            f"payload is {len(raw) - header} bytes, header {dims} implies {expected}",
            path,
            header,
        )
    return np.frombuffer(raw, dtype=dtype, offset=header).reshape(dims)


def _idx_labels_path(path):
    path = Path(path)
    name = path.name.replace("images", "labels").replace("idx3", "idx1")
    if name == path.name:
        raise ConfigurationError(
            f"cannot infer the label file for {path}; pass labels_path"
        )
    return path.with_name(name)


def _load_idx(path, labels_path):
    images = read_idx(path)
    labels = read_idx(labels_path if labels_path is not None else _idx_labels_path(path))
    if labels.ndim != 1:
        raise ParseError(f"label file must be 1-D, got shape {labels.shape}", labels_path, 4)
    if labels.shape[0] != images.shape[0]:
        raise DataError(
            f"{images.shape[0]} images but {labels.shape[0]} labels in {path}"
        )
    x = images.astype(np.float64)
    if images.dtype.kind == "u" and images.dtype.itemsize == 1:
        x /= 255.0
    return x, labels.astype(np.int64)


def _load_csv(path):
    labels, rows = [], []
    width = None
    with open(path, newline="") as fh:
        for lineno, record in enumerate(csv.reader(fh), start=1):
            if not record:
                continue
            if width is None:
                width = len(record)
                if width < 2:
                    raise ParseError("need a label and at least one feature", path, lineno)
            elif len(record) != width:
                raise ParseError(f"expected {width} fields, got {len(record)}", path, lineno)
            try:
                labels.append(int(record[0]))
            except ValueError:
                raise ParseError(f"label {record[0]!r} is not an integer", path, lineno) from None
            try:
                rows.append([float(v) for v in record[1:]])
            except ValueError as exc:
                raise ParseError(str(exc), path, lineno) from None
    if not rows:
        raise DataError(f"{path} contains no samples")
    return np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64)


def channel_mean(inputs):
    """Mean per channel: axis 1 for ``(n, C, H, W)``, one channel for ``(n, H, W)``,
    and one per feature for flat ``(n, F)`` inputs."""
    if inputs.ndim == 4:
        return inputs.mean(axis=(0, 2, 3))
    if inputs.ndim == 3:
        return inputs.mean(keepdims=True)[0]
    return inputs.mean(axis=0)


def center(inputs, mean):
    if inputs.ndim == 4:
        return inputs - mean[None, :, None, None]
    return inputs - mean[None]


def normalized(dataset, mean=None):
    """Copy of ``dataset`` centered by ``mean`` (computed from it if omitted)."""
    if mean is None:
        mean = channel_mean(dataset.inputs)
    return Dataset(center(dataset.inputs, mean), dataset.labels, dataset.num_classes, mean)


def load_dataset(path, fmt, *, labels_path=None, input_shape=None, num_classes=None,
                 train_stats=None):
    """Load and center a dataset.

    ``train_stats`` is the ``channel_mean`` of the matching training set; when
    absent the statistics come from this file, which should then be the
    training split.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file {path} does not exist")
    if fmt == "idx":
        x, y = _load_idx(path, labels_path)
    elif fmt == "csv":
        x, y = _load_csv(path)
    else:
        raise ConfigurationError(f"unknown dataset format {fmt!r}")
    if input_shape is not None:
        x = x.reshape((x.shape[0],) + tuple(input_shape))
    if num_classes is None:
        num_classes = int(y.max()) + 1
    return normalized(Dataset(x, y, num_classes), train_stats)


def write_csv_dataset(dataset, path):
    """Label then flattened features per row; floats use round-trip repr."""
    flat = dataset.inputs.reshape(len(dataset), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for label, row in zip(dataset.labels, flat):
            w.writerow([int(label)] + [repr(float(v)) for v in row])


def cap_per_class(dataset, cap):
    """Keep the first ``cap`` samples of each class, preserving order."""
    keep = []
    counts = {}
    for i, y in enumerate(dataset.labels):
        c = counts.get(int(y), 0)
        if c < cap:
            keep.append(i)
            counts[int(y)] = c + 1
    idx = np.array(keep, dtype=np.int64)
    return Dataset(dataset.inputs[idx], dataset.labels[idx], dataset.num_classes,
                   dataset.channel_mean)


@dataclass
class SyntheticTask:
    source_train: Dataset
    source_test: Dataset
    target_train: Dataset
    target_test: Dataset

    def splits(self):
        return {
            "source_train": self.source_train,
            "source_test": self.source_test,
            "target_train": self.target_train,
            "target_test": self.target_test,
        }


FAMILIES = ("gaussian-blobs", "two-rings")
SHIFTS = ("related", "hostile")
_DEFAULT_ROTATION = {"related": 15.0, "hostile": 90.0}


def pairwise_rotation(dim, degrees):
    """Orthogonal matrix rotating each coordinate pair (0,1), (2,3), ... by ``degrees``."""
    r = np.eye(dim)
    t = math.radians(degrees)
    c, s = math.cos(t), math.sin(t)
    for k in range(0, dim - 1, 2):
        r[k, k], r[k, k + 1] = c, -s
        r[k + 1, k], r[k + 1, k + 1] = s, c
    return r


def _blob_sampler(rng, num_classes, dim, separation, noise):
    means = rng.normal(0.0, separation, size=(num_classes, dim))

    def sample(n, draw):
        k = draw.integers(0, num_classes, size=n)
        return means[k] + draw.normal(0.0, noise, size=(n, dim)), k

    return sample


def _ring_sampler(rng, num_classes, dim, separation, noise):
    # concentric ellipses in the first coordinate plane so rotation is visible
    aspect = 2.0
    offsets = rng.normal(0.0, 0.5 * noise, size=dim)

    def sample(n, draw):
        k = draw.integers(0, num_classes, size=n)
        theta = draw.uniform(0.0, 2.0 * math.pi, size=n)
        radius = separation * (1.0 + k)
        x = draw.normal(0.0, noise, size=(n, dim)) + offsets
        x[:, 0] += aspect * radius * np.cos(theta)
        x[:, 1] += radius * np.sin(theta)
        return x, k

    return sample


def gen_synthetic(task_family, shift_kind, seed, *, num_classes=None, dim=None,
                  rotation_deg=None, permutation=None, n_source_train=1000,
                  n_target_train=96, n_test=1000, separation=None, noise=1.0):
    """Source/target classification pair sharing input dimension and classes.

    The target is the source distribution rotated by ``rotation_deg`` with
    labels relabelled through ``permutation`` (``target = permutation[source]``).
    ``related`` defaults to a 15 degree rotation and the identity labelling;
    ``hostile`` defaults to a 90 degree rotation and a cyclic relabelling.
    """
    if task_family not in FAMILIES:
        raise ConfigurationError(f"unknown task family {task_family!r}")
    if shift_kind not in SHIFTS:
        raise ConfigurationError(f"unknown shift kind {shift_kind!r}")
    if task_family == "gaussian-blobs":
        num_classes = 4 if num_classes is None else num_classes
        dim = 8 if dim is None else dim
        separation = 2.0 if separation is None else separation
        make = _blob_sampler
    else:
        num_classes = 2 if num_classes is None else num_classes
        dim = 4 if dim is None else dim
        separation = 2.0 if separation is None else separation
        make = _ring_sampler
    if dim < 2:
        raise ConfigurationError("synthetic tasks need at least 2 input dimensions")
    if rotation_deg is None:
        rotation_deg = _DEFAULT_ROTATION[shift_kind]
    if permutation is None:
        if shift_kind == "related":
            permutation = np.arange(num_classes)
        else:
            permutation = (np.arange(num_classes) + 1) % num_classes
    permutation = np.asarray(permutation, dtype=np.int64)
    if sorted(permutation.tolist()) != list(range(num_classes)):
        raise ConfigurationError(f"{permutation.tolist()} is not a permutation")

    root = np.random.default_rng(seed)
    sample = make(root, num_classes, dim, separation, noise)
    streams = [np.random.default_rng(s) for s in root.integers(0, 2**63 - 1, size=4)]
    rot = pairwise_rotation(dim, rotation_deg)

    def source(n, draw):
        x, k = sample(n, draw)
        return Dataset(x, k, num_classes)

    def target(n, draw):
        x, k = sample(n, draw)
        return Dataset(x @ rot.T, permutation[k], num_classes)

    return SyntheticTask(
        source_train=source(n_source_train, streams[0]),
        source_test=source(n_test, streams[1]),
        target_train=target(n_target_train, streams[2]),
        target_test=target(n_test, streams[3]),
    )
