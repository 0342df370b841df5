"""Experiment configuration files.

Configs are INI-style ``key = value`` files with ``[network]``,
``[regularizer]``, ``[train]`` and ``[data]`` sections.  Overrides given as
``section.key=value`` strings replace file values.
"""

from dataclasses import dataclass, field, replace
import configparser
from importlib import resources
from pathlib import Path

from .errors import ConfigurationError
from .net import LayerSpec, NetworkSpec
from .reg import KINDS
from .trainer import TrainConfig

FINE_TUNING = "fine-tuning"
VANILLA_REG = "vanilla-reg"
DTNH_REG = "dtnh-reg"
MODES = (FINE_TUNING, VANILLA_REG, DTNH_REG)

BUILTIN = ("hostile", "related")


def parse_layers(text):
    """``dense:8:32, relu, conv2d:1:4:3:3:1, flatten, head``; a ``*`` suffix taps a layer."""
    layers = []
    for token in filter(None, (t.strip() for t in text.split(","))):
        tap = token.endswith("*")
        parts = token.rstrip("*").split(":")
        kind, args = parts[0], parts[1:]
        try:
            nums = [int(a) for a in args]
        except ValueError:
            raise ConfigurationError(f"non-integer layer argument in {token!r}") from None
        if kind == "dense" and len(nums) == 2:
            layers.append(LayerSpec.dense(*nums, tap=tap))
        elif kind == "conv2d" and len(nums) in (4, 5):
            layers.append(LayerSpec.conv2d(*nums, tap=tap))
        elif kind == "relu" and not nums:
            layers.append(LayerSpec.relu(tap=tap))
        elif kind == "flatten" and not nums:
            layers.append(LayerSpec.flatten(tap=tap))
        elif kind == "head" and not nums and not tap:
            layers.append(LayerSpec.head())
        else:
            raise ConfigurationError(f"cannot parse layer {token!r}")
    return layers


def format_layers(spec):
    out = []
    for layer in spec.layers:
        if layer.kind == "dense":
            tok = f"dense:{layer.in_features}:{layer.out_features}"
        elif layer.kind == "conv2d":
            tok = (f"conv2d:{layer.in_channels}:{layer.out_channels}:"
                   f"{layer.kernel_h}:{layer.kernel_w}:{layer.stride}")
        elif layer.kind == "softmax-cross-entropy-head":
            tok = "head"
        else:
            tok = layer.kind
        out.append(tok + ("*" if layer.tap else ""))
    return ", ".join(out)


@dataclass(frozen=True)
class DataConfig:
    family: str = "gaussian-blobs"
    shift: str = "hostile"
    data_seed: int = 0
    rotation_deg: float | None = None
    n_target_train: int = 96
    n_source_train: int = 1000
    n_test: int = 1000
    separation: float | None = None
    format: str | None = None
    paths: dict = field(default_factory=dict)
    input_shape: tuple | None = None
    per_class_cap: int | None = None
    source_checkpoint: str | None = None

    @property
    def synthetic(self):
        return not self.paths


@dataclass(frozen=True)
class ExperimentConfig:
    network: NetworkSpec
    data: DataConfig
    reg_kind: str
    lambda0: float
    decay_ratio: float
    train: TrainConfig
    source_train: TrainConfig
    seeds: tuple
    modes: tuple
    output_dir: Path = Path("runs")

    def with_lambda(self, lam):
        return replace(self, lambda0=float(lam))


_SPLITS = ("source_train", "source_test", "target_train", "target_test")


def _ints(text):
    return tuple(int(t) for t in text.replace(" ", "").split(",") if t)


def _read(source):
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    if isinstance(source, str) and source in BUILTIN:
        text = resources.files("dtnh.configs").joinpath(f"{source}.ini").read_text()
        parser.read_string(text)
        return parser, None
    path = Path(source)
    if not path.exists():
        raise ConfigurationError(f"config file {path} does not exist")
    parser.read(path)
    return parser, path.parent


def load_config(source, overrides=(), output_dir=None):
    """Parse a config file (or a builtin name: ``hostile``, ``related``)."""
    parser, base = _read(source)
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigurationError(f"override {item!r} must look like section.key=value")
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, name, value.strip())
    for section in parser.sections():
        if section not in ("network", "regularizer", "train", "data"):
            raise ConfigurationError(f"unknown config section [{section}]")
    try:
        return _build(parser, base, output_dir)
    except (ValueError, KeyError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(f"bad config value: {exc}") from None


def _build(parser, base, output_dir):
    net = parser["network"] if parser.has_section("network") else {}
    if "layers" not in net or "input_shape" not in net:
        raise ConfigurationError("[network] needs input_shape and layers")
    shape = tuple(int(s) for s in net["input_shape"].lower().replace("x", ",").split(","))
    spec = NetworkSpec(shape, parse_layers(net["layers"]))
    taps = net.get("taps", "auto").strip()
    if taps == "auto":
        if not spec.taps:
            spec = spec.with_default_taps()
    elif taps != "none":
        chosen = set(_ints(taps))
        layers = [replace(l, tap=i in chosen) for i, l in enumerate(spec.layers)]
        spec = NetworkSpec(spec.input_shape, layers)

    reg = parser["regularizer"] if parser.has_section("regularizer") else {}
    kind = reg.get("kind", "l2sp")
    if kind not in KINDS:
        raise ConfigurationError(f"unknown regularizer kind {kind!r}")
    lambda0 = float(reg.get("lambda", "0.01"))
    decay = float(reg.get("decay_ratio", "1.0"))

    tr = dict(parser["train"]) if parser.has_section("train") else {}
    seeds = _ints(tr.pop("seeds", "0"))
    modes = tuple(m.strip() for m in tr.pop("modes", ",".join(MODES)).split(",") if m.strip())
    for m in modes:
        if m not in MODES:
            raise ConfigurationError(f"unknown mode {m!r}; expected one of {', '.join(MODES)}")
    source = {k[len("source_"):]: tr.pop(k) for k in list(tr) if k.startswith("source_")}
    train = _train_config(tr)
    source_defaults = {"mode": "vanilla"}
    source_train = _train_config({**tr, **source_defaults, **source})
    if not seeds or not modes:
        raise ConfigurationError("seeds and modes must be nonempty")

    dt = dict(parser["data"]) if parser.has_section("data") else {}
    paths = {}
    for split in _SPLITS:
        if split in dt:
            p = Path(dt.pop(split))
            paths[split] = p if p.is_absolute() or base is None else base / p
    checkpoint = dt.pop("source_checkpoint", None)
    if checkpoint and base is not None and not Path(checkpoint).is_absolute():
        checkpoint = str(base / checkpoint)
    if paths and set(paths) != set(_SPLITS):
        missing = sorted(set(_SPLITS) - set(paths))
        raise ConfigurationError(f"[data] file mode needs every split; missing {missing}")
    rotation = dt.pop("rotation_deg", None)
    separation = dt.pop("separation", None)
    cap = dt.pop("per_class_cap", None)
    in_shape = dt.pop("input_shape", None)
    data = DataConfig(
        family=dt.pop("family", "gaussian-blobs"),
        shift=dt.pop("shift", "hostile"),
        data_seed=int(dt.pop("data_seed", "0")),
        rotation_deg=None if rotation in (None, "") else float(rotation),
        n_target_train=int(dt.pop("n_target_train", "96")),
        n_source_train=int(dt.pop("n_source_train", "1000")),
        n_test=int(dt.pop("n_test", "1000")),
        separation=None if separation in (None, "") else float(separation),
        format=dt.pop("format", "csv" if paths else None),
        paths=paths,
        input_shape=None if not in_shape else tuple(
            int(s) for s in in_shape.lower().replace("x", ",").split(",")),
        per_class_cap=None if cap in (None, "") else int(cap),
        source_checkpoint=checkpoint or None,
    )
    if dt:
        raise ConfigurationError(f"unknown [data] keys: {', '.join(sorted(dt))}")
    return ExperimentConfig(
        network=spec,
        data=data,
        reg_kind=kind,
        lambda0=lambda0,
        decay_ratio=decay,
        train=train,
        source_train=source_train,
        seeds=seeds,
        modes=modes,
        output_dir=Path(output_dir) if output_dir is not None else Path("runs"),
    )


_TRAIN_TYPES = {
    "batch_size": int,
    "momentum": float,
    "lr0": float,
    "lr_drop_iters": int,
    "lr_drop_factor": float,
    "total_iters": int,
    "seed": int,
    "mode": str,
    "eval_every": int,
    "log_every": int,
}


def _train_config(values):
    kwargs = {}
    for key, value in values.items():
        if key not in _TRAIN_TYPES:
            raise ConfigurationError(f"unknown [train] key {key!r}")
        kwargs[key] = _TRAIN_TYPES[key](value)
    return TrainConfig(**kwargs)
