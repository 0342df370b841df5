import pytest

from dtnh.config import format_layers, load_config, parse_layers
from dtnh.errors import ConfigurationError
from dtnh.net import NetworkSpec


def test_builtin_hostile():
    cfg = load_config("hostile")
    assert cfg.network.taps == (1, 3)
    assert cfg.train.batch_size == 48 and cfg.train.momentum == 0.9 and cfg.train.lr0 == 0.01
    assert cfg.source_train.total_iters == 1500 and cfg.source_train.lr0 == 0.05
    assert cfg.seeds == (0, 1, 2, 3, 4)
    assert cfg.modes == ("fine-tuning", "vanilla-reg", "dtnh-reg")
    assert cfg.data.shift == "hostile" and cfg.data.synthetic


def test_overrides_win():
    cfg = load_config("related", ["train.total_iters=7", "regularizer.kind=knowdist",
                                  "regularizer.lambda=0.5", "train.seeds=3"])
    assert cfg.train.total_iters == 7
    assert (cfg.reg_kind, cfg.lambda0, cfg.seeds) == ("knowdist", 0.5, (3,))


def test_layer_syntax_round_trip():
    layers = parse_layers("conv2d:1:4:3:3:2*, relu, flatten, dense:144:10, head")
    spec = NetworkSpec((1, 13, 13), layers)
    assert spec.taps == (0,)
    assert parse_layers(format_layers(spec)) == list(spec.layers)


def test_file_paths_resolve_relative(tmp_path):
    (tmp_path / "c.ini").write_text(
        "[network]\ninput_shape = 2\nlayers = dense:2:2, head\ntaps = none\n"
        "[regularizer]\nkind = l2sp\n"
        "[data]\nsource_train = a.csv\nsource_test = b.csv\n"
        "target_train = c.csv\ntarget_test = d.csv\n"
    )
    cfg = load_config(tmp_path / "c.ini")
    assert cfg.data.paths["source_train"] == tmp_path / "a.csv"
    assert cfg.data.format == "csv" and not cfg.data.synthetic
    assert cfg.network.taps == ()


@pytest.mark.parametrize(
    "override",
    [
        "train.mode=adam",
        "train.nonsense=1",
        "regularizer.kind=elastic",
        "train.modes=vanilla-reg,magic",
        "data.colour=red",
        "extra.key=1",
        "network.layers=dense:8:x",
        "no-dot=1",
    ],
)
def test_bad_values(override):
    with pytest.raises(ConfigurationError):
        load_config("hostile", [override])


def test_missing_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.ini")
