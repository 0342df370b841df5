import math

import numpy as np
import pytest

from dtnh.batch import Dataset, MiniBatch
from dtnh.errors import ConfigurationError, DataError, FormatError, TrainingDivergedError
from dtnh.net import LayerSpec, NetworkSpec, forward, init_params
from dtnh.reg import RegularizerConfig
from dtnh.trainer import (
    METRICS_COLUMNS,
    EpochSampler,
    NetworkObjective,
    TrainConfig,
    TrainState,
    evaluate,
    learning_rate,
    load_checkpoint,
    read_metrics,
    save_checkpoint,
    train,
    train_step,
)

from conftest import conv_spec, mlp_spec, random_params


def toy_dataset(n, dim=3, classes=2, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.normal(size=(n, dim)), rng.integers(0, classes, size=n), classes)


class FixedObjective:
    """Objective with caller-supplied gradients, for update-rule tests."""

    def __init__(self, gJ, gO, lam=1.0):
        self.gJ, self.gO, self._lam = np.asarray(gJ, float), np.asarray(gO, float), lam

    def empirical(self, params, batch):
        return 0.0, self.gJ

    def regularizer(self, params, batch):
        return 0.0, self.gO

    def lam(self, epoch):
        return self._lam


class Quadratic:
    """J = (w - 3)^2 / 2 with an L2-SP pull toward the source weight."""

    def __init__(self, ws, lam):
        self.ws, self._lam = ws, lam

    def empirical(self, params, batch):
        return 0.5 * (params[0] - 3.0) ** 2, np.array([params[0] - 3.0])

    def regularizer(self, params, batch):
        diff = params - self.ws
        return float(diff @ diff), 2.0 * diff

    def lam(self, epoch):
        return self._lam


BATCH = MiniBatch(np.zeros((1, 1)), np.zeros(1, dtype=np.int64))


class TestSampler:
    def test_full_batch(self):
        s = EpochSampler(toy_dataset(10), 10, seed=0)
        assert sorted(s.next_indices().tolist()) == list(range(10))
        assert s.epoch == 0

    def test_partial_final_batch(self):
        s = EpochSampler(toy_dataset(10), 4, seed=1)
        sizes, seen = [], []
        for _ in range(3):
            idx = s.next_indices()
            sizes.append(len(idx))
            seen.extend(idx.tolist())
            assert s.epoch == 0
        assert sizes == [4, 4, 2]
        assert sorted(seen) == list(range(10))
        s.next_indices()
        assert s.epoch == 1

    def test_deterministic(self):
        a = EpochSampler(toy_dataset(10), 3, seed=7)
        b = EpochSampler(toy_dataset(10), 3, seed=7)
        for _ in range(12):
            assert a.next_indices().tolist() == b.next_indices().tolist()

    def test_empty(self):
        with pytest.raises(DataError):
            EpochSampler(Dataset(np.zeros((0, 2)), np.zeros(0), 2), 4, 0)


class TestTrainStep:
    def test_zero_direction(self):
        state = TrainState(np.array([1.0, 2.0]), np.array([0.5, -1.0]))
        new, row = train_step(state, BATCH, FixedObjective([0, 0], [0, 0]), TrainConfig(momentum=0.9))
        np.testing.assert_array_equal(new.params - (-0.01 * new.velocity), state.params)
        np.testing.assert_allclose(new.velocity, [0.45, -0.9], rtol=1e-15)
        assert new.iteration == 1 and row.iteration == 1

    def test_plain_sgd(self):
        gJ = np.array([0.3, -0.7])
        cfg = TrainConfig(momentum=0.0, mode="vanilla", lr0=0.05)
        new, _ = train_step(TrainState(np.array([1.0, 1.0])), BATCH, FixedObjective(gJ, [5.0, 5.0], 0.0), cfg)
        np.testing.assert_array_equal(new.params, np.array([1.0, 1.0]) - 0.05 * gJ)

    def test_quadratic_hand_iteration(self):
        cfg = TrainConfig(momentum=0.0, lr0=0.1, mode="vanilla")
        new, row = train_step(TrainState(np.array([0.0])), BATCH, Quadratic(np.zeros(1), 1.0), cfg)
        assert row.norm_gJ == 3.0 and row.norm_gOmega == 0.0
        assert new.params[0] == pytest.approx(0.3, abs=1e-15)

    def test_dtnh_uses_corrected_direction(self):
        cfg = TrainConfig(momentum=0.0, lr0=1.0)
        new, row = train_step(TrainState(np.zeros(2)), BATCH, FixedObjective([1, 0], [-1, 1]), cfg)
        assert row.branch == "obtuse"
        np.testing.assert_allclose(new.params, [-1.0, -1.0], atol=1e-15)

    def test_momentum_accumulates_direction(self):
        cfg = TrainConfig(momentum=0.5, lr0=1.0, mode="vanilla")
        obj = FixedObjective([1.0], [0.0])
        s1, _ = train_step(TrainState(np.zeros(1)), BATCH, obj, cfg)
        s2, _ = train_step(s1, BATCH, obj, cfg)
        assert s2.velocity[0] == 1.5 and s2.params[0] == -2.5

    def test_non_finite_aborts(self):
        class Bad(FixedObjective):
            def empirical(self, params, batch):
                return math.nan, self.gJ

        with pytest.raises(TrainingDivergedError) as info:
            train_step(TrainState(np.zeros(1), iteration=4), BATCH, Bad([1.0], [0.0]), TrainConfig())
        assert info.value.iteration == 4


class TestSchedule:
    def test_reference_defaults(self):
        cfg = TrainConfig()
        assert (cfg.batch_size, cfg.momentum, cfg.lr0) == (48, 0.9, 0.01)
        assert [learning_rate(cfg, t) for t in (0, 5999, 6000)] == [0.01, 0.01, 0.001]
        assert learning_rate(cfg, 12000) == pytest.approx(1e-4, rel=1e-15)

    def test_validation(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(mode="adam")
        with pytest.raises(ConfigurationError):
            TrainConfig(momentum=1.0)
        with pytest.raises(ConfigurationError):
            TrainConfig(total_iters=0)


class TestEvaluate:
    def test_perfect(self):
        spec = NetworkSpec((2,), (LayerSpec.dense(2, 2), LayerSpec.head()))
        params = np.array([10.0, 0.0, 0.0, 10.0, 0.0, 0.0])
        ds = Dataset(np.array([[1.0, 0.0], [0.0, 1.0]]), np.array([0, 1]), 2)
        assert evaluate(spec, params, ds)[1] == 1.0

    def test_uniform_logits_tie_break(self):
        spec = NetworkSpec((2,), (LayerSpec.dense(2, 3), LayerSpec.head()))
        ds = Dataset(np.ones((6, 2)), np.array([0, 1, 2, 0, 1, 2]), 3)
        loss, acc = evaluate(spec, np.zeros(spec.param_count), ds)
        assert loss == pytest.approx(math.log(3), rel=1e-15)
        assert acc == pytest.approx(2 / 6)  # class 0 wins every tie

    def test_matches_per_sample_oracle(self):
        spec = mlp_spec()
        rng = np.random.default_rng(0)
        ds = Dataset(rng.normal(size=(100, 6)), rng.integers(0, 3, size=100), 3)
        params = random_params(spec, 3)
        correct = 0
        for x, y in zip(ds.inputs, ds.labels):
            z = forward(spec, params, x[None]).logits[0]
            correct += int(max(range(3), key=lambda c: (z[c], -c)) == y)
        _, acc = evaluate(spec, params, ds, chunk=7)
        assert 0.0 <= acc <= 1.0
        assert acc == correct / 100


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        spec = conv_spec()
        params = random_params(spec, 0)
        save_checkpoint(spec, params, tmp_path / "c.dtnh")
        spec2, params2 = load_checkpoint(tmp_path / "c.dtnh", expected_spec=spec)
        assert spec2 == spec
        assert params2.tobytes() == params.tobytes()
        assert (tmp_path / "c.dtnh").read_bytes()[:4] == b"DTNH"

    @pytest.mark.parametrize("cut", [0, 3, 6, 10, 40, -1])
    def test_truncated(self, tmp_path, cut):
        spec = mlp_spec()
        save_checkpoint(spec, init_params(spec, 0), tmp_path / "c.dtnh")
        raw = (tmp_path / "c.dtnh").read_bytes()
        (tmp_path / "t.dtnh").write_bytes(raw[:cut])
        with pytest.raises(FormatError):
            load_checkpoint(tmp_path / "t.dtnh")

    def test_bad_magic_and_version(self, tmp_path):
        spec = mlp_spec()
        save_checkpoint(spec, init_params(spec, 0), tmp_path / "c.dtnh")
        raw = bytearray((tmp_path / "c.dtnh").read_bytes())
        (tmp_path / "m.dtnh").write_bytes(b"XXXX" + raw[4:])
        with pytest.raises(FormatError) as info:
            load_checkpoint(tmp_path / "m.dtnh")
        assert info.value.field == "magic"
        raw[4] = 9
        (tmp_path / "v.dtnh").write_bytes(bytes(raw))
        with pytest.raises(FormatError) as info:
            load_checkpoint(tmp_path / "v.dtnh")
        assert info.value.field == "version"

    def test_length_guard(self, tmp_path):
        spec10 = NetworkSpec((4,), (LayerSpec.dense(4, 2),))
        spec12 = NetworkSpec((5,), (LayerSpec.dense(5, 2),))
        assert (spec10.param_count, spec12.param_count) == (10, 12)
        save_checkpoint(spec10, np.arange(10.0), tmp_path / "c.dtnh")
        with pytest.raises(FormatError, match="d=10.*12"):
            load_checkpoint(tmp_path / "c.dtnh", expected_spec=spec12)


class TestTrainLoop:
    def _problem(self):
        spec = mlp_spec()
        rng = np.random.default_rng(0)
        ds = Dataset(rng.normal(size=(60, 6)), rng.integers(0, 3, size=60), 3)
        ws = random_params(spec, 9)
        return spec, ds, ws

    def test_metrics_csv_schema_and_reproducibility(self, tmp_path):
        spec, ds, ws = self._problem()
        obj = NetworkObjective(spec, RegularizerConfig("l2sp", 0.1, 0.9, ws))
        cfg = TrainConfig(total_iters=25, eval_every=10, log_every=5, batch_size=16)
        r1 = train(obj, ws, ds, cfg, test_dataset=ds, metrics_path=tmp_path / "a.csv")
        r2 = train(obj, ws, ds, cfg, test_dataset=ds, metrics_path=tmp_path / "b.csv")
        assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
        assert r1.params.tobytes() == r2.params.tobytes()
        header, rows = read_metrics(tmp_path / "a.csv")
        assert tuple(header) == METRICS_COLUMNS
        assert [r["iteration"] for r in rows] == [5, 10, 15, 20, 25]
        assert [r["test_loss"] is not None for r in rows] == [False, True, False, True, True]
        assert rows[-1]["test_accuracy"] == r1.test_accuracy
        # lambda decays per epoch; 60 samples / 16 = 4 batches per epoch
        assert rows[0]["epoch"] == 1 and rows[0]["lambda_effective"] == pytest.approx(0.09)
        for r in rows:
            assert r["train_total_loss"] == pytest.approx(
                r["empirical_loss"] + r["lambda_effective"] * r["reg_value"], rel=1e-12)

    def test_mode_equivalence_without_regularizer(self):
        spec, ds, ws = self._problem()
        for reg in (RegularizerConfig(), RegularizerConfig("l2sp", 0.0, 1.0, ws)):
            obj = NetworkObjective(spec, reg)
            a = train(obj, ws, ds, TrainConfig(total_iters=30, mode="vanilla", batch_size=16))
            b = train(obj, ws, ds, TrainConfig(total_iters=30, mode="dtnh", batch_size=16))
            assert a.params.tobytes() == b.params.tobytes()

    def test_convex_monotone(self):
        # logistic regression on separable data, full-batch GD
        rng = np.random.default_rng(1)
        x = rng.normal(size=(40, 2))
        y = (x[:, 0] + 0.5 * x[:, 1] > 0).astype(int)
        x[:, 0] += np.where(y == 1, 0.5, -0.5)
        ds = Dataset(x, y, 2)
        spec = NetworkSpec((2,), (LayerSpec.dense(2, 2), LayerSpec.head()))
        obj = NetworkObjective(spec, RegularizerConfig())
        cfg = TrainConfig(total_iters=200, batch_size=40, momentum=0.0, lr0=0.5,
                          mode="vanilla", log_every=1)
        rows = train(obj, init_params(spec, 0), ds, cfg).rows
        losses = [r.empirical_loss for r in rows]
        assert all(b <= a for a, b in zip(losses[1:], losses[2:]))
        assert losses[-1] < 0.5 * losses[0]
