import numpy as np
import pytest

from hydroformer import data as D
from hydroformer.errors import ConfigError, NumericError
from hydroformer.model import ModelConfig, TransformerModel
from hydroformer.tensor import Tensor, backward
from hydroformer.training import (Adam, EarlyStopper, LossCurve, TrainConfig,
                                  evaluate_split, fit, teacher_forced_input)


def small_dataset(seed=1, length=500, lookback=6, horizon=2):
    series = D.synth_generate(seed=seed, length=length)
    return D.make_windows(series, lookback, horizon)


def small_model(seed=0, **kw):
    base = dict(d_model=8, n_heads=1, d_ffn=16, lookback=6, horizon=2)
    base.update(kw)
    return TransformerModel(ModelConfig(**base), seed=seed)


class TestAdam:
    def test_zero_gradient_leaves_params(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.zeros(2)
        opt = Adam({"p": p})
        opt.step(lr=0.1)
        assert np.array_equal(p.data, [1.0, -2.0])

    def test_first_step_bias_correction(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        p.grad = np.array([1.0])
        opt = Adam({"p": p})
        opt.step(lr=1e-3)
        # at t=1 both moment estimates bias-correct to g, so the step is -lr
        assert p.data[0] == pytest.approx(-1e-3, rel=1e-6)

    def test_constant_gradient_step_approaches_lr(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = Adam({"p": p})
        lr = 0.01
        prev = p.data.copy()
        for _ in range(500):
            p.grad = np.array([1.0])
            prev = p.data.copy()
            opt.step(lr=lr)
        assert abs(prev[0] - p.data[0]) == pytest.approx(lr, rel=1e-3)

    def test_non_finite_gradient_rejected(self):
        p = Tensor(np.array([0.0]), requires_grad=True)
        p.grad = np.array([np.nan])
        with pytest.raises(NumericError, match="p"):
            Adam({"p": p}).step(lr=0.1)

    def test_quadratic_bowl_decreases(self):
        theta = Tensor(np.array([3.0]), requires_grad=True)
        opt = Adam({"theta": theta})
        from hydroformer.tensor import mse
        loss0 = float(theta.data[0] ** 2)
        for _ in range(10):
            theta.zero_grad()
            backward(mse(theta, Tensor(np.zeros(1))))
            opt.step(lr=1e-3)
        assert float(theta.data[0] ** 2) < loss0


class TestEarlyStopper:
    def test_spec_trace_patience_one(self):
        # val loss strictly increasing from the second epoch
        stopper = EarlyStopper(patience=1)
        assert not stopper.update(0, 0.5)
        assert not stopper.update(1, 0.6)
        assert stopper.update(2, 0.7)
        assert stopper.best_epoch == 0

    def test_improvement_resets_patience(self):
        stopper = EarlyStopper(patience=2)
        for epoch, loss in enumerate([1.0, 1.1, 0.9, 1.2, 1.3, 1.4]):
            stopped = stopper.update(epoch, loss)
        assert stopped
        assert stopper.best_epoch == 2

    def test_min_delta_requires_strict_margin(self):
        stopper = EarlyStopper(patience=1, min_delta=0.1)
        stopper.update(0, 1.0)
        stopper.update(1, 0.95)  # improvement below min_delta does not reset
        assert stopper.bad_epochs == 1


class TestTeacherForcing:
    def test_shift_with_start_token(self):
        window = np.zeros((4, 19))
        window[-1, D.TARGET_INDEX] = 7.0
        targets = np.array([1.0, 2.0, 3.0])
        dec = teacher_forced_input(window, targets, D.TARGET_INDEX)
        assert dec.ravel().tolist() == [7.0, 1.0, 2.0]


class TestFit:
    def test_lr_zero_keeps_params_and_loss(self):
        ds = small_dataset()
        model = small_model(seed=2)
        before = model.state_arrays()
        cfg = TrainConfig(learning_rate=0.0, max_epochs=3, seed=3)
        curve = fit(model, ds, cfg)
        after = model.state_arrays()
        for name in before:
            assert np.array_equal(before[name], after[name])
        # shuffle reorders the per-sample sum, so allow rounding-level wiggle
        assert max(curve.train_losses) - min(curve.train_losses) < 1e-12

    def test_seeded_runs_identical(self):
        ds = small_dataset()
        cfg = TrainConfig(max_epochs=3, learning_rate=1e-3, seed=4)
        c1 = fit(small_model(seed=5), ds, cfg)
        c2 = fit(small_model(seed=5), ds, cfg)
        assert c1.epochs == c2.epochs

    def test_restores_best_val_weights(self):
        ds = small_dataset()
        model = small_model(seed=6)
        cfg = TrainConfig(max_epochs=6, learning_rate=3e-3, seed=6,
                          early_stop_patience=2)
        curve = fit(model, ds, cfg)
        assert curve.best_epoch == int(np.argmin(curve.val_losses))
        from hydroformer.training import _split_loss
        val_now = _split_loss(model, ds.split("val"), D.TARGET_INDEX)
        assert val_now == pytest.approx(min(curve.val_losses), abs=1e-12)

    def test_horizon_mismatch_rejected(self):
        ds = small_dataset(horizon=2)
        model = small_model(horizon=3)
        with pytest.raises(ConfigError):
            fit(model, ds, TrainConfig(max_epochs=1))

    def test_loss_curve_text(self):
        curve = LossCurve(epochs=[(0.5, 0.6), (0.4, 0.5)], best_epoch=1)
        text = curve.to_text()
        assert text.splitlines()[0] == "epoch,train_loss,val_loss"
        assert len(text.splitlines()) == 3


class _OracleModel:
    """Stub that always predicts the true future targets."""

    def __init__(self, dataset, split, horizon):
        self.config = ModelConfig(d_model=8, n_heads=1, d_ffn=16, horizon=horizon)
        self._samples = dataset.split(split)

    def predict(self, window, horizon):
        for w, tgt in zip(self._samples.windows, self._samples.targets):
            if np.array_equal(w, window):
                return tgt[:horizon, None]
        raise AssertionError("window not found")


class _PersistenceModel:
    """Stub that repeats the last observed target value."""

    def __init__(self, horizon):
        self.config = ModelConfig(d_model=8, n_heads=1, d_ffn=16, horizon=horizon)

    def predict(self, window, horizon):
        return np.full((horizon, 1), window[-1, D.TARGET_INDEX])


class TestEvaluateSplit:
    def test_perfect_oracle(self):
        ds = small_dataset(horizon=3)
        oracle = _OracleModel(ds, "test", horizon=3)
        report, series = evaluate_split(oracle, ds, "test", [1, 2, 3],
                                        r2_mode="standard")
        for m in report.rows():
            assert m.r2 == pytest.approx(1.0, abs=1e-12)
            assert m.mae == pytest.approx(0.0, abs=1e-10)
            assert m.rmse == pytest.approx(0.0, abs=1e-10)
            assert m.mbe == pytest.approx(0.0, abs=1e-10)
        assert set(series) == {1, 2, 3}

    def test_persistence_on_linear_trend_gives_trend_mbe(self):
        # target is a pure linear trend; persistence lags by exactly one step
        length, slope = 450, 0.01
        series = D.synth_generate(seed=7, length=length)
        series.values[:, D.TARGET_INDEX] = 5.0 + slope * np.arange(length)
        ds = D.make_windows(series, lookback=6, horizon=1)
        report, _ = evaluate_split(_PersistenceModel(1), ds, "test", [1],
                                   r2_mode="standard")
        assert report.leads[1].mbe == pytest.approx(slope, abs=1e-9)

    def test_report_contains_exactly_requested_leads(self):
        ds = small_dataset(horizon=3)
        oracle = _OracleModel(ds, "val", horizon=3)
        report, _ = evaluate_split(oracle, ds, "val", [2], r2_mode="standard")
        assert list(report.leads) == [2]

    def test_lead_over_horizon_rejected(self):
        ds = small_dataset(horizon=2)
        with pytest.raises(ConfigError):
            evaluate_split(_PersistenceModel(2), ds, "test", [3])
