import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from springcast.nn import LstmModel, MlpModel, ShapeError
from springcast.optim import (AdamState, LrSchedule, TrainConfig, TrainingDivergedError, TrainingHistory,
                              adam_step, finite_diff_grad, lr_at, mse_loss, train)


def test_mse_loss_value_and_gradient():
    loss, g = mse_loss([1.0, 2.0], [0.0, 0.0])
    assert loss == 2.5
    np.testing.assert_array_equal(g, [1.0, 2.0])
    with pytest.raises(ShapeError):
        mse_loss([1.0], [1.0, 2.0])
    with pytest.raises(ShapeError):
        mse_loss([], [])


def test_lr_schedule():
    s = LrSchedule()
    assert lr_at(s, 0) == 1e-4
    assert lr_at(s, 1) == pytest.approx(0.99e-4, rel=1e-15)
    assert lr_at(s, 10) == pytest.approx(1e-4 * 0.99 ** 10, rel=1e-15)
    s = LrSchedule(1e-3, 0.5, decay_steps=10)
    assert [lr_at(s, e) for e in (0, 9, 10, 25)] == [1e-3, 1e-3, 5e-4, 2.5e-4]
    with pytest.raises(ValueError):
        lr_at(s, -1)
    for bad in (dict(initial_rate=0), dict(decay_rate=1.5), dict(decay_steps=0)):
        with pytest.raises(ValueError):
            LrSchedule(**bad)


def naive_adam(p, grads, rate, b1=0.9, b2=0.999, eps=1e-8):
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - rate * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return p


def test_adam_two_steps_by_hand():
    # constant gradient 1: both bias-corrected moments equal 1 at every step
    p = {"w": np.array([1.0])}
    state = AdamState()
    p1, state = adam_step(p, {"w": np.array([1.0])}, state, 0.1)
    p2, state = adam_step(p1, {"w": np.array([1.0])}, state, 0.1)
    step = 0.1 * 1.0 / (1.0 + 1e-8)
    assert abs(p1["w"][0] - (1.0 - step)) <= 1e-12
    assert abs(p2["w"][0] - (1.0 - 2 * step)) <= 1e-12
    assert p["w"][0] == 1.0 and state.t == 2


@given(st.integers(0, 2 ** 31), st.integers(1, 6))
def test_adam_matches_reference_including_zero_gradients(seed, steps):
    rng = np.random.default_rng(seed)
    p0 = rng.normal(size=5)
    # some steps have all-zero gradients, including possibly the first ones
    grads = [rng.normal(size=5) * (rng.random() < 0.6) for _ in range(steps)]
    params = {"w": p0.copy()}
    state = AdamState()
    for g in grads:
        state.update(params, {"w": g}, 1e-2)
    np.testing.assert_allclose(params["w"], naive_adam(p0, grads, 1e-2), rtol=0, atol=1e-14)


def test_adam_broadcast_zero_gradient_is_skipped():
    params = {"w": np.ones((3, 3))}
    state = AdamState()
    state.update(params, {"w": np.broadcast_to(0.0, (3, 3))}, 0.1)
    assert np.all(params["w"] == 1.0)


def test_adam_errors():
    state = AdamState()
    with pytest.raises(ShapeError):
        state.update({"w": np.ones(2)}, {"v": np.ones(2)}, 0.1)
    with pytest.raises(ShapeError):
        state.update({"w": np.ones(2)}, {"w": np.ones(3)}, 0.1)
    with pytest.raises(ValueError):
        state.update({"w": np.ones(2)}, {"w": np.ones(2)}, 0.0)


def regression_data(n=64, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.random((n, 10))
    y = X @ rng.normal(size=10) * 0.2 + 0.3
    return X, y


def test_train_reduces_loss_and_restores_best():
    X, y = regression_data()
    m = MlpModel.init(8, np.random.default_rng(0))
    before = m.loss(X, y)
    cfg = TrainConfig(epochs=60, batch_size=16, schedule=LrSchedule(1e-2, 0.99, 1))
    m, hist = train(m, (X, y), cfg)
    assert m.trained
    assert len(hist.losses) == 60 and len(hist.rates) == 60
    assert hist.rates[0] == 1e-2 and hist.rates[5] == pytest.approx(1e-2 * 0.99 ** 5)
    assert hist.best_epoch == int(np.argmin(hist.losses))
    assert m.loss(X, y) < before / 5
    assert hist.wall_time > 0


def test_train_is_deterministic():
    X, y = regression_data()
    cfg = TrainConfig(epochs=5, batch_size=7, shuffle_each_epoch=True, seed=3)
    a, ha = train(MlpModel.init(4, 1), (X, y), cfg)
    b, hb = train(MlpModel.init(4, 1), (X, y), cfg)
    assert ha.losses == hb.losses
    assert all(np.array_equal(a.params()[k], b.params()[k]) for k in a.params())
    c, hc = train(MlpModel.init(4, 1), (X, y), TrainConfig(epochs=5, batch_size=7, seed=3))
    assert hc.losses != ha.losses


def test_train_batches_and_callback():
    X, y = regression_data(n=37)
    seen = []
    train(MlpModel.init(2, 0), (X, y), TrainConfig(epochs=2, batch_size=16),
          callback=lambda e, b, loss: seen.append((e, b)))
    assert seen == [(0, 0), (0, 1), (0, 2), (1, 0), (1, 1), (1, 2)]


def test_train_lstm_on_sequences():
    rng = np.random.default_rng(0)
    X = rng.random((20, 3, 10))
    y = X[:, -1, 0] * 0.5
    m, hist = train(LstmModel.init(4, rng), (X, y), TrainConfig(epochs=30, batch_size=4,
                                                                 schedule=LrSchedule(1e-2, 1.0)))
    assert hist.losses[-1] < hist.losses[0]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_epoch_and_batch():
    X, y = regression_data()
    cfg = TrainConfig(epochs=50, batch_size=16, schedule=LrSchedule(1e200, 1.0))
    with pytest.raises(TrainingDivergedError) as info:
        train(MlpModel.init(8, 0), (X, y), cfg)
    err = info.value
    assert "epoch" in str(err) and "batch" in str(err)
    assert err.epoch >= 0 and err.batch >= 0 and not math.isfinite(err.loss)


def test_train_input_checks():
    X, y = regression_data()
    with pytest.raises(ShapeError):
        train(MlpModel.init(2, 0), (X[:, :9], y), TrainConfig(epochs=1))
    with pytest.raises(ShapeError):
        train(MlpModel.init(2, 0), (X, y[:-1]), TrainConfig(epochs=1))
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_train_config_dict_round_trip():
    cfg = TrainConfig(epochs=3, batch_size=2, schedule=LrSchedule(1e-3, 0.9, 4), seed=9, shuffle_each_epoch=True)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_history_csv(tmp_path):
    h = TrainingHistory(losses=[0.5, 0.25], rates=[1e-4, 9.9e-5], best_epoch=1)
    h.to_csv(tmp_path / "h.csv")
    assert (tmp_path / "h.csv").read_text() == "epoch,loss,lr\n0,0.5,0.0001\n1,0.25,9.9e-05\n"
    assert h.best_loss == 0.25


def test_finite_diff_restores_parameters():
    m = MlpModel.init(3, 0)
    before = m.snapshot()
    X, y = regression_data(n=4)
    g = finite_diff_grad(m, (X, y))
    assert set(g) == set(before)
    assert all(np.array_equal(before[k], m.params()[k]) for k in before)
    with pytest.raises(ValueError):
        finite_diff_grad(m, (X, y), step=0)
