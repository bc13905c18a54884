import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from springcast.metrics import Metrics, UntrainedModelError, compute_metrics, evaluate, predict_dataset
from springcast.nn import MlpModel

finite = st.floats(-1e3, 1e3)


def test_hand_case():
    m = compute_metrics([0.0, 0.0], [3.0, 4.0])
    assert m.mse == 12.5 and m.mae == 3.5
    assert abs(m.rmse - 3.535534) < 1e-6


def test_perfect_prediction():
    assert compute_metrics([1.0, 2.0], [1.0, 2.0]) == Metrics(0.0, 0.0, 0.0)


def test_errors():
    with pytest.raises(ValueError):
        compute_metrics([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        compute_metrics([], [])


@given(st.integers(1, 50).flatmap(lambda n: st.tuples(arrays(np.float64, n, elements=finite),
                                                      arrays(np.float64, n, elements=finite))))
def test_metric_identities(pair):
    p, o = pair
    m = compute_metrics(p, o)
    assert m.mse >= 0 and m.mae >= 0
    assert m.mae <= m.rmse * (1 + 1e-12) + 1e-300
    if m.mse > 0:
        assert abs(m.rmse ** 2 - m.mse) <= 1e-12 * m.mse


@given(arrays(np.float64, 8, elements=finite), st.permutations(range(8)))
def test_metrics_ignore_row_order(r, perm):
    o = np.zeros(8)
    a, b = compute_metrics(r, o), compute_metrics(r[list(perm)], o)
    assert a.mse == pytest.approx(b.mse, rel=1e-12, abs=1e-300)
    assert a.mae == pytest.approx(b.mae, rel=1e-12, abs=1e-300)


def test_metrics_dict_round_trip():
    m = Metrics(0.1, 0.2, math.sqrt(0.1))
    assert Metrics.from_dict(m.to_dict()) == m


def test_evaluate_splits_and_physical_units(splits):
    train, test = splits
    model = MlpModel.init(4, 0)
    with pytest.raises(UntrainedModelError):
        evaluate(model, test)
    model.trained = True
    rep = evaluate(model, {"train": train, "test": test}, model_id="m1")
    assert set(rep.splits) == {"train", "test"} and rep.label == "10-4-1"
    lo, hi = test.norm.discharge
    # a min-max rescale multiplies MAE/RMSE by the range and MSE by its square
    assert rep.physical["test"].mae == pytest.approx(rep.splits["test"].mae * (hi - lo), rel=1e-9)
    assert rep.physical["test"].mse == pytest.approx(rep.splits["test"].mse * (hi - lo) ** 2, rel=1e-9)
    d = rep.to_dict()
    assert d["model_id"] == "m1" and set(d["normalized"]) == {"train", "test"}


def test_predict_dataset_with_sequences(splits):
    from springcast.nn import LstmModel
    _, test = splits
    m = LstmModel.init(2, 0)
    m.trained = True
    pred, obs = predict_dataset(m, test, seq_len=3)
    assert pred.shape == obs.shape == (70,)
    np.testing.assert_array_equal(obs, test.targets[2:])
