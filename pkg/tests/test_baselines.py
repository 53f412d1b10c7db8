import math

import numpy as np
import pytest

from conftest import inst, random_stream
from packetnet.baselines import Imputer, SingleLSTM, impute, single_train_step
from packetnet.errors import ConfigurationError
from packetnet.gradcheck import grad_mismatch
from packetnet.numerics import finite_diff_grad, softmax_xent


def test_ffill_last_value():
    imp = Imputer(3, "ffill")
    imp(inst(0, {2: 5.0}))
    assert impute(imp, inst(1, {1: 1.0}), "ffill")[1] == 5.0


def test_rolling_mean():
    imp = Imputer(2, "rolling_mean", window=5)
    for t, v in enumerate([1.0, 2.0, 3.0]):
        imp(inst(t, {1: v}))
    assert imp(inst(3, {2: 0.0}))[0] == 2.0


def test_rolling_window_forgets():
    imp = Imputer(1, "rolling_mean", window=2)
    for t, v in enumerate([10.0, 1.0, 3.0]):
        imp(inst(t, {1: v}))
    empty = inst(3, {})
    assert imp(empty)[0] == 2.0


@pytest.mark.parametrize("method", ["ffill", "rolling_mean"])
def test_never_observed_is_zero(method):
    dense = Imputer(4, method)(inst(0, {3: 7.0}))
    np.testing.assert_array_equal(dense, [0, 0, 7.0, 0])


def test_methods_agree_without_missing_values():
    a, b = Imputer(3, "ffill"), Imputer(3, "rolling_mean")
    rng = np.random.default_rng(0)
    for t in range(20):
        x = inst(t, dict(zip([1, 2, 3], rng.normal(size=3))))
        np.testing.assert_array_equal(a(x), b(x))


def test_imputed_values_do_not_enter_state():
    imp = Imputer(2, "rolling_mean", window=3)
    imp(inst(0, {1: 4.0, 2: 1.0}))
    for t in range(1, 5):
        imp(inst(t, {2: 1.0}))
    assert imp.filled[0] == 1 and imp(inst(5, {}))[0] == 4.0


def test_imputer_rejects_unknown_feature():
    with pytest.raises(ConfigurationError):
        Imputer(2)(inst(0, {3: 1.0}))
    with pytest.raises(ConfigurationError):
        Imputer(2, "median")


def test_zero_head_loss_ln2():
    model = SingleLSTM(3, hidden=4, seed=0)
    model.head.theta[:] = 0
    loss, probs = single_train_step(model, np.array([0.3, -1.0, 2.0]), 1)
    assert loss == pytest.approx(math.log(2), abs=1e-15)
    np.testing.assert_array_equal(probs, [0.5, 0.5])


def test_gradients_match_finite_differences():
    model = SingleLSTM(3, hidden=4, seed=1)
    for x in random_stream(5, n_features=3, seed=2):
        model.train_step(x)
    dense = np.array([0.4, -0.3, 1.2])
    fwd = model.forward_dense(dense)
    _, _, g_head, g_cell = model.gradients(fwd, 1)

    def loss_cell(theta):
        saved = model.theta.copy()
        model.theta[:] = theta
        try:
            return softmax_xent(model.forward_dense(dense).logits, 1)[0]
        finally:
            model.theta[:] = saved

    assert grad_mismatch(g_cell, finite_diff_grad(loss_cell, model.theta.copy())) <= 1.0


def test_state_carried_across_instances():
    model = SingleLSTM(2, hidden=4, seed=0)
    assert not model.h.any()
    model.train_step(inst(0, {1: 1.0, 2: -1.0}, label=1))
    assert model.h.any() and model.c.any()
    h1 = model.h.copy()
    model.train_step(inst(1, {1: 1.0, 2: -1.0}, label=1))
    assert not np.array_equal(model.h, h1)


def test_param_count():
    model = SingleLSTM(10, hidden=32)
    assert model.param_count() == (4 * 32 * (10 + 32) + 4 * 32) + (32 * 32 + 32 + 64 + 2)
