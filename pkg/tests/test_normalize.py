import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import inst
from packetnet.errors import ConfigurationError
from packetnet.normalize import Normalizer, StreamingStats, stats_merge_check


def emit(kind, history, m=3):
    norm = Normalizer(kind, m)
    return [norm(inst(t, {1: v})).values[0] for t, v in enumerate(history)]


def test_zscore_third_emission():
    out = emit("zscore", [1.0, 2.0, 3.0])
    assert out[0] == 0.0  # single observation
    assert out[2] == pytest.approx(1.0, abs=1e-15)


def test_zscore_constant_history_is_zero():
    assert emit("zscore", [4.0] * 5) == [0.0] * 5


def test_decimal():
    assert emit("decimal", [334.18])[0] == pytest.approx(0.33418, abs=1e-15)


def test_unitvector():
    out = Normalizer("unitvector")(inst(0, {1: 3.0, 4: 4.0}))
    np.testing.assert_allclose(out.values, [0.6, 0.8], atol=1e-15)
    zeros = Normalizer("unitvector")(inst(0, {1: 0.0, 2: 0.0}))
    np.testing.assert_array_equal(zeros.values, [0.0, 0.0])


def test_minmax_and_meannorm():
    assert emit("minmax", [4.0, 10.0])[1] == 1.0
    assert emit("minmax", [7.0])[0] == 0.0
    # running mean after (1, 0, 5) is 2
    assert emit("meannorm", [1.0, 0.0, 5.0])[2] == pytest.approx(3.0, abs=1e-15)


def test_none_is_identity():
    x = inst(0, {2: 1e9, 5: -3.0})
    assert Normalizer("none")(x) is x


def test_unknown_kind():
    with pytest.raises(ConfigurationError, match="normalizer"):
        Normalizer("robust")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=60))
def test_minmax_range(values):
    out = emit("minmax", values)
    assert all(0.0 <= v <= 1.0 for v in out)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3).filter(lambda v: abs(v) > 1e-3), min_size=1, max_size=8))
def test_unitvector_norm(values):
    x = inst(0, list(enumerate(values, start=1)))
    assert np.linalg.norm(Normalizer("unitvector")(x).values) == pytest.approx(1.0, abs=1e-12)


def test_merge_check_empty():
    assert stats_merge_check(StreamingStats(), {})


def test_welford_matches_batch_on_long_history():
    rng = np.random.default_rng(0)
    stats = StreamingStats()
    hist = {1: rng.normal(5, 3, size=100_000), 2: rng.exponential(2, size=10_000)}
    for j, vals in hist.items():
        for v in vals:
            stats.update(np.array([j]), np.array([v]))
    assert stats_merge_check(stats, hist, rtol=1e-9)


def test_welford_adversarial_offset():
    rng = np.random.default_rng(1)
    vals = 1e8 + rng.uniform(0, 1e-2, size=10_000)
    stats = StreamingStats()
    for v in vals:
        stats.update(np.array([1]), np.array([v]))
    s = stats.summary(1)
    ref_var = np.var(vals - 1e8, ddof=1)  # shifted two-pass, exact enough
    assert s["mean"] == pytest.approx(vals.mean(), rel=1e-12)
    assert s["var"] == pytest.approx(ref_var, rel=1e-6)


def test_stats_state_round_trip():
    stats = StreamingStats()
    stats.update(np.array([3, 9]), np.array([1.0, 2.0]))
    stats.update(np.array([9]), np.array([5.0]))
    back = StreamingStats.from_state(stats.state())
    assert back.summary(9) == stats.summary(9) and back.summary(3) == stats.summary(3)
