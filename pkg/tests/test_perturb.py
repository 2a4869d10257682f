import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ttpnb.errors import DegenerateColumn, InvalidVariance
from ttpnb.perturb import (
    Absolute,
    NoiseSpec,
    RatioOfSampleVariance,
    attribute_key,
    noise_mode_from_dict,
    perturb_column,
    perturb_table,
    resolve_variance,
)

from conftest import make_table

finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.lists(finite, min_size=0, max_size=50), st.integers(0, 2**32), st.integers(0, 100))
def test_zero_variance_is_bitwise_identity(xs, seed, idx):
    x = np.array(xs, dtype=np.float64)
    for family in ("gaussian", "uniform"):
        out = perturb_column(x, NoiseSpec(family, 0.0, seed), idx)
        assert out.values.tobytes() == x.tobytes()
        assert out.noise_variance == 0.0


@settings(deadline=None, max_examples=25)
@given(st.lists(finite, min_size=1, max_size=40), st.floats(0.01, 10))
def test_length_and_determinism(xs, var):
    a = perturb_column(xs, NoiseSpec("gaussian", var, 5), 3)
    b = perturb_column(xs, NoiseSpec("gaussian", var, 5), 3)
    assert len(a.values) == len(xs)
    assert np.array_equal(a.values, b.values)
    c = perturb_column(xs, NoiseSpec("gaussian", var, 6), 3)
    assert not np.array_equal(a.values, c.values)


def test_stream_prefix_stability():
    # Element t depends only on the key and t, not on the column length.
    long = perturb_column(np.zeros(100), NoiseSpec("gaussian", 1.0, 11), 2).values
    short = perturb_column(np.zeros(10), NoiseSpec("gaussian", 1.0, 11), 2).values
    assert np.array_equal(long[:10], short)


@pytest.mark.parametrize("family", ["gaussian", "uniform"])
def test_noise_moments(family):
    r = perturb_column(np.zeros(100_000), NoiseSpec(family, 1.0, 2024), 0).values
    assert abs(r.mean()) <= 0.02
    assert 0.97 <= r.var(ddof=1) <= 1.03


def test_uniform_support():
    r = perturb_column(np.zeros(10_000), NoiseSpec("uniform", 4.0, 1), 0).values
    assert np.abs(r).max() <= np.sqrt(12.0)


def test_resolve_variance_examples():
    assert resolve_variance(RatioOfSampleVariance(0.25), [1.0, 2.0, 3.0]) == 0.25
    assert resolve_variance(Absolute(2.5), [1.0, 2.0]) == 2.5
    with pytest.warns(DegenerateColumn):
        assert resolve_variance(RatioOfSampleVariance(0.5), [4.0, 4.0, 4.0]) == 0.0


def test_invalid_variance():
    with pytest.raises(InvalidVariance):
        NoiseSpec("gaussian", -1.0)
    with pytest.raises(InvalidVariance):
        NoiseSpec("gaussian", float("nan"))
    with pytest.raises(InvalidVariance):
        noise_mode_from_dict({"kind": "ratio", "value": -0.1})
    with pytest.raises(ValueError):
        NoiseSpec("laplace", 1.0)


def test_noise_mode_dict_roundtrip():
    for mode in (Absolute(1.5), RatioOfSampleVariance(0.25)):
        assert noise_mode_from_dict(mode.to_dict()) == mode


def test_per_attribute_variance():
    spec = NoiseSpec("gaussian", (0.0, 1.0), 0)
    assert spec.variance_for(0) == 0.0 and spec.variance_for(1) == 1.0


def test_perturb_table_keys_by_attribute_name():
    rng = np.random.default_rng(0)
    t = make_table(rng.normal(size=(30, 3)), ["p", "q"] * 15, names=["u", "v", "w"])
    cols = perturb_table(t, Absolute(1.0), seed=3)
    # A site holding only "w" draws the same noise for it.
    solo = make_table(t.values[:, 2:], t.labels, names=["w"])
    (w,) = perturb_table(solo, Absolute(1.0), seed=3)
    assert np.array_equal(cols[2].values, w.values)
    assert attribute_key("u") != attribute_key("v")
    assert [c.attribute_name for c in cols] == ["u", "v", "w"]
