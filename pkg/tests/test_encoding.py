import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from bodykit import diffnet as dn
from bodykit.encoding import EncoderMismatch, FourierEncoder


def test_zero_input():
    enc = FourierEncoder(4, 6)
    out = enc.encode(np.zeros(4))
    assert np.array_equal(out[:6], np.ones(6)) and np.array_equal(out[6:], np.zeros(6))


def test_single_frequency_quarter():
    enc = FourierEncoder(1, 1, B=np.array([[0.25]]))
    assert np.allclose(enc.encode(np.array([1.0])), [0.0, 1.0], atol=1e-15)


def test_dimension_mismatch():
    with pytest.raises(ValueError, match="3 input features"):
        FourierEncoder(3, 2).encode(np.zeros(4))


def test_per_coordinate_layout():
    enc = FourierEncoder(37, 8, mode="per_coordinate")
    assert enc.out_dim == 37 * 16
    y = np.random.default_rng(0).normal(size=37)
    out = enc.encode(y).reshape(37, 16)
    k = 5
    assert np.allclose(out[k, :8], np.cos(2 * np.pi * y[k] * enc.B[k]))
    assert np.allclose(out[k, 8:], np.sin(2 * np.pi * y[k] * enc.B[k]))


def test_f_zero_passthrough():
    y = np.arange(3.0)
    assert np.array_equal(FourierEncoder(3, 0).encode(y), y)


def test_tensor_path_matches_numpy():
    enc = FourierEncoder(5, 4, mode="per_coordinate", seed=3)
    y = np.random.default_rng(1).normal(size=(2, 5))
    assert np.allclose(enc.encode(dn.Tensor(y)).data, enc.encode(y))


def test_seed_determinism_and_hash():
    a, b = FourierEncoder(6, 8, seed=11), FourierEncoder(6, 8, seed=11)
    assert np.array_equal(a.B, b.B) and a.hash == b.hash
    assert FourierEncoder(6, 8, seed=12).hash != a.hash


def test_meta_round_trip_and_mismatch():
    enc = FourierEncoder(4, 3, sigma=0.5, seed=2)
    back = FourierEncoder.from_meta(enc.to_meta(), enc.B)
    assert back.hash == enc.hash
    with pytest.raises(EncoderMismatch):
        FourierEncoder.from_meta(enc.to_meta(), enc.B + 1e-3)
    with pytest.raises(EncoderMismatch):
        enc.check(FourierEncoder(4, 3, seed=9).hash)


vectors = arrays(np.float64, 7, elements=st.floats(-10, 10, allow_nan=False))


@settings(max_examples=80, deadline=None)
@given(vectors, st.integers(1, 16), st.integers(0, 1000))
def test_range_and_norm(y, f, seed):
    enc = FourierEncoder(7, f, seed=seed)
    out = enc.encode(y)
    assert out.shape == (2 * f,)
    assert np.all(np.abs(out) <= 1.0)
    assert np.sum(out ** 2) == pytest.approx(f, rel=1e-12)
    per = FourierEncoder(7, f, seed=seed, mode="per_coordinate").encode(y)
    assert np.sum(per ** 2) == pytest.approx(7 * f, rel=1e-12)
