import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biofuse.errors import DecodeError, DimensionError, InsufficientDataError
from biofuse.fuse import (
    WhiteningStats,
    fit_whitening,
    fuse,
    mahalanobis_distance,
    tanh_normalize,
    tanh_squash,
    whiten,
)
from biofuse.gabor import FeatureVector


def fv(values, modality="face"):
    return FeatureVector(modality, np.asarray(values, dtype=float))


def test_whitening_worked_example():
    stats = fit_whitening([fv([0.0, 0.0]), fv([2.0, 2.0])])
    np.testing.assert_allclose(stats.mu, [1.0, 1.0])
    np.testing.assert_allclose(stats.sigma, [math.sqrt(2), math.sqrt(2)], rtol=1e-15)
    assert stats.modality == "face"


def test_whiten_example():
    stats = WhiteningStats("face", [1.0, 1.0], [2.0, 4.0])
    np.testing.assert_allclose(whiten(fv([3.0, 5.0]), stats).values, [1.0, 1.0])


def test_mahalanobis_example():
    stats = WhiteningStats("face", [0.0, 0.0], [1.0, 1.0])
    assert abs(mahalanobis_distance(fv([1.0, 1.0]), stats) - math.sqrt(2)) <= 1e-12


def test_tanh_value():
    expected = 0.5 * (math.tanh(1.0) + 1.0)
    assert tanh_squash(np.array([100.0]))[0] == pytest.approx(expected, abs=1e-15)
    assert round(expected, 6) == 0.880797
    assert tanh_squash(np.array([0.0]))[0] == 0.5


def test_tanh_extremes_stay_open():
    out = tanh_squash(np.array([-1e6, 1e6, -np.finfo(float).max, np.finfo(float).max]))
    assert np.all(out > 0.0) and np.all(out < 1.0)


def test_sigma_floor():
    stats = fit_whitening(np.array([[1.0, 0.0], [1.0, 2.0]]), modality="fingerprint")
    assert stats.sigma[0] == 1e-8
    assert np.all(np.isfinite(stats.apply(np.array([5.0, 1.0]))))


def test_fit_whitening_errors():
    with pytest.raises(InsufficientDataError):
        fit_whitening([fv([1.0])])
    with pytest.raises(DimensionError):
        fit_whitening([fv([1.0]), fv([1.0], "fingerprint")])
    with pytest.raises(DimensionError):
        fit_whitening([fv([1.0]), fv([1.0, 2.0])])
    with pytest.raises(ValueError):
        fit_whitening(np.zeros((3, 2)))


def test_fuse_average_and_dimension_check():
    out = fuse(fv([0.2, 0.4]), fv([0.6, 0.8], "fingerprint"))
    assert out.modality == "fused"
    np.testing.assert_allclose(out.values, [0.4, 0.6])
    with pytest.raises(DimensionError):
        fuse(fv([0.1]), fv([0.1, 0.2], "fingerprint"))


@settings(max_examples=100, deadline=None)
@given(
    k=st.integers(1, 12),
    n=st.integers(2, 10),
    scale=st.floats(0.01, 1000.0),
    seed=st.integers(0, 2**32 - 1),
)
def test_fusion_properties(k, n, scale, seed):
    rng = np.random.default_rng(seed)
    face = rng.normal(size=(n, k)) * rng.uniform(0.1, 50, size=k)
    finger = rng.normal(size=(n, k)) * rng.uniform(0.1, 50, size=k)
    sf = fit_whitening(face, modality="face")
    sp = fit_whitening(finger, modality="fingerprint")
    fused = fuse(tanh_normalize(whiten(fv(face[0]), sf)), tanh_normalize(whiten(fv(finger[0], "fingerprint"), sp)))
    assert fused.dim == k
    assert np.all(fused.values > 0) and np.all(fused.values < 1)
    # whitening removes a common positive rescale of the training data
    sf2 = fit_whitening(face * scale, modality="face")
    np.testing.assert_allclose(whiten(fv(face[0] * scale), sf2).values, whiten(fv(face[0]), sf).values,
                               rtol=1e-9, atol=1e-9)


def test_whitening_binary_round_trip(tmp_path):
    stats = WhiteningStats("fingerprint", [1.0, -2.0, 3.5], [0.5, 1e-8, 2.0])
    path = tmp_path / "w.bfws"
    stats.save(path)
    back = WhiteningStats.load(path)
    assert back.modality == "fingerprint" and back.floor == stats.floor
    np.testing.assert_array_equal(back.mu, stats.mu)
    np.testing.assert_array_equal(back.sigma, stats.sigma)
    with pytest.raises(DecodeError):
        WhiteningStats.from_bytes(path.read_bytes()[:-1])
    with pytest.raises(DecodeError):
        WhiteningStats.from_bytes(b"BFPC" + path.read_bytes()[4:])
