import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kd_toolkit.dynamic_temperature import (DtdConfig, cosine_agreement, dynamic_tau, normalize_l1,
                                            normalize_l1_vjp, tau_per_sample, weights_cwsm, weights_flsw)


def test_config_validation():
    with pytest.raises(ValueError):
        DtdConfig(tau0=3.0, tau_min=3.0)
    with pytest.raises(ValueError):
        DtdConfig(scheme="other")
    with pytest.raises(ValueError):
        DtdConfig(gamma=-1)


def test_flsw_fixtures():
    t = np.array([[1.0, 2.0, -0.5]])
    assert weights_flsw(3.0 * t, t)[0] == pytest.approx(0.0, abs=1e-15)
    assert weights_flsw(-t, t, gamma=2.0)[0] == pytest.approx(4.0)
    # cos 60 degrees
    v = np.array([[1.0, 0.0]])
    u = np.array([[0.5, math.sqrt(3) / 2]])
    assert weights_flsw(v, u, 1.0)[0] == pytest.approx(0.5, abs=1e-15)


def test_flsw_zero_norm_row_rejected():
    with pytest.raises(ValueError):
        weights_flsw([[0.0, 0.0]], [[1.0, 0.0]])


def test_flsw_range(rng):
    v, t = rng.normal(size=(200, 5)), rng.normal(size=(200, 5))
    c = cosine_agreement(v, t)
    assert np.all((-1 <= c) & (c <= 1))
    for g in (0.5, 1.0, 2.0):
        w = weights_flsw(v, t, g)
        assert np.all((0 <= w) & (w <= 2**g))


def test_cwsm_fixtures():
    assert weights_cwsm([[0.0, 0.0, 0.0, 0.0]])[0] == pytest.approx(4.0)
    assert weights_cwsm([[math.log(3), 0.0]])[0] == pytest.approx(4 / 3)
    assert weights_cwsm([[50.0, 0.0, 0.0]])[0] == pytest.approx(1.0)


def test_cwsm_bounds(rng):
    v = rng.normal(scale=3, size=(300, 6))
    w = weights_cwsm(v)
    assert np.all((w >= 1) & (w <= 6 + 1e-12))


def test_normalize_l1():
    np.testing.assert_allclose(normalize_l1([2.0, 2.0]), [0.5, 0.5])
    np.testing.assert_allclose(normalize_l1([3.0, 1.0]), [0.75, 0.25])
    np.testing.assert_allclose(normalize_l1([0.0, 0.0, 0.0]), [1 / 3] * 3)
    w = normalize_l1([0.3, 0.9, 0.2])
    np.testing.assert_array_equal(normalize_l1(w), w)
    with pytest.raises(ValueError):
        normalize_l1([1.0, -1.0])


def test_normalize_l1_vjp_matches_fd(rng):
    w = rng.uniform(0.1, 2, 5)
    g = rng.normal(size=5)
    h = 1e-6
    fd = [(g @ normalize_l1(w + h * e) - g @ normalize_l1(w - h * e)) / (2 * h) for e in np.eye(5)]
    np.testing.assert_allclose(normalize_l1_vjp(w, g), fd, rtol=1e-7, atol=1e-9)


def test_tau_fixture():
    tv = tau_per_sample([0.75, 0.25], 10.0, 40.0, 3.0)
    np.testing.assert_allclose(tv.raw, [0.0, 20.0], atol=1e-12)
    np.testing.assert_allclose(tv.tau, [3.0, 20.0], atol=1e-12)
    assert tv.clamped_count == 1
    assert tv.stats() == (3.0, 11.5, 20.0, 1)


def test_uniform_and_zero_beta():
    np.testing.assert_array_equal(tau_per_sample(np.full(7, 1 / 7)).tau, 10.0)
    np.testing.assert_array_equal(tau_per_sample([0.9, 0.1], beta=0.0).tau, 10.0)


@settings(max_examples=200, deadline=None)
@given(raw=st.lists(st.floats(0, 10), min_size=1, max_size=40), tau0=st.floats(4, 20), beta=st.floats(0, 100))
def test_tau_properties(raw, tau0, beta):
    w = normalize_l1(np.array(raw))
    tv = tau_per_sample(w, tau0, beta, 3.0)
    assert abs(tv.raw.mean() - tau0) < 1e-9
    assert np.all(tv.tau >= 3.0) and np.all(np.isfinite(tv.tau))
    order = np.argsort(w, kind="stable")
    assert np.all(np.diff(tv.tau[order]) <= 1e-9)


def test_dynamic_tau_all_zero_weights_falls_back():
    t = np.array([[1.0, 2.0], [3.0, -1.0]])
    taus, w, w_hat = dynamic_tau(2.0 * t, t, DtdConfig("flsw"))
    np.testing.assert_allclose(w, 0.0, atol=1e-15)
    np.testing.assert_allclose(taus.tau, 10.0, atol=1e-12)


def test_short_batch_uses_its_own_size():
    taus, _, w_hat = dynamic_tau(np.array([[3.0, 0.0], [0.0, 0.0], [0.0, 3.0]]), np.ones((3, 2)), DtdConfig("cwsm"))
    np.testing.assert_allclose(taus.raw, 10 + (1 / 3 - w_hat) * 40, rtol=1e-14)
