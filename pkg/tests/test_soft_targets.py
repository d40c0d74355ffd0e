import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kd_toolkit.soft_targets import (argmax_rows, cross_entropy, kd_loss, kd_loss_per_sample, kl_divergence,
                                     softmax_tau)

# logits on a 1/8 grid: equal values tie exactly, distinct ones stay resolvable after exp
finite = st.integers(-240, 240).map(lambda i: i / 8)
logit_rows = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(2, 7)), elements=finite)


def test_symmetric_row_is_uniform():
    np.testing.assert_allclose(softmax_tau([[0.0, 0.0]], 5.0), [[0.5, 0.5]], rtol=0, atol=1e-15)


def test_ln2_row():
    np.testing.assert_allclose(softmax_tau([[math.log(2), 0.0]], 1.0), [[2 / 3, 1 / 3]], rtol=1e-14)


def test_high_temperature_flattens():
    p = softmax_tau([[1.0, 0.0]], 100.0)
    assert np.all(np.abs(p - 0.5) < 0.01)


def test_per_row_temperature():
    x = np.array([[1.0, 0.0], [1.0, 0.0]])
    p = softmax_tau(x, np.array([1.0, 2.0]))
    np.testing.assert_allclose(p[0], softmax_tau(x[:1], 1.0)[0])
    np.testing.assert_allclose(p[1], softmax_tau(x[1:], 2.0)[0])


def test_no_overflow_on_huge_logits():
    p = softmax_tau([[1e4, 0.0, -1e4]], 1.0)
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(), 1.0)


@pytest.mark.parametrize("tau", [0.0, -1.0, np.inf, np.nan])
def test_bad_tau_rejected(tau):
    with pytest.raises(ValueError):
        softmax_tau([[1.0, 2.0]], tau)


@pytest.mark.parametrize("bad", [[[np.nan, 1.0]], [[np.inf, 0.0]], [[1.0]], [[[1.0, 2.0]]]])
def test_bad_logits_rejected(bad):
    with pytest.raises(ValueError):
        softmax_tau(bad, 1.0)


@settings(max_examples=200, deadline=None)
@given(x=logit_rows, tau=st.floats(0.05, 50))
def test_softmax_properties(x, tau):
    p = softmax_tau(x, tau)
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(p >= 0)
    np.testing.assert_array_equal(argmax_rows(p), argmax_rows(x))
    np.testing.assert_allclose(softmax_tau(x + 7.25, tau), p, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(x=logit_rows, t1=st.floats(0.1, 20), dt=st.floats(0.01, 20))
def test_monotone_flattening(x, t1, dt):
    def spread(p):
        return p.max(axis=1) - p.min(axis=1)

    assert np.all(spread(softmax_tau(x, t1 + dt)) <= spread(softmax_tau(x, t1)) + 1e-12)


def test_tau_one_is_plain_softmax(rng):
    x = rng.normal(size=(4, 6))
    e = np.exp(x)
    np.testing.assert_allclose(softmax_tau(x), e / e.sum(1, keepdims=True), rtol=1e-14)


def test_ties_go_to_lowest_index():
    np.testing.assert_array_equal(argmax_rows([[1.0, 3.0, 3.0], [2.0, 2.0, 0.0]]), [1, 0])


def test_kl_hand_value():
    got = kl_divergence([[0.5, 0.5]], [[0.9, 0.1]])[0]
    assert got == pytest.approx(0.5 * math.log(0.5 / 0.9) + 0.5 * math.log(0.5 / 0.1), rel=1e-14)


def test_kl_against_summation_oracle():
    q = np.array([1 - 3e-9, 1e-9, 1e-9, 1e-9])
    p = np.full(4, 0.25)
    oracle = sum(a * math.log(a / b) for a, b in zip(q, p))
    assert kl_divergence(q, p)[0] == pytest.approx(oracle, rel=1e-12)


def test_kl_identity_and_shape_check(rng):
    p = softmax_tau(rng.normal(size=(5, 3)))
    np.testing.assert_array_equal(kl_divergence(p, p), 0.0)
    with pytest.raises(ValueError):
        kl_divergence(p, p[:, :2])


@settings(max_examples=100, deadline=None)
@given(a=logit_rows)
def test_kl_nonnegative(a):
    p = softmax_tau(a)
    q = softmax_tau(a[::-1])
    assert np.all(kl_divergence(q, p) >= 0)


def test_cross_entropy_cases():
    assert cross_entropy([1], [[0.25, 0.75]])[0] == pytest.approx(-math.log(0.75))
    np.testing.assert_allclose(cross_entropy([3, 7], np.full((2, 10), 0.1)), math.log(10))
    eps = 1e-6
    assert cross_entropy([0], [[1 - eps, eps]])[0] == pytest.approx(-math.log(1 - eps))
    with pytest.raises(ValueError):
        cross_entropy([2], [[0.5, 0.5]])


def test_kd_loss_zero_at_identity():
    v = np.array([[800.0, 0.0, 0.0]])  # p at tau=1 is one-hot in double precision
    assert kd_loss(v, v, [0], tau=4.0, alpha=0.7) == 0.0


def test_kd_loss_alpha_one_ignores_labels(rng):
    v, t = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    assert kd_loss(v, t, [0, 1, 2], 3.0, 1.0) == kd_loss(v, t, [3, 3, 3], 3.0, 1.0)


def test_kd_loss_direct_oracle():
    v = np.array([[0.3, -1.2, 2.0], [1.1, 0.4, -0.7]])
    t = np.array([[1.5, 0.2, -0.4], [-0.3, 2.2, 0.9]])
    y = [2, 1]
    tau, alpha = 4.0, 0.7
    total = 0.0
    for vi, ti, yi in zip(v, t, y):
        q = [math.exp(a / tau) for a in ti]
        q = [a / sum(q) for a in q]
        p = [math.exp(a / tau) for a in vi]
        p = [a / sum(p) for a in p]
        p1 = [math.exp(a) for a in vi]
        p1 = [a / sum(p1) for a in p1]
        kl = sum(a * math.log(a / b) for a, b in zip(q, p))
        total += alpha * tau**2 * kl - (1 - alpha) * math.log(p1[yi])
    assert kd_loss(v, t, y, tau, alpha) == pytest.approx(total, abs=1e-10)


def test_kl_and_ce_forms_differ_by_target_entropy(rng):
    v, t = rng.normal(size=(4, 5)), rng.normal(size=(4, 5))
    y = rng.integers(0, 5, 4)
    q = softmax_tau(t, 3.0)
    ent = -(q * np.log(q)).sum(1)
    diff = kd_loss_per_sample(v, t, y, 3.0, 0.6, "ce") - kd_loss_per_sample(v, t, y, 3.0, 0.6, "kl")
    np.testing.assert_allclose(diff, 0.6 * 9.0 * ent, rtol=1e-12)


def test_kd_loss_rejects_bad_alpha(rng):
    v = rng.normal(size=(2, 3))
    with pytest.raises(ValueError):
        kd_loss(v, v, [0, 1], 2.0, 1.5)
