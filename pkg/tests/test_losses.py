import numpy as np
import pytest

import oracles as O
from kd_toolkit.adjustment import AdjustmentMode
from kd_toolkit.dynamic_temperature import DtdConfig, dynamic_tau
from kd_toolkit.losses import (DistillSpec, evaluate, grad_student_logits, loss_dtd, loss_ka, loss_kd,
                               loss_total)
from kd_toolkit.soft_targets import kd_loss, kl_divergence, softmax_tau


def batch(rng, n, k, scale=1.0):
    return rng.normal(scale=scale, size=(n, k)), rng.normal(scale=scale, size=(n, k)), rng.integers(0, k, n)


def correct_teacher(rng, n, k):
    t = rng.normal(size=(n, k))
    y = np.argmax(t, axis=1)
    return t, y


def test_spec_validation():
    with pytest.raises(ValueError):
        DistillSpec("kd", adjust=AdjustmentMode("ps"))
    with pytest.raises(ValueError):
        DistillSpec("foo")
    with pytest.raises(ValueError):
        DistillSpec("kd", alpha=-0.1)
    with pytest.raises(ValueError):
        evaluate(DistillSpec("kd"), np.zeros((1, 2)) + [1, 0], None, [0])


def test_sum_reduction(rng):
    v, t, y = batch(rng, 6, 4)
    for spec in (DistillSpec("kd"), DistillSpec("dtd-ka", adjust=AdjustmentMode("lsr")), DistillSpec("ce")):
        bd, _ = evaluate(spec, v, t, y)
        assert bd.total == pytest.approx(bd.per_sample.sum(), abs=1e-9)
        assert bd.total == pytest.approx(bd.kl_part + bd.ce_part, abs=1e-9)


def test_ce_kind_ignores_teacher(rng):
    v, t, y = batch(rng, 3, 5)
    a = evaluate(DistillSpec("ce"), v, t, y)
    b = evaluate(DistillSpec("ce"), v, None, y)
    assert a[0].total == b[0].total
    np.testing.assert_array_equal(a[1], b[1])


def test_kd_matches_soft_targets(rng):
    v, t, y = batch(rng, 5, 3)
    assert loss_kd(v, t, y, 4.0, 0.7).total == pytest.approx(kd_loss(v, t, y, 4.0, 0.7), abs=1e-10)


def test_ka_zero_at_identity(rng):
    t, y = correct_teacher(rng, 4, 5)
    assert loss_ka(t, t, y, 4.0, AdjustmentMode("ps")).total == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("mode", [None, "lsr", "ps"])
def test_ka_oracle(rng, mode):
    v, t, y = batch(rng, 2, 4)
    y[0] = (np.argmax(t[0]) + 1) % 4  # at least one misjudged row
    got = loss_ka(v, t, y, 3.0, AdjustmentMode(mode)).total
    assert got == pytest.approx(float(O.loss("ka", v, t, y, tau=3.0, mode=mode)), abs=1e-10)


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("scheme", ["flsw", "cwsm"])
def test_dtd_oracle(rng, scheme, gamma):
    v, t, y = batch(rng, 6, 5, scale=2.0)
    cfg = DtdConfig(scheme, gamma)
    got = loss_dtd(v, t, y, cfg, 0.7).total
    want = O.loss("dtd", v, t, y, alpha=0.7, scheme=scheme, gamma=gamma)
    assert got == pytest.approx(float(want), abs=1e-10)


@pytest.mark.parametrize("scheme", ["flsw", "cwsm"])
@pytest.mark.parametrize("mode", ["lsr", "ps"])
def test_dtd_ka_oracle(rng, scheme, mode):
    v, t, y = batch(rng, 3, 5, scale=2.0)
    got = loss_total(v, t, y, DtdConfig(scheme), AdjustmentMode(mode))
    want = O.loss("dtd-ka", v, t, y, scheme=scheme, mode=mode)
    assert got.total == pytest.approx(float(want), abs=1e-10)
    assert np.all(got.per_sample >= 0)


def test_dtd_beta_zero_is_kd(rng):
    v, t, y = batch(rng, 7, 6)
    got = loss_dtd(v, t, y, DtdConfig(tau0=4.0, beta=0.0), 0.7).total
    assert got == pytest.approx(kd_loss(v, t, y, 4.0, 0.7), abs=1e-10)


def test_dtd_identity_has_no_kl(rng):
    t, y = correct_teacher(rng, 5, 4)
    bd = loss_dtd(t, t, y, DtdConfig("cwsm"), 0.7)
    assert bd.kl_part == pytest.approx(0.0, abs=1e-12)


def test_degeneracy_chain(rng):
    t, y = correct_teacher(rng, 8, 5)
    v = rng.normal(size=(8, 5))
    a = loss_total(v, t, y, DtdConfig(tau0=4.0, beta=0.0), AdjustmentMode()).total
    b = loss_ka(v, t, y, 4.0, AdjustmentMode()).total
    c = kd_loss(v, t, y, 4.0, 1.0)
    d = 16.0 * kl_divergence(softmax_tau(t, 4.0), softmax_tau(v, 4.0)).sum()
    assert abs(a - b) < 1e-10 and abs(b - c) < 1e-10 and abs(c - d) < 1e-10


def test_tau_stats_and_report(rng):
    v, t, y = batch(rng, 8, 4, scale=3.0)
    bd, _ = evaluate(DistillSpec("dtd-ka", adjust=AdjustmentMode("ps")), v, t, y, sample_ids=np.arange(100, 108))
    taus, _, _ = dynamic_tau(v, t, DtdConfig())
    assert bd.tau_stats == taus.stats()
    assert bd.adjustment.misjudged_count == int((np.argmax(t, 1) != y).sum())
    assert np.all(bd.adjustment.misjudged_ids >= 100)
    rec = bd.to_record()
    assert rec["loss"] == bd.total and rec["clamped_count"] == taus.clamped_count


def test_zero_gradient_at_minimum(rng):
    t, y = correct_teacher(rng, 4, 6)
    g = grad_student_logits(DistillSpec("dtd-ka", dtd=DtdConfig(beta=0.0)), t, t, y)
    np.testing.assert_allclose(g, 0.0, atol=1e-12)


def test_kd_alpha_one_closed_form(rng):
    v, t, y = batch(rng, 5, 4)
    g = grad_student_logits(DistillSpec("kd", tau=3.0, alpha=1.0), v, t, y)
    np.testing.assert_allclose(g, 3.0 * (softmax_tau(v, 3.0) - softmax_tau(t, 3.0)), rtol=1e-12, atol=1e-15)


def test_ce_gradient(rng):
    v, _, y = batch(rng, 4, 3)
    g = grad_student_logits(DistillSpec("ce"), v, None, y)
    np.testing.assert_allclose(g, softmax_tau(v) - np.eye(3)[y], atol=1e-15)


SPECS = {
    "kd": (DistillSpec("kd"), dict(kind="kd", tau=4.0, alpha=0.7)),
    "dtd-flsw-g2": (DistillSpec("dtd", alpha=0.4, dtd=DtdConfig("flsw", 2.0)),
                    dict(kind="dtd", alpha=0.4, scheme="flsw", gamma=2.0)),
    "dtd-flsw-g05": (DistillSpec("dtd", dtd=DtdConfig("flsw", 0.5)), dict(kind="dtd", scheme="flsw", gamma=0.5)),
    "dtd-ka-cwsm-lsr": (DistillSpec("dtd-ka", adjust=AdjustmentMode("lsr", 0.9), dtd=DtdConfig("cwsm")),
                        dict(kind="dtd-ka", scheme="cwsm", mode="lsr", eps=0.9)),
    "dtd-ka-flsw-ps": (DistillSpec("dtd-ka", adjust=AdjustmentMode("ps"), dtd=DtdConfig("flsw", tau0=6.0, beta=25.0)),
                       dict(kind="dtd-ka", scheme="flsw", mode="ps", tau0=6.0, beta=25.0)),
}


@pytest.mark.parametrize("name", list(SPECS))
def test_gradient_richardson(rng, name):
    """Tight check against Richardson-extrapolated differences of the oracle loss."""
    spec, kw = SPECS[name][0], dict(SPECS[name][1])
    kind = kw.pop("kind")
    for _ in range(5):
        v, t, y = batch(rng, 4, 5, scale=1.5)
        g = grad_student_logits(spec, v, t, y)

        def f(V):
            return O.loss(kind, V, t, y, **kw)

        d1, d2 = O.central_fd(f, v, 1e-3), O.central_fd(f, v, 5e-4)
        rich = ((4 * d2 - d1) / 3).astype(float)
        np.testing.assert_allclose(g, rich, rtol=1e-6, atol=1e-9)


def test_clamped_samples_pass_no_tau_gradient(rng):
    v = np.array([[4.0, 0.0, 0.0], [0.0, 0.1, 0.0]])
    t = np.array([[0.0, 4.0, 0.0], [0.0, 0.2, 0.1]])
    y = np.array([1, 1])
    spec = DistillSpec("dtd", dtd=DtdConfig("flsw"))
    bd, g = evaluate(spec, v, t, y)
    assert bd.tau_stats[3] >= 1
    fd = O.central_fd(lambda V: O.loss("dtd", V, t, y, alpha=0.7), v).astype(float)
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-8)


def test_aux_term(rng):
    v, t, y = batch(rng, 3, 4)
    gx = rng.normal(size=v.shape)
    base, g0 = evaluate(DistillSpec("kd"), v, t, y)
    bd, g = evaluate(DistillSpec("kd"), v, t, y, aux=(1.5, gx))
    assert bd.total == pytest.approx(base.total + 1.5)
    np.testing.assert_allclose(g, g0 + gx)


def test_losses_finite_on_extreme_logits(rng):
    for spec in (DistillSpec("kd"), DistillSpec("dtd-ka", adjust=AdjustmentMode("lsr")),
                 DistillSpec("dtd", dtd=DtdConfig("cwsm"))):
        v, t, y = batch(rng, 8, 10, scale=200.0)
        bd, g = evaluate(spec, v, t, y)
        assert np.isfinite(bd.total) and np.all(np.isfinite(g))
