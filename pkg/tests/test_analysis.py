import math

import numpy as np
import pytest

from kd_toolkit.analysis import accuracy, evaluate_logits, genetic_errors, top2_gap_curve


def test_accuracy_fixtures():
    eye = np.eye(3)
    assert accuracy(eye, [0, 1, 2]) == 1.0
    assert accuracy(eye, [1, 2, 0]) == 0.0
    assert accuracy(np.eye(4), [0, 1, 2, 0]) == 0.75
    with pytest.raises(ValueError):
        accuracy(eye, [0, 1])


def test_genetic_fixture():
    y = np.array([0, 1, 2, 0, 1, 2, 0, 1, 2, 0])
    s_pred = np.array([0, 2, 2, 1, 1, 0, 2, 1, 2, 1])
    t_pred = np.array([0, 2, 1, 1, 0, 1, 2, 1, 0, 2])
    g, t, r = genetic_errors(np.eye(3)[s_pred], np.eye(3)[t_pred], y)
    # student wrong at 1,3,5,6,9; teacher agrees at 1,3,6
    assert (g, t) == (3, 5) and r == pytest.approx(0.6)


def test_genetic_edge_cases():
    y = np.array([0, 1, 1])
    t = np.eye(2)[[1, 0, 1]]
    assert genetic_errors(t, t, y)[2] == 1.0
    assert genetic_errors(np.eye(2)[y], t, y) == (0, 0, 0.0)


def test_top2_extremes():
    th = [0.1, 0.5, 0.9]
    assert [c for _, c in top2_gap_curve(np.array([[50.0, 0, 0], [0, 50.0, 0]]), th)] == [0, 0, 0]
    assert [c for _, c in top2_gap_curve(np.zeros((4, 3)), th)] == [4, 4, 4]
    with pytest.raises(ValueError):
        top2_gap_curve(np.zeros((2, 3)), [0.5, 0.1])
    with pytest.raises(ValueError):
        top2_gap_curve(np.zeros((2, 1)), [0.5])


def test_top2_brute_force(rng):
    x = rng.normal(scale=2, size=(100, 5))
    th = np.linspace(0.05, 1, 20)
    rows = []
    for r in x:
        e = [math.exp(a) for a in r]
        p = sorted((a / sum(e) for a in e), reverse=True)
        rows.append(p[0] - p[1])
    want = [sum(g < h for g in rows) for h in th]
    assert [c for _, c in top2_gap_curve(x, th)] == want


def test_report_files(tmp_path, rng):
    s, t = rng.normal(size=(30, 4)), rng.normal(size=(30, 4))
    y = rng.integers(0, 4, 30)
    rep = evaluate_logits(s, t, y, [0.25, 0.5, 0.75, 1.0])
    g, tot, r = genetic_errors(s, t, y)
    assert (rep.genetic_errors, rep.total_errors) == (g, tot)
    assert rep.genetic_summary == f"{g}/{tot} = {100 * r:.2f}%"
    rep.to_csv(tmp_path / "e.csv")
    rep.curve_to_csv(tmp_path / "c.csv")
    assert len((tmp_path / "c.csv").read_text().splitlines()) == 5
    assert "genetic/total" in rep.summary()
