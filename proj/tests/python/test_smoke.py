import math

import numpy as np
import pytest

import pwrd


def test_diagonal_weights():
    w = pwrd.pwrd_weights(np.diag([1.0, 4.0]), np.array([0.5, 0.5]))
    assert np.allclose(w["omega"], [0.8, 0.2], atol=1e-12, rtol=0)
    assert w["clipped_groups"] == []


def test_clipping_and_relative_efficiency():
    s = np.array([[1.0, 0.9], [0.9, 1.0]])
    w = pwrd.pwrd_weights(s, np.array([0.1, 1.0]))
    assert list(w["omega"]) == [0.0, 1.0]
    assert w["clipped_groups"] == [0]
    re = pwrd.pitman_relative_efficiency(np.array([0.8, 0.2]), np.array([0.5, 0.5]),
                                         np.array([0.5, 0.5]), np.diag([1.0, 4.0]))
    assert re == pytest.approx(1.5625, rel=1e-12)


def test_external_summary():
    se = np.array([0.023, 0.019, 0.021, 0.019])
    p0 = np.array([0.25, 0.5, 0.75, 1.0])
    r = pwrd.aggregate_external(np.array([-0.001, -0.030, -0.035, -0.035]), np.diag(se**2), p0)
    expect = p0 / se**2
    assert np.allclose(r["omega"], expect / expect.sum(), rtol=1e-12)
    assert math.isinf(r["test"]["df"])


def test_errors_raise():
    with pytest.raises(pwrd.PwrdError):
        pwrd.pwrd_weights(np.eye(2), np.zeros(2))
    with pytest.raises(ValueError):
        pwrd.pwrd_weights(np.ones((2, 2)), np.array([0.5, 0.5]))


def test_simulate_and_analyze():
    panel = pwrd.simulate(replicate=3)
    assert panel.n_clusters == 52
    assert len(panel.groups()) == 16
    again = pwrd.Panel.from_csv(panel.to_csv())
    assert again.to_csv() == panel.to_csv()
    r = pwrd.analyze(panel, method="pwrd")
    assert sum(r["weights"]["omega"]) == pytest.approx(1.0, abs=1e-12)
    assert r["slope"] > 0
    f = pwrd.analyze(panel, method="flat")
    assert r["slope"] >= f["slope"] - 1e-12
    m = pwrd.analyze(panel, method="mixed")
    assert 0 <= m["icc"] < 1


def test_calibrated_profile():
    got = pwrd.expected_year_proportions()
    assert np.allclose(got, [0.383, 0.543, 0.611, 0.694], atol=0.02)


def test_power_is_deterministic():
    sc = pwrd.default_scenario()
    # Needs more clusters than groups for a nonsingular covariance.
    sc["n_clusters"] = 24
    one, _ = pwrd.estimate_power(sc, grid=[0.0, 4.0], methods=["pwrd", "flat"], n_reps=100, workers=1)
    two, _ = pwrd.estimate_power(sc, grid=[0.0, 4.0], methods=["pwrd", "flat"], n_reps=100, workers=2)
    assert [r["rejections"] for r in one] == [r["rejections"] for r in two]
    assert {r["method"] for r in one} == {"pwrd", "flat"}
