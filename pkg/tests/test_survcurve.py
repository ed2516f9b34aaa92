import numpy as np
import pytest

from survhte.survcurve import (SurvivalCurve, conditional_residual_mean, eval_curve,
                               fit_km, km_table, rmst)


def test_km_without_censoring_is_ecdf_complement():
    rng = np.random.default_rng(0)
    t = rng.exponential(size=300)
    c = fit_km(t, np.ones(300))
    probe = np.linspace(0, t.max() * 1.1, 500)
    assert np.allclose(c(probe), 1 - (t[None, :] <= probe[:, None]).mean(axis=1))


def test_km_hand_example():
    # times 1,2+,3,4 : S = 3/4 after 1, then 3/4 * 1/2 after 3, then 0
    c = fit_km([1, 2, 3, 4], [1, 0, 1, 1])
    assert list(c.grid) == [1, 3, 4]
    assert np.allclose(c.probs, [0.75, 0.375, 0.0])


def test_km_censored_at_tie_stays_at_risk():
    c = fit_km([2, 2, 3], [1, 0, 1])
    assert c(2.0) == pytest.approx(2 / 3)


def test_rmst_is_area_and_plateaus():
    c = SurvivalCurve([1.0, 2.0], [0.5, 0.25])
    assert rmst(c, 1.0) == pytest.approx(1.0)
    assert rmst(c, 2.0) == pytest.approx(1.5)
    assert rmst(c, 4.0) == pytest.approx(1.5 + 0.5)
    with pytest.raises(ValueError):
        rmst(c, 0.0)


def test_rmst_without_censoring_equals_truncated_mean():
    rng = np.random.default_rng(1)
    t = rng.gamma(2.0, size=500)
    h = 2.5
    assert rmst(fit_km(t, np.ones(500)), h) == pytest.approx(np.minimum(t, h).mean())


def test_conditional_residual_mean():
    c = fit_km([1, 2, 3, 4], [1, 1, 1, 1])
    # from t0=2.5: remaining mass at 3 and 4 with equal weight -> mean 3.5
    assert conditional_residual_mean(c, 2.5) == pytest.approx(3.5)
    assert conditional_residual_mean(c, 10.0) == pytest.approx(10.0)


def test_curve_validation():
    with pytest.raises(ValueError):
        SurvivalCurve([1.0, 2.0], [0.5, 0.6])
    with pytest.raises(ValueError):
        SurvivalCurve([2.0, 1.0], [0.5, 0.4])
    with pytest.raises(ValueError):
        eval_curve(SurvivalCurve([1.0], [0.5]), -1.0)


def test_km_table_counts():
    t, n, d, r = km_table([1, 1, 2, 3], [1, 0, 1, 0])
    assert list(n) == [4, 2, 1] and list(d) == [1, 1, 0] and list(r) == [2, 1, 1]


def test_empty_input_rejected():
    with pytest.raises(ValueError):
        fit_km([], [])
