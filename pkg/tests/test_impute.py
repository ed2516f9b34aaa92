import numpy as np
import pytest

from survhte.impute import (ImputeMethod, SurvivalImputer, impute_ipcw_t, impute_margin,
                            impute_pseudo_obs, km_mean, loo_km_means, pseudo_values,
                            write_imputed_csv)
from survhte.survcurve import fit_km, rmst

IMPUTERS = (impute_margin, impute_ipcw_t, impute_pseudo_obs)


def brute_km_mean(t, e):
    c = fit_km(t, e)
    return rmst(c, c.t_max) if c.t_max > 0 else 0.0


def brute_pseudo(t, e):
    n = len(t)
    full = brute_km_mean(t, e)
    loo = np.array([brute_km_mean(np.delete(t, i), np.delete(e, i)) for i in range(n)])
    return n * full - (n - 1) * loo


def test_km_mean_matches_area():
    rng = np.random.default_rng(0)
    t = rng.exponential(size=60)
    e = rng.integers(0, 2, 60)
    assert km_mean(t, e) == pytest.approx(brute_km_mean(t, e), abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_fast_jackknife_equals_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = 40
    t = np.round(rng.exponential(size=n), 1)  # rounding forces ties
    e = rng.integers(0, 2, n)
    assert np.allclose(pseudo_values(t, e), brute_pseudo(t, e), atol=1e-10)
    loo = np.array([brute_km_mean(np.delete(t, i), np.delete(e, i)) for i in range(n)])
    assert np.allclose(loo_km_means(t, e), loo, atol=1e-10)


def test_add_one_matches_refit():
    rng = np.random.default_rng(3)
    t = rng.exponential(size=30)
    e = rng.integers(0, 2, 30)
    imp = SurvivalImputer("pseudo_obs", replace_uncensored=True).fit(t, e)
    new_t = np.array([0.01, t[4], 0.5, t.max() + 1.0])
    new_e = np.array([1, 0, 0, 1])
    got = imp.transform(new_t, new_e).surrogate
    for k in range(4):
        aug_t = np.append(t, new_t[k])
        aug_e = np.append(e, new_e[k])
        raw = 31 * brute_km_mean(aug_t, aug_e) - 30 * brute_km_mean(t, e)
        expect = max(raw, new_t[k]) if new_e[k] == 0 else raw
        assert got[k] == pytest.approx(expect, abs=1e-10)


@pytest.mark.parametrize("fn", IMPUTERS)
def test_no_censoring_collapse(fn):
    t = np.random.default_rng(1).exponential(size=50)
    out = fn(t, np.ones(50))
    assert np.allclose(out.surrogate, t)


def test_pseudo_replace_uncensored_without_censoring_is_identity():
    t = np.random.default_rng(2).exponential(size=50)
    out = impute_pseudo_obs(t, np.ones(50), replace_uncensored=True)
    assert np.allclose(out.surrogate, t)


@pytest.mark.parametrize("fn", IMPUTERS)
def test_floor_rule(fn):
    rng = np.random.default_rng(4)
    t = rng.exponential(size=500)
    e = rng.integers(0, 2, 500)
    out = fn(t, e)
    cens = e == 0
    assert np.all(out.surrogate[cens] >= t[cens])
    assert np.all(out.floored[~cens] == 0) or fn is impute_pseudo_obs


def test_margin_matches_conditional_mean_by_hand():
    # events at 1, 3, 4 and a censored 2: KM after 2 has mass at 3 and 4
    out = impute_margin([1, 2, 3, 4], [1, 0, 1, 1])
    assert out.surrogate[1] == pytest.approx(3.5)


def test_ipcw_t_mean_of_later_events():
    out = impute_ipcw_t([1, 2, 3, 5], [1, 0, 1, 1])
    assert out.surrogate[1] == pytest.approx(4.0)


def test_ipcw_t_no_later_events_falls_back_to_time():
    out = impute_ipcw_t([1, 5], [1, 0])
    assert out.surrogate[1] == pytest.approx(5.0)


def test_per_arm_requires_treatment():
    with pytest.raises(ValueError):
        SurvivalImputer("margin", per_arm=True).fit([1, 2], [1, 1])


def test_per_arm_uses_arm_reference():
    t = np.array([1.0, 2.0, 10.0, 20.0, 1.5, 15.0])
    e = np.array([1, 1, 1, 1, 0, 0])
    w = np.array([0, 0, 1, 1, 0, 1])
    out = SurvivalImputer("margin", per_arm=True).fit_transform(t, e, w)
    assert out.surrogate[4] == pytest.approx(2.0)
    assert out.surrogate[5] == pytest.approx(20.0)


def test_pseudo_needs_two_units():
    with pytest.raises(ValueError):
        impute_pseudo_obs([1.0], [0])


def test_method_enum_and_csv(tmp_path):
    out = impute_margin([1.0, 2.0, 3.0], [1, 0, 1])
    assert out.method is ImputeMethod.MARGIN
    p = tmp_path / "imp.csv"
    write_imputed_csv(out, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "id,method,surrogate,floored" and len(lines) == 4
