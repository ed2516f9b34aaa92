import math

import numpy as np
import pytest
from scipy import integrate, stats

from survhte import datagen as dg
from survhte.datagen import (CausalConfig, CausalKind, DatasetSpec, Estimand, Latents,
                             build_dataset, sample_covariates)
from survhte.rng import Stream, child_seed


def _units(**cols):
    n = len(next(iter(cols.values())))
    x = np.full((n, 5), 0.5)
    u = np.full((n, 2), 0.5)
    for k, v in cols.items():
        if k.startswith("x"):
            x[:, int(k[1]) - 1] = v
        else:
            u[:, int(k[1]) - 1] = v
    return Latents(x, u, np.zeros(n), np.arange(n, dtype=np.uint64))


RCT = CausalConfig(CausalKind.RCT50)
CPS = CausalConfig(CausalKind.OBS_CPS)
UCONF = CausalConfig(CausalKind.OBS_UCONF)


# ----------------------------------------------------------------- rng

def test_stream_is_order_independent():
    s = Stream(11, "tag")
    full = s.uniform(np.arange(100))
    part = s.uniform(np.arange(50, 100)[::-1])[::-1]
    assert np.array_equal(full[50:], part)


def test_stream_open_interval_and_tags_differ():
    u = Stream(3, "a").uniform(np.arange(10_000))
    v = Stream(3, "b").uniform(np.arange(10_000))
    assert u.min() > 0 and u.max() < 1
    assert abs(np.corrcoef(u, v)[0, 1]) < 0.05


def test_child_seed_depends_on_labels():
    assert child_seed(1, "x", 2) == child_seed(1, "x", 2)
    assert child_seed(1, "x", 2) != child_seed(1, "x", 3)


# ------------------------------------------------------------ configs

def test_config_invariants():
    with pytest.raises(ValueError):
        CausalConfig(CausalKind.RCT50, informative_censoring=True)
    with pytest.raises(ValueError):
        CausalConfig(CausalKind.OBS_CPS, latent_censoring=True)
    c = CausalConfig.from_name("OBS-UConf-InfC")
    assert c.informative_censoring and c.kind is CausalKind.OBS_UCONF
    assert CausalConfig.from_name("OBS-UConf-LatC").latent_censoring
    assert len(dg.ALL_CONFIGS) == 8


# ----------------------------------------------------------- covariates

def test_sample_covariates_deterministic():
    a = sample_covariates(3, 7)
    b = sample_covariates(3, 7)
    assert a.x.tobytes() == b.x.tobytes() and a.u.tobytes() == b.u.tobytes()


def test_sample_covariates_moments_and_support():
    lat = sample_covariates(50_000, 123)
    allc = np.hstack((lat.x, lat.u))
    assert np.all((allc.mean(axis=0) > 0.49) & (allc.mean(axis=0) < 0.51))
    assert allc.min() >= 0 and allc.max() <= 1


def test_sample_covariates_empty_request():
    with pytest.raises(ValueError):
        sample_covariates(0, 1)


def test_chunked_generation_matches_full():
    full = sample_covariates(200, 5)
    tail = sample_covariates(100, 5, index=np.arange(100, 200))
    assert np.array_equal(full.x[100:], tail.x)


def test_rows_do_not_depend_on_n():
    a = build_dataset(DatasetSpec("D", "OBS-CPS-InfC", 100, 4))
    b = build_dataset(DatasetSpec("D", "OBS-CPS-InfC", 300, 4))
    for f in ("x", "u", "w", "obs_time", "event", "t0", "t1"):
        assert np.array_equal(getattr(a, f), getattr(b, f)[:100])


# ------------------------------------------------------------ propensity

def test_propensity_examples():
    lat = _units(x1=[0.5, 0.9, 0.1, 0.5])
    assert np.all(dg.propensity_score(RCT, lat) == 0.5)
    assert np.all(dg.propensity_score(CausalConfig(CausalKind.RCT5), lat) == 0.05)
    assert dg.propensity_score(CPS, lat)[0] == pytest.approx(0.5625)
    nopos = dg.propensity_score(CausalConfig(CausalKind.OBS_NOPOS), lat)
    assert list(nopos) == [0.5, 1.0, 0.0, 0.5]


def test_nopos_positivity_violation_is_exact():
    ds = build_dataset(DatasetSpec("A", "OBS-NoPos", 5000, 2))
    x1 = ds.x[:, 0]
    assert np.all(ds.w[x1 > 0.8] == 1) and np.all(ds.w[x1 < 0.2] == 0)


# ------------------------------------------------------- event-time laws

def test_scenario_c_rates_by_hand():
    lat = _units(x1=[0.25], x2=[0.5], x3=[0.5])
    _, r0 = dg._event_law("C", RCT, lat, 0)
    _, r1 = dg._event_law("C", RCT, lat, 1)
    assert r0[0] == pytest.approx(6.75) and r1[0] == pytest.approx(7.15)
    tau = dg.true_cate("C", RCT, lat, Estimand.RMST, math.inf)
    assert tau[0] == pytest.approx(0.4)


def test_scenario_c_effect_vanishes_at_x1_009():
    lat = _units(x1=[0.09])
    assert dg.true_cate("C", RCT, lat, Estimand.RMST, 250.0)[0] == pytest.approx(0, abs=1e-9)


def test_scenario_b_log_time_mean():
    lat = _units(x1=[0.6], x2=[0.0], x3=[0.0])
    fam, mu = dg._event_law("B", RCT, lat, 0)
    assert fam == "lognormal" and mu[0] == pytest.approx(-1.85)
    assert math.exp(mu[0]) == pytest.approx(0.157, abs=1e-3)


def test_poisson_confounding_cancels_in_rate_difference():
    lat = sample_covariates(500, 9)
    for sc in ("C", "E"):
        d_u = dg._event_law(sc, UCONF, lat, 1)[1] - dg._event_law(sc, UCONF, lat, 0)[1]
        d_r = dg._event_law(sc, RCT, lat, 1)[1] - dg._event_law(sc, RCT, lat, 0)[1]
        assert np.allclose(d_u, d_r)


def test_poisson_rate_floor():
    lat = _units(x1=[0.5])
    _, lam = dg._event_law("C", RCT, lat, 0)
    assert lam.min() >= dg.POISSON_RATE_FLOOR


# ------------------------------------------------------------- censoring

def test_censoring_scenario_c_finite_branch():
    lat = _units(x4=np.full(2000, 0.3))
    c = dg.generate_censoring("C", RCT, lat, np.zeros(2000), np.zeros(2000), 4)
    assert set(np.unique(c[np.isfinite(c)])) == {2.0}
    assert np.mean(np.isinf(c)) == pytest.approx(0.6, abs=0.04)


def test_informative_censoring_zero_event_time_mean():
    n = 100_000
    lat = sample_covariates(n, 8)
    inf_cfg = CausalConfig(CausalKind.OBS_CPS, informative_censoring=True)
    c = dg.generate_censoring("A", inf_cfg, lat, np.zeros(n), np.zeros(n), 1,
                              informative_rate=(1.0, 0.1))
    assert c.mean() == pytest.approx(1.0, abs=0.05)


def test_latent_censoring_never_censored_below_threshold():
    lat = _units(u1=[0.5, 0.7], x4=[0.3, 0.3])
    cfg = CausalConfig(CausalKind.OBS_UCONF, latent_censoring=True)
    c = dg.generate_censoring("C", cfg, lat, np.zeros(2), np.zeros(2), 1)
    assert np.isinf(c[0]) and c[1] == 2.0


def test_negative_event_time_rejected():
    lat = _units(x1=[0.5])
    with pytest.raises(ValueError):
        dg.generate_censoring("A", RCT, lat, np.zeros(1), np.array([-1.0]), 1)


# ------------------------------------------------------------ true CATE

@pytest.mark.parametrize("scenario", ["A", "B", "C", "D", "E"])
@pytest.mark.parametrize("estimand", ["RMST", "SURV_PROB"])
def test_closed_form_truth_matches_simpson(scenario, estimand):
    """Closed-form arm means against composite Simpson on the survival law."""
    lat = sample_covariates(4, 21)
    h = 2.5 if scenario in ("A", "B", "D") else 9.5
    for w in (0, 1):
        fam, p = dg._event_law(scenario, RCT, lat, w)
        got = dg.arm_mean(scenario, RCT, lat, w, estimand, h)
        for i in range(len(lat)):
            if fam == "cox":
                surv = lambda t: np.exp(-np.sqrt(t) * np.exp(p[i]))
            elif fam == "lognormal":
                surv = lambda t: stats.norm.sf((np.log(np.maximum(t, 1e-300)) - p[i]))
            else:
                surv = lambda t: stats.poisson.sf(np.floor(t), p[i])
            if estimand == "SURV_PROB":
                ref = float(surv(h))
            elif fam == "poisson":
                ref = sum(integrate.quad(lambda t: float(surv(t)), k, min(k + 1, h))[0]
                          for k in range(int(math.ceil(h))))
            else:
                tt = np.linspace(0, h, 4097)
                ref = integrate.simpson(surv(tt), x=tt)
            assert got[i] == pytest.approx(ref, abs=1e-5)


def test_truth_matches_monte_carlo():
    lat = sample_covariates(3, 4)
    n = 200_000
    for sc in ("A", "B", "E"):
        h = 1.5 if sc != "E" else 8.0
        for w in (0, 1):
            rep = Latents(np.repeat(lat.x[:1], n, 0), np.repeat(lat.u[:1], n, 0),
                          np.zeros(n), np.arange(n, dtype=np.uint64))
            t0, t1 = dg.generate_potential_outcomes(sc, RCT, rep, 77)
            t = t1 if w else t0
            mc = np.minimum(t, h).mean()
            se = np.minimum(t, h).std() / math.sqrt(n)
            exact = dg.arm_mean(sc, RCT, lat[:1], w, "RMST", h)[0]
            assert abs(mc - exact) < 4 * se + 1e-3


def test_marginalized_truth_averages_over_u():
    lat = sample_covariates(3, 5)
    tau_m = dg.true_cate("A", UCONF, lat, "RMST", 2.0, marginalize_u=True)
    grid = np.linspace(0, 1, 2001)
    ref = []
    for i in range(3):
        vals = [dg.true_cate("A", UCONF, Latents(lat.x[i:i + 1], np.array([[g, 0.5]]),
                                                 np.zeros(1), lat.index[i:i + 1]),
                             "RMST", 2.0)[0] for g in grid]
        ref.append(integrate.simpson(vals, x=grid))
    assert np.allclose(tau_m, ref, atol=1e-6)


# -------------------------------------------------------------- datasets

def test_dataset_invariants():
    ds = build_dataset(DatasetSpec("B", "OBS-CPS", 3000, 12))
    t_w = np.where(ds.w == 1, ds.t1, ds.t0)
    assert np.all(ds.obs_time <= t_w)
    assert np.array_equal(ds.event == 1, ds.obs_time == t_w)
    assert ds.horizon == ds.obs_time.max()
    assert set(np.unique(ds.w)) <= {0, 1}


def test_dataset_determinism():
    spec = DatasetSpec("E", "OBS-UConf-InfC", 2000, 99)
    assert build_dataset(spec).equals(build_dataset(spec))


def test_dataset_spec_rejects_bad_values():
    with pytest.raises(ValueError):
        DatasetSpec("A", "RCT-50", 0, 1)
    with pytest.raises(ValueError):
        DatasetSpec("A", "RCT-50", 10, 1, horizon=-1.0)


def test_arm_means_match_truth_within_three_se():
    ds = build_dataset(DatasetSpec("C", "RCT-50", 50_000, 31, horizon=math.inf))
    lat = sample_covariates(50_000, 31)
    for w, t in ((0, ds.t0), (1, ds.t1)):
        m = dg.arm_mean("C", RCT, lat, w, "RMST", math.inf)
        resid = t - m
        assert abs(resid.mean()) < 3 * resid.std() / math.sqrt(len(t))


def test_scenario_a_censoring_rate():
    ds = build_dataset(DatasetSpec("A", "RCT-50", 50_000, 1))
    assert 1 - ds.event.mean() == pytest.approx(0.203, abs=0.01)


def test_rct5_treatment_rate():
    ds = build_dataset(DatasetSpec("D", "RCT-5", 50_000, 1))
    assert ds.w.mean() == pytest.approx(0.049, abs=0.005)


def test_scenario_d_informative_censoring_rate():
    ds = build_dataset(DatasetSpec("D", "OBS-CPS-InfC", 50_000, 1))
    assert 1 - ds.event.mean() == pytest.approx(0.366, abs=0.015)
