import math

import numpy as np
import pytest

from survhte.metrics import (MetricRecord, UndefinedMetricError, ate_bias, auc,
                             borda_rank, cate_rmse, ctd_index, imputation_mae, win_rates)
from survhte.survcurve import SurvivalCurve


def test_cate_rmse():
    assert cate_rmse([1, 2], [1, 2]) == 0
    assert cate_rmse(np.arange(5) + 0.3, np.arange(5)) == pytest.approx(0.3)
    assert cate_rmse([1, 2], [0, 0]) == pytest.approx(math.sqrt(2.5))
    with pytest.raises(ValueError):
        cate_rmse([1, 2], [1])


def test_ate_bias_and_mae():
    assert ate_bias([1, 3], 1.5) == pytest.approx(0.5)
    assert ate_bias([2, 2], 2) == 0
    assert imputation_mae([1, 2], [2, 4]) == pytest.approx(1.5)
    assert imputation_mae([1, 2], [1, 2]) == 0


def _step(level, t=1.0):
    return SurvivalCurve([t], [level])


def test_ctd_perfect_and_hand_case():
    times = np.array([1.0, 2.0, 3.0])
    events = np.array([1, 1, 0])
    # risk ordered correctly: earlier failure has lower survival everywhere
    good = [SurvivalCurve([0.5], [0.1]), SurvivalCurve([0.5], [0.5]),
            SurvivalCurve([0.5], [0.9])]
    assert ctd_index(good, times, events) == 1.0
    # pairs: (0,1), (0,2), (1,2); make (0,2) discordant and drop (1,2) by
    # censoring unit 1 -> 1 of 2 comparable pairs concordant
    events2 = np.array([1, 0, 0])
    bad = [SurvivalCurve([0.5], [0.5]), SurvivalCurve([0.5], [0.9]),
           SurvivalCurve([0.5], [0.1])]
    assert ctd_index(bad, times, events2) == pytest.approx(0.5)


def test_ctd_prediction_ties_count_half():
    times = np.array([1.0, 2.0])
    c = SurvivalCurve([0.5], [0.5])
    assert ctd_index([c, c], times, np.array([1, 1])) == 0.5


def test_ctd_random_null():
    rng = np.random.default_rng(0)
    n = 1500
    t = rng.exponential(size=n)
    e = rng.integers(0, 2, n)
    grid = np.sort(t[e == 1])
    S = np.sort(rng.uniform(size=(n, grid.size)), axis=1)[:, ::-1]
    assert ctd_index((grid, S), t, e) == pytest.approx(0.5, abs=0.05)


def test_ctd_no_comparable_pairs():
    with pytest.raises(UndefinedMetricError):
        ctd_index([_step(0.5), _step(0.5)], np.array([1.0, 1.0]), np.array([0, 0]))


def test_ctd_invariant_to_monotone_transform():
    rng = np.random.default_rng(1)
    n = 200
    t = rng.exponential(size=n)
    e = rng.integers(0, 2, n)
    grid = np.sort(t)
    S = np.sort(rng.uniform(size=(n, grid.size)), axis=1)[:, ::-1]
    assert ctd_index((grid, S), t, e) == ctd_index((grid, S**3), t, e)


def test_auc():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc(np.ones(10), np.r_[np.zeros(5), np.ones(5)]) == 0.5
    with pytest.raises(UndefinedMetricError):
        auc([0.1, 0.2], [1, 1])


def rec(ds, m, v):
    return MetricRecord((ds,), (m,), v, 0.0)


def test_borda_single_dataset():
    t = borda_rank([rec(1, "a", 0.1), rec(1, "b", 0.2), rec(1, "c", 0.3)])
    assert list(t.borda) == [1, 2, 3]


def test_borda_two_datasets_hand():
    recs = [rec(1, "A", 1), rec(1, "B", 2), rec(1, "C", 3),
            rec(2, "A", 3), rec(2, "B", 1), rec(2, "C", 2)]
    t = borda_rank(recs)
    assert dict(zip(t.methods, t.borda)) == {"A": 2.0, "B": 1.5, "C": 2.5}


def test_borda_ties_average():
    t = borda_rank([rec(1, "a", 0.1), rec(1, "b", 0.1), rec(1, "c", 0.3)])
    assert list(t.borda) == [1.5, 1.5, 3]


def test_missing_cells_rejected_or_warned():
    recs = [rec(1, "a", 0.1), rec(1, "b", 0.2), rec(2, "a", 0.3)]
    with pytest.raises(ValueError, match="missing cells"):
        borda_rank(recs)
    with pytest.warns(UserWarning):
        t = borda_rank(recs, allow_missing=True)
    assert t.borda[0] == 1.0


def test_win_rates():
    recs = [rec(1, "m", 0.1), rec(1, "x", 0.2), rec(2, "m", 0.1), rec(2, "x", 0.3)]
    assert win_rates(recs, [1])[1]["m"] == 1.0
    recs = []
    for ds, rank in ((1, 2), (2, 4)):
        for j in range(5):
            recs.append(rec(ds, f"o{j}", float(j + 1 if j + 1 < rank else j + 2)))
        recs.append(rec(ds, "m", float(rank)))
    assert win_rates(recs, [3])[3]["m"] == 0.5


def test_win_rates_inclusive_ties_at_k():
    recs = [rec(1, "a", 0.1), rec(1, "b", 0.2), rec(1, "c", 0.2)]
    w = win_rates(recs, [2])[2]
    # b and c share rank 2.5 > 2, so neither counts; with k=3 both do
    assert w["b"] == 0.0
    assert win_rates(recs, [3])[3]["c"] == 1.0


def test_rank_table_outputs():
    t = borda_rank([rec(1, "a", 0.1), rec(1, "b", 0.2)])
    assert t.to_csv().splitlines()[0] == "method,mean_rank,rank_stderr,n_datasets"
    md = t.to_markdown().splitlines()
    assert md[0] == "| method | mean rank | rank stderr |"
    assert t.winrates_csv().splitlines()[0] == "method,top1,top3,top5"
