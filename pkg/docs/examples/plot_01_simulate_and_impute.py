"""
Simulating censored outcomes and imputing them
==============================================

Draw one Scenario A dataset, look at the censoring it produces, then
replace censored times with three surrogates and score each against the
true event times.
"""

import numpy as np

from survhte.datagen import DatasetSpec, build_dataset
from survhte.impute import SurvivalImputer
from survhte.metrics import imputation_mae

# 7,500 units: the first 5,000 train the imputers, the rest are scored
ds = build_dataset(DatasetSpec("A", "RCT-50", 7500, seed=0))
print("censoring rate:", round(1 - ds.event.mean(), 3))
print("treated share: ", round(ds.w.mean(), 3))

train = ds.subset(np.arange(5000))
test = ds.subset(np.arange(5000, 7500))

# every imputer keeps observed event times and never moves a censored
# unit below its censoring time
for method in ("margin", "ipcw_t", "pseudo_obs"):
    imp = SurvivalImputer(method).fit(train.obs_time, train.event)
    out = imp.transform(test.obs_time, test.event)
    mae = imputation_mae(out.surrogate, test.t_factual)
    print(f"{method:>10}: MAE {mae:.3f}, floored {out.floored.sum()}")
