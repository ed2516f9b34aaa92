"""
A small benchmark and its rank tables
=====================================

Run six method cells on one Scenario C configuration, then write
metrics.csv, the Borda table and top-k win rates. The same config run
twice produces byte-identical files.
"""

import os
import tempfile

from survhte.bench import ExperimentConfig, render_report, run_benchmark

config = ExperimentConfig.from_dict({
    "scenarios": ["C"], "configs": ["RCT-50"], "repeats": 2, "seed": 7,
    "roster": [
        {"family": "IMPUTED_META", "variant": ["S", "T"], "imputer": "margin",
         "base_learner": "lasso"},
        {"family": "IMPUTED_META", "variant": "DR", "imputer": "ipcw_t",
         "base_learner": "lasso"},
        {"family": "DOUBLE_ML", "imputer": "margin", "base_learner": "lasso"},
        {"family": "SURV_META", "variant": ["T", "MATCHING"]},
    ],
})

report = run_benchmark(config)
out = tempfile.mkdtemp(prefix="survhte_")
render_report(report, out)
print("wrote", sorted(os.listdir(out)), "to", out)

# one Borda table row per method family
with open(os.path.join(out, "borda.md")) as fh:
    print(fh.read())
