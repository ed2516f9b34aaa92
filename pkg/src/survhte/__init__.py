"""Heterogeneous treatment effects on right-censored survival data.

Synthetic data generation with known ground truth, censoring imputation,
meta-learner CATE estimators, random survival forests, metrics and an
experiment harness.
"""
__version__ = "0.1.0"
