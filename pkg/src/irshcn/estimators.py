"""scikit-learn style wrappers around the two engines.

``fit`` does the threshold-independent work and ``predict`` maps SINR
thresholds in dB to coverage probabilities. For the simulator that split is
natural (one run serves every threshold). The analytical engine has no
threshold-free stage, so its ``fit`` only validates and linearizes.
"""

from __future__ import annotations

from dataclasses import replace

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from . import analytical, simulator
from .netmodel import db_to_linear, linearize, table1_scenario, validate

__all__ = ["AnalyticalCoverage", "MonteCarloCoverage", "check_scenario", "check_thresholds_db"]


def check_scenario(scenario):
    """Default to the reference deployment and reject invalid scenarios."""
    scenario = table1_scenario() if scenario is None else scenario
    validate(scenario).raise_if_failed()
    return scenario


def check_thresholds_db(thresholds_db):
    """Finite 1-D float array of thresholds; scalars are promoted."""
    arr = np.atleast_1d(np.asarray(thresholds_db, dtype=float))
    return check_array(arr, ensure_2d=False, dtype=float).ravel()


def _select(breakdown, tier):
    if tier is None:
        return breakdown.overall_coverage
    return breakdown.per_tier_coverage[tier]


class AnalyticalCoverage(BaseEstimator):
    """Closed-form coverage; ``tier`` (0-based) selects a per-tier curve."""

    def __init__(self, scenario=None, tier=None):
        self.scenario = scenario
        self.tier = tier

    def fit(self, X=None, y=None):
        self.scenario_ = check_scenario(self.scenario)
        lin = linearize(self.scenario_)
        self.association_ = tuple(analytical.association_probability(lin, k)
                                  for k in range(lin.n_tiers))
        return self

    def breakdown(self, threshold_db):
        check_is_fitted(self, "scenario_")
        sc = self.scenario_
        return analytical.overall_coverage(replace(sc, eval=sc.eval.with_threshold_db(threshold_db)))

    def predict(self, thresholds_db):
        return np.array([_select(self.breakdown(g), self.tier)
                         for g in check_thresholds_db(thresholds_db)])


class MonteCarloCoverage(BaseEstimator):
    """Simulated coverage; ``fit`` draws the trials, ``predict`` thresholds them."""

    def __init__(self, scenario=None, trials=10_000, seed=0,
                 half_width_m=simulator.DEFAULT_HALF_WIDTH_M, tier=None):
        self.scenario = scenario
        self.trials = trials
        self.seed = seed
        self.half_width_m = half_width_m
        self.tier = tier

    def fit(self, X=None, y=None):
        self.scenario_ = check_scenario(self.scenario)
        self.run_ = simulator.run(self.scenario_, self.trials, self.seed, self.half_width_m)
        return self

    def breakdown(self, threshold_db):
        check_is_fitted(self, "run_")
        return self.run_.breakdown(float(db_to_linear(threshold_db)))

    def predict(self, thresholds_db):
        return np.array([_select(self.breakdown(g), self.tier)
                         for g in check_thresholds_db(thresholds_db)])

    def predict_interval(self, thresholds_db):
        """Wilson 95% bounds, shape (n, 2)."""
        out = []
        for g in check_thresholds_db(thresholds_db):
            b = self.breakdown(g)
            out.append(b.overall_ci if self.tier is None else b.per_tier_coverage_ci[self.tier])
        return np.array(out)
