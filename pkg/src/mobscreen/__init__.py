"""Mobility-based screening of high-risk establishments.

The package turns weekly establishment mobility records into inspection
plans: ingest and label raw records, engineer a 28-feature behavioral
vector per establishment-week, train a positive-unlabeled bagging
ensemble of random forests, evaluate with the spy protocol, aggregate
weekly risk to establishment level, and solve the budgeted inspection
problem. A seeded synthetic population generator provides a desk-scale
ground-truth benchmark.
"""

from mobscreen.features import FEATURE_NAMES, extract_features
from mobscreen.forest import Forest, ForestConfig, fit_forest, predict_proba
from mobscreen.ingest import (
    AdRecord,
    LabelCategory,
    LabeledObservation,
    VisitWeekRecord,
    filter_population,
    merge_and_label,
    normalize_phone,
)
from mobscreen.metrics import (
    auc,
    average_precision,
    business_cv,
    coverage_at_budget,
    permutation_importance,
    recovery_rate,
)
from mobscreen.pu import (
    PuConfig,
    PuModel,
    pu_bagging,
    score_quiet,
    spy_split,
    train_naive_baseline,
)
from mobscreen.ranking import (
    AllocationPlan,
    EstablishmentRisk,
    aggregate,
    rank_establishments,
    solve_allocation,
)
from mobscreen.synth import SynthConfig, generate

__version__ = "0.1.0"

__all__ = [
    "AdRecord",
    "AllocationPlan",
    "EstablishmentRisk",
    "FEATURE_NAMES",
    "Forest",
    "ForestConfig",
    "LabelCategory",
    "LabeledObservation",
    "PuConfig",
    "PuModel",
    "SynthConfig",
    "VisitWeekRecord",
    "aggregate",
    "auc",
    "average_precision",
    "business_cv",
    "coverage_at_budget",
    "extract_features",
    "filter_population",
    "fit_forest",
    "generate",
    "merge_and_label",
    "normalize_phone",
    "permutation_importance",
    "predict_proba",
    "pu_bagging",
    "rank_establishments",
    "recovery_rate",
    "score_quiet",
    "solve_allocation",
    "spy_split",
    "train_naive_baseline",
]
