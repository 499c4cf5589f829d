"""Screening metrics valid under positive-unlabeled evaluation.

Precision/recall/F1 against unlabeled data are meaningless here (an
apparent false positive may be a correctly surfaced hidden positive), so
evaluation uses rank-based measures: AUC as the exact probability that a
positive outranks a negative (ties half-credited, computed by rank sum),
average precision over the descending-score list, recovery rate above a
threshold, and business-level coverage at an inspection budget. Grouped
cross-validation at the establishment level and permutation importance
round out the evaluation toolkit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from mobscreen import seeds
from mobscreen.features import FEATURE_CATEGORIES, FeatureTable
from mobscreen.ingest import LabelCategory
from mobscreen.pu import PuConfig, pu_bagging


def auc(pos_scores: Sequence[float], neg_scores: Sequence[float]) -> float:
    """Probability that a positive outranks a negative, ties at 0.5.

    Exact rank-sum computation over all pos x neg pairs; no sampling.
    """
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("auc requires non-empty positive and negative score sets")
    combined = np.concatenate([pos, neg])
    ranks = _average_ranks(combined)
    rank_sum = ranks[: pos.size].sum()
    u = rank_sum - pos.size * (pos.size + 1) / 2.0
    return float(u / (pos.size * neg.size))


def average_precision(pos_scores: Sequence[float], neg_scores: Sequence[float]) -> float:
    """AP = sum_k (R_k - R_{k-1}) P_k over the descending-score ranking.

    Positives are the retrieval target. Ties are broken by stable input
    order with positives listed before negatives, and the brute-force
    oracle in the tests uses the same rule.
    """
    pos = np.asarray(pos_scores, dtype=float)
    neg = np.asarray(neg_scores, dtype=float)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("average_precision requires non-empty positive and negative score sets")
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(pos.size, dtype=bool), np.zeros(neg.size, dtype=bool)])
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order]
    hits = np.cumsum(ranked)
    k = np.arange(1, scores.size + 1)
    precision_at_pos = (hits / k)[ranked]
    return float(precision_at_pos.sum() / pos.size)


def recovery_rate(
    spy_scores: Sequence[float],
    thresholds: Sequence[float] = (0.5, 0.6, 0.7),
) -> dict[float, float]:
    """Fraction of hidden positives scoring strictly above each threshold."""
    s = np.asarray(spy_scores, dtype=float)
    if s.size == 0:
        raise ValueError("recovery_rate requires non-empty spy scores")
    return {float(t): float((s > t).mean()) for t in thresholds}


def nearest_rank_percentile(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: smallest value with at least p% at or below.

    For p = 0 this is -inf (every value qualifies), matching a budget
    that selects the whole population.
    """
    v = np.sort(np.asarray(values, dtype=float))
    if v.size == 0:
        raise ValueError("percentile of an empty set")
    rank = int(np.ceil(p / 100.0 * v.size))
    if rank < 1:
        return float("-inf")
    return float(v[rank - 1])


def coverage_at_budget(
    delta: Mapping[str, float],
    holdout_pos: set[str] | Sequence[str],
    k_percent: float,
) -> float:
    """Fraction of holdout positives at or above the top-K% cutoff.

    The cutoff is the nearest-rank (100-K)th percentile of every ranked
    establishment's score; membership uses >= per the coverage
    definition.
    """
    holdout = set(holdout_pos)
    if not holdout:
        raise ValueError("coverage requires a non-empty holdout set")
    missing = holdout - set(delta)
    if missing:
        raise ValueError(f"holdout establishments missing from the ranking: {sorted(missing)[:5]}")
    tau = nearest_rank_percentile(list(delta.values()), 100.0 - k_percent)
    return sum(1 for pk in holdout if delta[pk] >= tau) / len(holdout)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.size, dtype=float)
    sx = x[order]
    i = 0
    while i < x.size:
        j = i
        while j + 1 < x.size and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


# ---------------------------------------------------------------------------
# Business-level cross-validation
# ---------------------------------------------------------------------------


@dataclass
class AggregationResult:
    auc_per_fold: list[float]
    coverage_per_fold: dict[float, list[float]]

    @property
    def auc_mean(self) -> float:
        return float(np.mean(self.auc_per_fold))

    @property
    def auc_sd(self) -> float:
        return float(np.std(self.auc_per_fold))

    def coverage_mean(self, k: float) -> float:
        return float(np.mean(self.coverage_per_fold[k]))

    def to_dict(self) -> dict:
        return {
            "auc_mean": self.auc_mean,
            "auc_sd": self.auc_sd,
            "auc_per_fold": self.auc_per_fold,
            "coverage": {
                str(k): {
                    "mean": float(np.mean(v)),
                    "sd": float(np.std(v)),
                    "per_fold": v,
                }
                for k, v in self.coverage_per_fold.items()
            },
        }


@dataclass
class BusinessCvReport:
    folds: int
    budgets: tuple[float, ...]
    by_aggregation: dict[str, AggregationResult]
    fold_placekeys: list[list[str]]

    def to_dict(self) -> dict:
        return {
            "folds": self.folds,
            "budgets": list(self.budgets),
            "by_aggregation": {k: v.to_dict() for k, v in self.by_aggregation.items()},
        }


def business_cv(
    table: FeatureTable,
    cfg: PuConfig,
    folds: int = 5,
    budgets: Sequence[float] = (1.0, 5.0, 10.0, 20.0),
    aggregations: Sequence[str] = ("max", "mean", "min"),
    seed: int | None = None,
) -> BusinessCvReport:
    """Establishment-level K-fold screening evaluation.

    Positive establishments (those with any IllicitActive week) are
    partitioned into folds; every week of a holdout establishment is
    excluded from training. Each fold trains one PU model on the
    remaining positives' active weeks versus the NeverAsw pool, scores
    all weeks once, and every aggregation is computed from those same
    scores. Holdout positives are ranked against all unlabeled
    establishments (training positives excluded).
    """
    seed = cfg.seed if seed is None else seed
    cats = np.asarray(table.categories)
    pks = np.asarray(table.placekeys)
    active_mask = cats == LabelCategory.ILLICIT_ACTIVE.value
    never_mask = cats == LabelCategory.NEVER_ASW.value
    pos_pks = np.array(sorted(set(pks[active_mask])))
    if pos_pks.size < folds:
        raise ValueError(f"need at least {folds} positive establishments, got {pos_pks.size}")
    unlabeled_pks = sorted(set(pks[never_mask]) - set(pos_pks))

    perm = seeds.rng(seed, "cv-folds").permutation(pos_pks.size)
    fold_groups = [sorted(pos_pks[g]) for g in np.array_split(perm, folds)]

    week_scores_by_pk: dict[str, list[int]] = {}
    for i, pk in enumerate(table.placekeys):
        week_scores_by_pk.setdefault(pk, []).append(i)

    results = {
        agg: AggregationResult(auc_per_fold=[], coverage_per_fold={float(b): [] for b in budgets})
        for agg in aggregations
    }
    for f, holdout_pks in enumerate(fold_groups):
        holdout = set(holdout_pks)
        train_pos_idx = np.flatnonzero(active_mask & ~np.isin(pks, list(holdout)))
        unl_idx = np.flatnonzero(never_mask)
        fold_cfg = PuConfig(
            k=cfg.k, forest=cfg.forest, seed=seeds.derive(seed, "cv-fold", f),
            spy_fraction=cfg.spy_fraction, spy_unit=cfg.spy_unit,
        )
        model, _, _ = pu_bagging(table.X[train_pos_idx], table.X[unl_idx], fold_cfg)
        scores = model.predict(table.X)

        ranked_pks = list(holdout_pks) + list(unlabeled_pks)
        for agg in aggregations:
            fn = _AGGREGATORS[agg]
            delta = {
                pk: fn(scores[week_scores_by_pk[pk]]) for pk in ranked_pks
            }
            pos_vals = [delta[pk] for pk in holdout_pks]
            neg_vals = [delta[pk] for pk in unlabeled_pks]
            results[agg].auc_per_fold.append(auc(pos_vals, neg_vals))
            for b in budgets:
                results[agg].coverage_per_fold[float(b)].append(
                    coverage_at_budget(delta, holdout, float(b))
                )

    return BusinessCvReport(
        folds=folds,
        budgets=tuple(float(b) for b in budgets),
        by_aggregation=results,
        fold_placekeys=fold_groups,
    )


_AGGREGATORS: dict[str, Callable[[np.ndarray], float]] = {
    "max": lambda s: float(np.max(s)),
    "mean": lambda s: float(np.mean(s)),
    "min": lambda s: float(np.min(s)),
}


# ---------------------------------------------------------------------------
# Permutation importance
# ---------------------------------------------------------------------------


def permutation_importance(
    model,
    X: np.ndarray,
    pos_mask: np.ndarray,
    repeats: int = 5,
    seed: int = 0,
) -> np.ndarray:
    """Per-feature mean AUC drop under seeded column shuffles.

    ``model`` is anything with predict(X) -> scores. For each feature
    the column is shuffled ``repeats`` times and the drop is baseline
    AUC minus shuffled AUC, averaged over repeats.
    """
    X = np.asarray(X, dtype=float)
    pos_mask = np.asarray(pos_mask, dtype=bool)
    base_scores = model.predict(X)
    baseline = auc(base_scores[pos_mask], base_scores[~pos_mask])
    n, d = X.shape
    drops = np.zeros(d)
    for j in range(d):
        Xp = X.copy()
        total = 0.0
        for r in range(repeats):
            perm = seeds.rng(seed, "perm", j, r).permutation(n)
            Xp[:, j] = X[perm, j]
            s = model.predict(Xp)
            total += baseline - auc(s[pos_mask], s[~pos_mask])
        drops[j] = total / repeats
    return drops


def category_importance(
    drops: np.ndarray,
    feature_names: Sequence[str],
    categories: Mapping[str, Sequence[str]] = FEATURE_CATEGORIES,
) -> dict[str, float]:
    """Category totals: the sum of member-feature AUC drops."""
    pos = {name: i for i, name in enumerate(feature_names)}
    return {
        cat: float(sum(drops[pos[f]] for f in members if f in pos))
        for cat, members in categories.items()
    }


# ---------------------------------------------------------------------------
# Metric report
# ---------------------------------------------------------------------------


@dataclass
class MetricReport:
    auc: float
    average_precision: float
    recovery: dict[float, float]
    category_means: dict[str, float]
    n_pos: int
    n_unlabeled: int
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "average_precision": self.average_precision,
            "recovery": {str(k): v for k, v in sorted(self.recovery.items())},
            "category_means": dict(sorted(self.category_means.items())),
            "n_pos": self.n_pos,
            "n_unlabeled": self.n_unlabeled,
            **({"extra": self.extra} if self.extra else {}),
        }


def spy_report(
    scores: np.ndarray,
    roles: Sequence,
    thresholds: Sequence[float] = (0.5, 0.6, 0.7),
) -> MetricReport:
    """Spy-protocol report: spies versus the unlabeled pool.

    This is the deployment-faithful variant: hidden positives inside the
    unlabeled pool count as negatives because without ground truth they
    cannot be excluded.
    """
    from mobscreen.pu import Role

    roles = list(roles)
    scores = np.asarray(scores, dtype=float)
    masks = {role: np.array([r is role for r in roles]) for role in Role}
    spy_scores = scores[masks[Role.SPY]]
    unl_scores = scores[masks[Role.UNLABELED]]
    means = {
        role.value: float(scores[mask].mean())
        for role, mask in masks.items()
        if mask.any()
    }
    return MetricReport(
        auc=auc(spy_scores, unl_scores),
        average_precision=average_precision(spy_scores, unl_scores),
        recovery=recovery_rate(spy_scores, thresholds),
        category_means=means,
        n_pos=int(masks[Role.SPY].sum()),
        n_unlabeled=int(masks[Role.UNLABELED].sum()),
    )
