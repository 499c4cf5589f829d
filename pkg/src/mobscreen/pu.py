"""Positive-unlabeled bagging, the spy protocol, and the naive comparator.

PU bagging trains K base forests, each separating the positive rows from
an equally sized pseudo-negative sample drawn without replacement from
the unlabeled pool; the risk score of a row is the mean of the K
per-iteration probabilities. The spy protocol hides a fraction of known
positives inside the unlabeled pool before training and evaluates how
well they are recovered. The naive baseline trains one forest with the
whole unlabeled pool labeled negative, which is the biased construction
the ensemble exists to avoid.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from mobscreen import seeds
from mobscreen._serialize import read_container, write_container
from mobscreen.features import FEATURE_NAMES, FeatureTable
from mobscreen.forest import Forest, ForestConfig, fit_forest, forest_arrays, forest_from_arrays
from mobscreen.ingest import LabelCategory


class SpyUnit(str, Enum):
    ESTABLISHMENT = "establishment"
    OBSERVATION_WEEK = "week"


class Role(str, Enum):
    TRAIN_POSITIVE = "TrainPositive"
    SPY = "Spy"
    UNLABELED = "Unlabeled"
    QUIET_HELD_OUT = "QuietHeldOut"


@dataclass
class PuConfig:
    k: int = 50
    forest: ForestConfig = field(default_factory=ForestConfig)
    seed: int = 0
    spy_fraction: float = 0.2
    spy_unit: SpyUnit = SpyUnit.ESTABLISHMENT

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "forest": self.forest.to_dict(),
            "seed": self.seed,
            "spy_fraction": self.spy_fraction,
            "spy_unit": self.spy_unit.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PuConfig":
        return cls(
            k=d["k"],
            forest=ForestConfig.from_dict(d["forest"]),
            seed=d["seed"],
            spy_fraction=d["spy_fraction"],
            spy_unit=SpyUnit(d["spy_unit"]),
        )


@dataclass
class PuModel:
    """Trained ensemble: K fitted forests plus the training config."""

    forests: list
    config: PuConfig
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Mean per-iteration score, accumulated in iteration order."""
        return _mean_scores(self.forests, X)


def _mean_scores(models: Sequence, X: np.ndarray) -> np.ndarray:
    acc = np.zeros(X.shape[0])
    for m in models:
        acc += m.predict(X)
    return acc / len(models)


def pu_bagging(
    X_pos: np.ndarray,
    X_unl: np.ndarray,
    cfg: PuConfig,
    base_fit: Callable[[np.ndarray, np.ndarray, ForestConfig], object] | None = None,
    feature_names: tuple[str, ...] | None = None,
) -> tuple[PuModel, np.ndarray, np.ndarray]:
    """K-iteration PU bagging over (positives, unlabeled).

    Each iteration draws |P| pseudo-negatives from the unlabeled pool
    without replacement (fresh seeded draw per iteration), fits the base
    classifier on positives-vs-pseudo-negatives, and accumulates its
    probabilities for every row. Returns the model and the final mean
    scores for the positive and unlabeled rows.
    """
    X_pos = np.asarray(X_pos, dtype=float)
    X_unl = np.asarray(X_unl, dtype=float)
    n_pos, n_unl = X_pos.shape[0], X_unl.shape[0]
    if cfg.k < 1:
        raise ValueError("K must be >= 1")
    if n_pos < 2 * cfg.forest.min_leaf:
        raise ValueError(f"need at least {2 * cfg.forest.min_leaf} positive rows, got {n_pos}")
    if n_unl < n_pos:
        raise ValueError(f"unlabeled pool ({n_unl}) is smaller than the positive set ({n_pos})")
    fit = base_fit if base_fit is not None else fit_forest
    if feature_names is None:
        feature_names = (
            FEATURE_NAMES if X_pos.shape[1] == len(FEATURE_NAMES)
            else tuple(f"f{j}" for j in range(X_pos.shape[1]))
        )

    y = np.concatenate([np.ones(n_pos, dtype=np.int8), np.zeros(n_pos, dtype=np.int8)])
    acc_pos = np.zeros(n_pos)
    acc_unl = np.zeros(n_unl)
    forests = []
    for k in range(cfg.k):
        neg_idx = seeds.rng(cfg.seed, "pu-iter", k).choice(n_unl, size=n_pos, replace=False)
        X_train = np.vstack([X_pos, X_unl[neg_idx]])
        forest_cfg = replace(cfg.forest, seed=seeds.derive(cfg.seed, "pu-iter", k, "forest"))
        model = fit(X_train, y, forest_cfg)
        acc_pos += model.predict(X_pos)
        acc_unl += model.predict(X_unl)
        forests.append(model)

    return (
        PuModel(forests=forests, config=cfg, feature_names=tuple(feature_names)),
        acc_pos / cfg.k,
        acc_unl / cfg.k,
    )


def spy_split(
    placekeys: Sequence[str],
    cfg: PuConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Partition positive row indices into (train, spy).

    With establishment-level spies (the default), a seeded uniform draw
    selects round(spy_fraction * n) of the distinct positive placekeys
    and every row of a selected placekey becomes a spy, so no
    establishment contributes weeks to both sides. Week-level spies draw
    rows directly.
    """
    n_rows = len(placekeys)
    if cfg.spy_unit is SpyUnit.ESTABLISHMENT:
        distinct = sorted(set(placekeys))
        if len(distinct) < 2:
            raise ValueError("need at least 2 positive establishments for a spy split")
        n_spy = int(round(cfg.spy_fraction * len(distinct)))
        n_spy = min(max(n_spy, 1), len(distinct) - 1)
        chosen = seeds.rng(cfg.seed, "spy").choice(len(distinct), size=n_spy, replace=False)
        spy_pks = {distinct[i] for i in chosen}
        spy_mask = np.array([pk in spy_pks for pk in placekeys])
    else:
        if n_rows < 2:
            raise ValueError("need at least 2 positive rows for a week-level spy split")
        n_spy = int(round(cfg.spy_fraction * n_rows))
        n_spy = min(max(n_spy, 1), n_rows - 1)
        chosen = seeds.rng(cfg.seed, "spy").choice(n_rows, size=n_spy, replace=False)
        spy_mask = np.zeros(n_rows, dtype=bool)
        spy_mask[chosen] = True
    return np.flatnonzero(~spy_mask), np.flatnonzero(spy_mask)


def score_quiet(model: PuModel, X_quiet: np.ndarray) -> np.ndarray:
    """Risk scores for quiet-week rows the model never trained on."""
    X_quiet = np.asarray(X_quiet, dtype=float)
    if X_quiet.shape[0] == 0:
        return np.zeros(0)
    return model.predict(X_quiet)


def train_naive_baseline(
    X_pos: np.ndarray,
    X_unl: np.ndarray,
    forest_cfg: ForestConfig,
) -> tuple[Forest, np.ndarray, np.ndarray]:
    """Single forest with every unlabeled row labeled negative.

    The biased construction: hidden positives inside the unlabeled pool
    are penalized as if they were confirmed negatives. Used only for the
    bias comparison against PU bagging.
    """
    X_pos = np.asarray(X_pos, dtype=float)
    X_unl = np.asarray(X_unl, dtype=float)
    X = np.vstack([X_pos, X_unl])
    y = np.concatenate(
        [np.ones(X_pos.shape[0], dtype=np.int8), np.zeros(X_unl.shape[0], dtype=np.int8)]
    )
    forest = fit_forest(X, y, forest_cfg)
    return forest, forest.predict(X_pos), forest.predict(X_unl)


# ---------------------------------------------------------------------------
# Spy-protocol runs over a feature table
# ---------------------------------------------------------------------------

APPROACHES = ("A", "B", "C")


@dataclass
class SpyRunResult:
    """Scores and roles for every row of the input table, row-aligned."""

    model: PuModel
    scores: np.ndarray
    roles: list[Role]
    approach: str
    spy_placekeys: list[str]

    def mask(self, role: Role) -> np.ndarray:
        return np.array([r is role for r in self.roles])


def compose_training_sets(categories: Sequence[str], approach: str) -> tuple[np.ndarray, np.ndarray]:
    """Row indices (positive, unlabeled) for an approach.

    A trains on active-vs-never and holds quiet out entirely; B adds
    quiet weeks to the unlabeled pool; C adds them to the positives.
    """
    if approach not in APPROACHES:
        raise ValueError(f"approach must be one of {APPROACHES}, got {approach!r}")
    cats = np.asarray(categories)
    active = cats == LabelCategory.ILLICIT_ACTIVE.value
    quiet = cats == LabelCategory.ILLICIT_QUIET.value
    never = cats == LabelCategory.NEVER_ASW.value
    if approach == "A":
        pos, unl = active, never
    elif approach == "B":
        pos, unl = active, never | quiet
    else:
        pos, unl = active | quiet, never
    return np.flatnonzero(pos), np.flatnonzero(unl)


def run_spy_protocol(
    table: FeatureTable,
    cfg: PuConfig,
    approach: str = "A",
    base_fit: Callable | None = None,
) -> SpyRunResult:
    """Train PU bagging under the spy protocol and score every row.

    Spies are drawn from the positive rows, merged into the unlabeled
    pool for training, and tagged in the output roles; quiet rows held
    out of training (approach A) are scored by the final model.
    """
    pos_idx, unl_idx = compose_training_sets(table.categories, approach)
    pks = [table.placekeys[i] for i in pos_idx]
    train_rel, spy_rel = spy_split(pks, cfg)
    train_idx = pos_idx[train_rel]
    spy_idx = pos_idx[spy_rel]

    X = table.X
    X_train_pos = X[train_idx]
    unl_aug_idx = np.concatenate([unl_idx, spy_idx])
    model, scores_pos, scores_unl = pu_bagging(
        X_train_pos, X[unl_aug_idx], cfg, base_fit=base_fit,
        feature_names=table.feature_names,
    )

    scores = np.full(len(table), np.nan)
    scores[train_idx] = scores_pos
    scores[unl_aug_idx] = scores_unl
    holdout = np.flatnonzero(np.isnan(scores))
    if holdout.size:
        scores[holdout] = score_quiet(model, X[holdout])

    roles: list[Role] = [Role.QUIET_HELD_OUT] * len(table)
    for i in train_idx:
        roles[i] = Role.TRAIN_POSITIVE
    for i in spy_idx:
        roles[i] = Role.SPY
    for i in unl_idx:
        roles[i] = Role.UNLABELED

    spy_pks = sorted({table.placekeys[i] for i in spy_idx})
    return SpyRunResult(
        model=model, scores=scores, roles=roles, approach=approach, spy_placekeys=spy_pks
    )


# ---------------------------------------------------------------------------
# Model bundle file
# ---------------------------------------------------------------------------

_BUNDLE_KIND = "mobscreen-pu-bundle"
_BUNDLE_VERSION = 1


def save_bundle(
    model: PuModel,
    path: str | Path,
    approach: str = "A",
    spy_placekeys: Sequence[str] = (),
) -> None:
    arrays: dict[str, np.ndarray] = {}
    for k, forest in enumerate(model.forests):
        for name, arr in forest_arrays(forest).items():
            arrays[f"forest{k}/{name}"] = arr
    meta = {
        "config": model.config.to_dict(),
        "feature_names": list(model.feature_names),
        "n_forests": len(model.forests),
        "forest_configs": [f.config.to_dict() for f in model.forests],
        "approach": approach,
        "spy_placekeys": list(spy_placekeys),
    }
    write_container(path, _BUNDLE_KIND, _BUNDLE_VERSION, meta, arrays)


def load_bundle(path: str | Path) -> tuple[PuModel, dict]:
    meta, arrays = read_container(path, _BUNDLE_KIND, _BUNDLE_VERSION)
    feature_names = tuple(meta["feature_names"])
    forests = []
    for k in range(meta["n_forests"]):
        sub = {
            name.split("/", 1)[1]: arr
            for name, arr in arrays.items()
            if name.startswith(f"forest{k}/")
        }
        forests.append(
            forest_from_arrays(ForestConfig.from_dict(meta["forest_configs"][k]), feature_names, sub)
        )
    model = PuModel(
        forests=forests,
        config=PuConfig.from_dict(meta["config"]),
        feature_names=feature_names,
    )
    return model, meta
