"""Establishment-level risk aggregation and budgeted inspection planning.

Weekly risk scores aggregate to one score per establishment (max by
default: any suspicious week triggers attention), establishments rank by
that score, and the inspection plan maximizes expected detections under
a budget: an exact 0/1-knapsack dynamic program for integer costs, or a
score-per-cost greedy. Unit costs reduce both to top-K selection.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np


class Aggregation(str, Enum):
    MEAN = "mean"
    MAX = "max"
    MIN = "min"


class AllocationMode(str, Enum):
    EXACT = "exact"
    GREEDY = "greedy"


@dataclass
class EstablishmentRisk:
    placekey: str
    delta: float
    weeks_observed: int
    aggregation: Aggregation


@dataclass
class AllocationPlan:
    selected: list[str]
    total_cost: float
    expected_detections: float
    budget: float
    mode: AllocationMode

    def to_dict(self) -> dict:
        return {
            "selected": self.selected,
            "total_cost": self.total_cost,
            "expected_detections": self.expected_detections,
            "budget": self.budget,
            "mode": self.mode.value,
        }


def aggregate(
    week_scores: Mapping[str, Sequence[float]],
    method: Aggregation | str = Aggregation.MAX,
) -> dict[str, EstablishmentRisk]:
    """One risk score per establishment from its weekly scores."""
    method = Aggregation(method)
    out: dict[str, EstablishmentRisk] = {}
    for pk, scores in week_scores.items():
        arr = np.asarray(scores, dtype=float)
        if arr.size == 0:
            raise ValueError(f"establishment {pk!r} has no week scores")
        if method is Aggregation.MAX:
            delta = float(arr.max())
        elif method is Aggregation.MIN:
            delta = float(arr.min())
        else:
            delta = float(arr.mean())
        out[pk] = EstablishmentRisk(
            placekey=pk, delta=delta, weeks_observed=arr.size, aggregation=method
        )
    return out


def rank_establishments(
    risks: Mapping[str, EstablishmentRisk] | Sequence[EstablishmentRisk],
) -> list[EstablishmentRisk]:
    """Descending by delta; ties broken by placekey so output is stable."""
    items = list(risks.values()) if isinstance(risks, Mapping) else list(risks)
    return sorted(items, key=lambda r: (-r.delta, r.placekey))


def solve_allocation(
    risks: Mapping[str, EstablishmentRisk] | Sequence[EstablishmentRisk],
    costs: Mapping[str, float] | None = None,
    budget: float = 0.0,
    mode: AllocationMode | str = AllocationMode.EXACT,
) -> AllocationPlan:
    """Select establishments maximizing total delta within the budget.

    Exact mode runs a 0/1-knapsack dynamic program and requires integer
    costs; greedy takes establishments by delta-per-cost while they fit.
    Costs default to 1, which reduces either mode to taking the top
    floor(budget) of the ranking.
    """
    mode = AllocationMode(mode)
    ranked = rank_establishments(risks)
    if budget < 0:
        raise ValueError("budget must be >= 0")
    if costs is None:
        costs = {r.placekey: 1.0 for r in ranked}
    for r in ranked:
        c = costs.get(r.placekey)
        if c is None:
            raise ValueError(f"no cost for establishment {r.placekey!r}")
        if c <= 0:
            raise ValueError(f"cost must be positive for {r.placekey!r}, got {c}")

    if mode is AllocationMode.EXACT:
        selected = _knapsack_exact(ranked, costs, budget)
    else:
        selected = _greedy(ranked, costs, budget)

    chosen = set(selected)
    total_cost = float(sum(costs[pk] for pk in selected))
    expected = float(sum(r.delta for r in ranked if r.placekey in chosen))
    return AllocationPlan(
        selected=sorted(selected),
        total_cost=total_cost,
        expected_detections=expected,
        budget=float(budget),
        mode=mode,
    )


def _knapsack_exact(ranked, costs, budget) -> list[str]:
    for r in ranked:
        if float(costs[r.placekey]) != int(costs[r.placekey]):
            raise ValueError(
                f"exact allocation requires integer costs ({r.placekey!r} costs "
                f"{costs[r.placekey]}); use greedy mode for fractional costs"
            )
    cap = int(budget)
    n = len(ranked)
    if n == 0 or cap == 0:
        return []
    c = np.array([int(costs[r.placekey]) for r in ranked])
    v = np.array([r.delta for r in ranked])
    cap = min(cap, int(c.sum()))

    best = np.zeros(cap + 1)
    taken = np.zeros((n, cap + 1), dtype=bool)
    for i in range(n):
        ci, vi = c[i], v[i]
        if ci > cap:
            continue
        cand = best[: cap - ci + 1] + vi
        improve = cand > best[ci:]
        taken[i, ci:] = improve
        best[ci:] = np.where(improve, cand, best[ci:])

    selected = []
    w = cap
    for i in range(n - 1, -1, -1):
        if taken[i, w]:
            selected.append(ranked[i].placekey)
            w -= c[i]
    return selected


def _greedy(ranked, costs, budget) -> list[str]:
    order = sorted(ranked, key=lambda r: (-r.delta / costs[r.placekey], r.placekey))
    selected = []
    remaining = float(budget)
    for r in order:
        ci = float(costs[r.placekey])
        if ci <= remaining:
            selected.append(r.placekey)
            remaining -= ci
    return selected


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def write_ranks_csv(ranked: Sequence[EstablishmentRisk], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["rank", "placekey", "delta", "weeks_observed", "aggregation"])
        for i, r in enumerate(ranked, start=1):
            writer.writerow([i, r.placekey, repr(r.delta), r.weeks_observed, r.aggregation.value])


def read_ranks_csv(path: str | Path) -> list[EstablishmentRisk]:
    out = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(
                EstablishmentRisk(
                    placekey=row["placekey"],
                    delta=float(row["delta"]),
                    weeks_observed=int(row["weeks_observed"]),
                    aggregation=Aggregation(row["aggregation"]),
                )
            )
    return out


def read_costs_csv(path: str | Path) -> dict[str, float]:
    out: dict[str, float] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["placekey"]] = float(row["cost"])
    return out
