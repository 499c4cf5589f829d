"""Behavioral feature engineering for establishment-weeks.

Each labeled establishment-week becomes a 28-dimensional vector covering
six views of how the business operates:

* temporal shares  -- proportion of weekly visits in six 4-hour windows,
  plus weekend and Friday-Saturday shares;
* visit distribution -- Shannon entropy of the hour-of-day and
  day-of-week visit distributions, and the peak-hour ratio;
* service duration -- short/medium/long dwell-time shares;
* market reach -- visitor shares by great-circle distance band from
  home census block group to the establishment;
* operational consistency -- coefficient of variation, normalized OLS
  trend, burstiness, maximum jump, and active ratio of the weekly visit
  totals (per establishment, training-period weeks only);
* location context and volume -- log CBG land area, county partisan
  index, and log weekly visits.

All shares use the convention 0/0 = 0 so vectors stay finite, and all
logarithms are natural.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from mobscreen.ingest import DWELL_BUCKET_LABELS, LabeledObservation, VisitWeekRecord

logger = logging.getLogger(__name__)

EARTH_RADIUS_MILES = 3958.756
SQUARE_MILE_M2 = 2_589_988.0
DEFAULT_PARTISAN_INDEX = 0.5

#: Distance band upper edges in miles; bands are left-closed, right-open.
DISTANCE_BIN_EDGES = np.array([1.0, 2.0, 5.0, 30.0, 60.0])

#: Hour-of-day windows, local time. late_night wraps the start of the day.
TEMPORAL_WINDOWS = (
    ("early_morning", 4, 8),
    ("morning_business", 8, 12),
    ("afternoon", 12, 16),
    ("evening", 16, 20),
    ("late_evening", 20, 24),
    ("late_night", 0, 4),
)

FEATURE_NAMES = (
    "early_morning",
    "morning_business",
    "afternoon",
    "evening",
    "late_evening",
    "late_night",
    "weekend",
    "friday_sat",
    "hourly_entropy",
    "daily_entropy",
    "peak_hour_ratio",
    "short_visit_share",
    "medium_visit_share",
    "long_visit_share",
    "dist_0_1mi",
    "dist_1_2mi",
    "dist_2_5mi",
    "dist_5_30mi",
    "dist_30_60mi",
    "dist_60plus",
    "cv",
    "trend",
    "burstiness",
    "max_jump",
    "active_ratio",
    "log_cbg_area",
    "partisan_index",
    "log_visits",
)

FEATURE_CATEGORIES = {
    "temporal": FEATURE_NAMES[0:8],
    "distribution": FEATURE_NAMES[8:11],
    "duration": FEATURE_NAMES[11:14],
    "market_reach": FEATURE_NAMES[14:20],
    "consistency": FEATURE_NAMES[20:25],
    "context": FEATURE_NAMES[25:27],
    "volume": FEATURE_NAMES[27:28],
}

_MEDIUM_BUCKETS = ("5-10", "11-20", "21-60")
_LONG_BUCKETS = ("61-120", "121-240", ">240")


@dataclass
class CbgGeo:
    """Census-block-group geography: centroid and land area (m^2)."""

    cbg_id: str
    centroid_lat: float
    centroid_lon: float
    land_area: float


GeoIndex = Mapping[str, CbgGeo]


def temporal_shares(hourly_visits: Sequence[int] | np.ndarray) -> np.ndarray:
    """Eight temporal shares of a 168-hour visit vector.

    The first six entries are the 4-hour-window shares (early_morning
    through late_night) aggregated across all seven days; the last two
    are the weekend (Sat+Sun) and Friday-Saturday shares. Hour ``h`` of
    day ``d`` sits at index ``24*d + h`` with ``d=0`` Monday. A
    zero-visit week yields all-zero shares.
    """
    grid = _as_week_grid(hourly_visits)
    total = int(grid.sum())
    out = np.zeros(8)
    if total == 0:
        return out
    by_hour = grid.sum(axis=0)
    for i, (_, lo, hi) in enumerate(TEMPORAL_WINDOWS):
        out[i] = int(by_hour[lo:hi].sum()) / total
    by_day = grid.sum(axis=1)
    out[6] = int(by_day[5] + by_day[6]) / total
    out[7] = int(by_day[4] + by_day[5]) / total
    return out


def entropy_features(hourly_visits: Sequence[int] | np.ndarray) -> np.ndarray:
    """(hourly_entropy, daily_entropy, peak_hour_ratio).

    Hourly entropy is -sum(p_h ln p_h) over the 24 hour-of-day totals
    aggregated across the seven days (maximum ln 24); daily entropy is
    the same over the 7 daily totals (maximum ln 7); 0 ln 0 := 0. The
    peak-hour ratio is the largest hour-of-day total divided by the
    weekly total. All three are 0 for a zero-visit week.
    """
    grid = _as_week_grid(hourly_visits)
    total = int(grid.sum())
    if total == 0:
        return np.zeros(3)
    by_hour = grid.sum(axis=0)
    by_day = grid.sum(axis=1)
    return np.array(
        [
            _shannon(by_hour / total),
            _shannon(by_day / total),
            int(by_hour.max()) / total,
        ]
    )


def dwell_shares(dwell_buckets: Mapping[str, int]) -> np.ndarray:
    """(short, medium, long) visit-duration shares.

    Short is the <5 minute bucket; medium pools 5-10, 11-20 and 21-60;
    long pools 61-120, 121-240 and >240. Unknown bucket labels are an
    error; an empty mapping yields all zeros.
    """
    for label in dwell_buckets:
        if label not in DWELL_BUCKET_LABELS:
            raise ValueError(f"unknown dwell bucket label: {label!r}")
    total = sum(int(v) for v in dwell_buckets.values())
    if total == 0:
        return np.zeros(3)
    short = int(dwell_buckets.get("<5", 0))
    medium = sum(int(dwell_buckets.get(b, 0)) for b in _MEDIUM_BUCKETS)
    long_ = sum(int(dwell_buckets.get(b, 0)) for b in _LONG_BUCKETS)
    return np.array([short / total, medium / total, long_ / total])


def haversine_miles(lat1, lon1, lat2, lon2):
    """Great-circle distance in miles on the spherical Earth model.

    d = 2 r asin( sqrt( sin^2(dphi/2) + cos(phi1) cos(phi2) sin^2(dlam/2) ) )
    with r = 3958.756 miles and angles in radians. Accepts scalars or
    broadcastable arrays.
    """
    phi1, lam1, phi2, lam2 = (np.radians(np.asarray(v, dtype=float)) for v in (lat1, lon1, lat2, lon2))
    a = (
        np.sin((phi2 - phi1) / 2.0) ** 2
        + np.cos(phi1) * np.cos(phi2) * np.sin((lam2 - lam1) / 2.0) ** 2
    )
    d = 2.0 * EARTH_RADIUS_MILES * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return float(d) if np.isscalar(lat1) and np.isscalar(lat2) else d


def distance_shares(
    visitor_home_cbgs: Mapping[str, int],
    poi_lat: float,
    poi_lon: float,
    geo: GeoIndex,
) -> np.ndarray:
    """Visitor-count-weighted shares over six distance bands.

    Bands are [0,1), [1,2), [2,5), [5,30), [30,60), [60,inf) miles from
    visitor home CBG centroid to the establishment. CBG ids missing from
    the geo index are excluded from the denominator.
    """
    counts = np.zeros(6, dtype=np.int64)
    unresolved = 0
    for cbg_id, weight in visitor_home_cbgs.items():
        entry = geo.get(cbg_id)
        if entry is None:
            unresolved += 1
            continue
        d = haversine_miles(poi_lat, poi_lon, entry.centroid_lat, entry.centroid_lon)
        counts[int(np.searchsorted(DISTANCE_BIN_EDGES, d, side="right"))] += int(weight)
    if unresolved:
        logger.debug("distance_shares: %d unresolved visitor CBG ids", unresolved)
    total = int(counts.sum())
    if total == 0:
        return np.zeros(6)
    return counts / total


def consistency_features(weekly_totals: Sequence[float] | np.ndarray) -> np.ndarray:
    """(cv, trend, burstiness, max_jump, active_ratio) of a visit series.

    cv = sigma/mu with the population standard deviation; trend is the
    OLS slope of v_t on t = 0..T-1 divided by mu; burstiness is the
    population standard deviation of the week-over-week changes divided
    by mu; max_jump is the largest absolute change divided by mu; the
    active ratio is the fraction of weeks with any visits. When mu = 0
    the four normalized statistics are 0; when T = 1 the three
    difference-based statistics are 0.
    """
    v = np.asarray(weekly_totals, dtype=float)
    if v.size == 0:
        return np.zeros(5)
    t_count = v.size
    active = int(np.count_nonzero(v > 0)) / t_count
    mu = v.mean()
    if mu == 0.0:
        return np.array([0.0, 0.0, 0.0, 0.0, active])
    cv = v.std() / mu
    if t_count == 1:
        return np.array([cv, 0.0, 0.0, 0.0, active])
    t = np.arange(t_count, dtype=float)
    slope = ((t * v).mean() - t.mean() * v.mean()) / ((t * t).mean() - t.mean() ** 2)
    diffs = np.diff(v)
    return np.array(
        [cv, slope / mu, diffs.std() / mu, np.abs(diffs).max() / mu, active]
    )


def context_and_volume(
    record: VisitWeekRecord,
    geo: GeoIndex,
    partisan: Mapping[str, float],
) -> np.ndarray:
    """(log_cbg_area, partisan_index, log_visits) for one week.

    log_cbg_area = ln(land area / one square mile in m^2); the partisan
    index is looked up by the first five digits of the establishment's
    CBG id (0.5 when the county is absent); log_visits = ln(1 + weekly
    total). The establishment's own CBG must resolve in the geo index.
    """
    entry = geo.get(record.poi_cbg)
    if entry is None:
        raise ValueError(f"unresolvable POI CBG {record.poi_cbg!r}; context features are required")
    county = record.poi_cbg[:5]
    total = int(record.hourly_visits.sum()) if record.hourly_visits is not None else 0
    return np.array(
        [
            np.log(entry.land_area / SQUARE_MILE_M2),
            float(partisan.get(county, DEFAULT_PARTISAN_INDEX)),
            np.log1p(total),
        ]
    )


def extract_features(
    obs: LabeledObservation,
    poi_training_totals: Sequence[float] | np.ndarray,
    geo: GeoIndex,
    partisan: Mapping[str, float],
) -> np.ndarray:
    """The full 28-feature vector for one labeled establishment-week.

    ``poi_training_totals`` is the establishment's weekly visit totals
    over training-period weeks only, so evaluation-period weeks never
    leak into the consistency features.
    """
    rec = obs.record
    hourly = rec.hourly_visits if rec.hourly_visits is not None else np.zeros(168, dtype=np.int64)
    return np.concatenate(
        [
            temporal_shares(hourly),
            entropy_features(hourly),
            dwell_shares(rec.dwell_buckets),
            distance_shares(rec.visitor_home_cbgs, rec.latitude, rec.longitude, geo),
            consistency_features(poi_training_totals),
            context_and_volume(rec, geo, partisan),
        ]
    )


# ---------------------------------------------------------------------------
# Whole-dataset extraction
# ---------------------------------------------------------------------------


@dataclass
class FeatureTable:
    """Feature matrix plus row identity, aligned by row index."""

    X: np.ndarray
    placekeys: list[str]
    week_starts: list[date]
    categories: list[str]
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def __len__(self) -> int:
        return self.X.shape[0]


def training_totals_by_placekey(
    observations: Sequence[LabeledObservation],
    train_end: date | None = None,
) -> dict[str, np.ndarray]:
    """Weekly visit totals per establishment from training-period weeks.

    Training-period weeks are those with week_start <= train_end (all
    weeks when train_end is None). Weeks are ordered by week_start.
    """
    rows: dict[str, list[tuple[date, int]]] = {}
    for obs in observations:
        rec = obs.record
        if train_end is not None and rec.week_start > train_end:
            continue
        total = int(rec.hourly_visits.sum()) if rec.hourly_visits is not None else 0
        rows.setdefault(rec.placekey, []).append((rec.week_start, total))
    return {
        pk: np.array([t for _, t in sorted(pairs)], dtype=float)
        for pk, pairs in rows.items()
    }


def build_feature_matrix(
    observations: Sequence[LabeledObservation],
    geo: GeoIndex,
    partisan: Mapping[str, float],
    train_end: date | None = None,
) -> FeatureTable:
    """Vectorized feature extraction over a whole observation list.

    Produces exactly the same values as row-by-row extract_features; the
    equivalence is covered by tests.
    """
    n = len(observations)
    X = np.zeros((n, len(FEATURE_NAMES)))
    if n == 0:
        return FeatureTable(X=X, placekeys=[], week_starts=[], categories=[])

    hours = np.zeros((n, 168), dtype=np.int64)
    for i, obs in enumerate(observations):
        hv = obs.record.hourly_visits
        if hv is not None:
            hours[i] = hv

    grid = hours.reshape(n, 7, 24)
    by_hour = grid.sum(axis=1)
    by_day = grid.sum(axis=2)
    totals = hours.sum(axis=1)
    safe = np.where(totals > 0, totals, 1).astype(float)

    col = {name: j for j, name in enumerate(FEATURE_NAMES)}
    for i_w, (name, lo, hi) in enumerate(TEMPORAL_WINDOWS):
        X[:, col[name]] = by_hour[:, lo:hi].sum(axis=1) / safe
    X[:, col["weekend"]] = (by_day[:, 5] + by_day[:, 6]) / safe
    X[:, col["friday_sat"]] = (by_day[:, 4] + by_day[:, 5]) / safe

    X[:, col["hourly_entropy"]] = _shannon_rows(by_hour / safe[:, None])
    X[:, col["daily_entropy"]] = _shannon_rows(by_day / safe[:, None])
    X[:, col["peak_hour_ratio"]] = by_hour.max(axis=1) / safe

    dwell = np.zeros((n, len(DWELL_BUCKET_LABELS)), dtype=np.int64)
    bucket_col = {b: j for j, b in enumerate(DWELL_BUCKET_LABELS)}
    for i, obs in enumerate(observations):
        for label, count in obs.record.dwell_buckets.items():
            dwell[i, bucket_col[label]] += int(count)
    dwell_total = dwell.sum(axis=1)
    dwell_safe = np.where(dwell_total > 0, dwell_total, 1).astype(float)
    X[:, col["short_visit_share"]] = dwell[:, 0] / dwell_safe
    X[:, col["medium_visit_share"]] = dwell[:, 1:4].sum(axis=1) / dwell_safe
    X[:, col["long_visit_share"]] = dwell[:, 4:7].sum(axis=1) / dwell_safe

    _fill_distance_columns(X, observations, geo, col)

    totals_by_pk = training_totals_by_placekey(observations, train_end)
    consistency_by_pk = {
        pk: consistency_features(v) for pk, v in sorted(totals_by_pk.items())
    }
    c0 = col["cv"]
    empty = np.zeros(5)
    for i, obs in enumerate(observations):
        X[i, c0 : c0 + 5] = consistency_by_pk.get(obs.record.placekey, empty)

    for i, obs in enumerate(observations):
        rec = obs.record
        entry = geo.get(rec.poi_cbg)
        if entry is None:
            raise ValueError(f"unresolvable POI CBG {rec.poi_cbg!r}; context features are required")
        X[i, col["log_cbg_area"]] = np.log(entry.land_area / SQUARE_MILE_M2)
        X[i, col["partisan_index"]] = float(partisan.get(rec.poi_cbg[:5], DEFAULT_PARTISAN_INDEX))
    X[:, col["log_visits"]] = np.log1p(totals)

    return FeatureTable(
        X=X,
        placekeys=[o.record.placekey for o in observations],
        week_starts=[o.record.week_start for o in observations],
        categories=[o.category.value for o in observations],
    )


def _fill_distance_columns(X, observations, geo, col) -> None:
    rows: list[int] = []
    lats: list[float] = []
    lons: list[float] = []
    weights: list[int] = []
    poi_lat = np.array([o.record.latitude for o in observations])
    poi_lon = np.array([o.record.longitude for o in observations])
    unresolved = 0
    for i, obs in enumerate(observations):
        for cbg_id, w in obs.record.visitor_home_cbgs.items():
            entry = geo.get(cbg_id)
            if entry is None:
                unresolved += 1
                continue
            rows.append(i)
            lats.append(entry.centroid_lat)
            lons.append(entry.centroid_lon)
            weights.append(int(w))
    if unresolved:
        logger.debug("feature matrix: %d unresolved visitor CBG ids", unresolved)
    j0 = col["dist_0_1mi"]
    if not rows:
        return
    idx = np.asarray(rows, dtype=np.int64)
    d = haversine_miles(poi_lat[idx], poi_lon[idx], np.asarray(lats), np.asarray(lons))
    bins = np.searchsorted(DISTANCE_BIN_EDGES, d, side="right")
    counts = np.zeros((len(observations), 6), dtype=np.int64)
    np.add.at(counts, (idx, bins), np.asarray(weights, dtype=np.int64))
    total = counts.sum(axis=1)
    safe = np.where(total > 0, total, 1).astype(float)
    X[:, j0 : j0 + 6] = counts / safe[:, None]


def _as_week_grid(hourly_visits) -> np.ndarray:
    arr = np.asarray(hourly_visits, dtype=np.int64)
    if arr.shape != (168,):
        raise ValueError(f"hourly visit vector has shape {arr.shape}, expected (168,)")
    if (arr < 0).any():
        raise ValueError("negative hourly visit count")
    return arr.reshape(7, 24)


def _shannon(p: np.ndarray) -> float:
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def _shannon_rows(p: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return -terms.sum(axis=1)


# ---------------------------------------------------------------------------
# Lookup tables and the feature-matrix file
# ---------------------------------------------------------------------------


def load_geo_table(path: str | Path) -> dict[str, CbgGeo]:
    """Geo table CSV: cbg_id, centroid_lat, centroid_lon, land_area_m2."""
    out: dict[str, CbgGeo] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            area = float(row["land_area_m2"])
            if area <= 0:
                raise ValueError(f"land area must be positive for CBG {row['cbg_id']}")
            out[row["cbg_id"]] = CbgGeo(
                cbg_id=row["cbg_id"],
                centroid_lat=float(row["centroid_lat"]),
                centroid_lon=float(row["centroid_lon"]),
                land_area=area,
            )
    return out


def load_partisan_table(path: str | Path) -> dict[str, float]:
    """Partisan table CSV: county_fips, partisan_index in [0, 1]."""
    out: dict[str, float] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            value = float(row["partisan_index"])
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"partisan index out of [0,1] for county {row['county_fips']}")
            out[row["county_fips"]] = value
    return out


def write_feature_table(table: FeatureTable, path: str | Path) -> None:
    """Feature matrix CSV: placekey, week_start, category + 28 columns."""
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["placekey", "week_start", "category", *table.feature_names])
        for i in range(len(table)):
            writer.writerow(
                [
                    table.placekeys[i],
                    table.week_starts[i].isoformat(),
                    table.categories[i],
                    *[repr(float(v)) for v in table.X[i]],
                ]
            )


def read_feature_table(path: str | Path) -> FeatureTable:
    placekeys: list[str] = []
    week_starts: list[date] = []
    categories: list[str] = []
    rows: list[list[float]] = []
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        names = tuple(header[3:])
        if names != FEATURE_NAMES:
            raise ValueError("feature file columns do not match the canonical 28-name order")
        for row in reader:
            placekeys.append(row[0])
            week_starts.append(date.fromisoformat(row[1]))
            categories.append(row[2])
            rows.append([float(v) for v in row[3:]])
    return FeatureTable(
        X=np.asarray(rows, dtype=float) if rows else np.zeros((0, len(FEATURE_NAMES))),
        placekeys=placekeys,
        week_starts=week_starts,
        categories=categories,
    )
