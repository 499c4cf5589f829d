"""Raw-record ingestion.

Parses weekly visit records and advertisement records, normalizes phone
join keys, applies the population filters (industry code, name tokens,
contiguous-US box, start date, continuous operation), left-joins the two
streams on (phone, week), and emits labeled establishment-week
observations in one of three categories: IllicitActive (advertised that
week), IllicitQuiet (advertised establishment, unadvertised week), and
NeverAsw (never linked to an ad).

Malformed input rows are counted and skipped, never fatal; a run summary
reports every drop reason.
"""

from __future__ import annotations

import csv
import json
import logging
import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

HOURS_PER_WEEK = 168
DWELL_BUCKET_LABELS = ("<5", "5-10", "11-20", "21-60", "61-120", "121-240", ">240")
TARGET_NAICS = "812199"
NAME_TOKENS = ("massage", "spa")
CONTIGUOUS_LAT = (24.0, 50.0)
CONTIGUOUS_LON = (-125.0, -66.0)

_NON_DIGITS = re.compile(r"\D+")


class LabelCategory(str, Enum):
    ILLICIT_ACTIVE = "IllicitActive"
    ILLICIT_QUIET = "IllicitQuiet"
    NEVER_ASW = "NeverAsw"


@dataclass
class VisitWeekRecord:
    """One establishment-week of raw mobility observations.

    ``hourly_visits`` is Monday 00:00 through Sunday 23:00 local time
    (index ``24*d + h`` with ``d=0`` Monday). A value of None marks a
    reporting gap week, which disqualifies the whole establishment under
    the continuous-operation filter.
    """

    placekey: str
    naics_code: str
    location_name: str
    phone: str
    latitude: float
    longitude: float
    poi_cbg: str
    week_start: date
    hourly_visits: np.ndarray | None
    dwell_buckets: dict[str, int]
    visitor_home_cbgs: dict[str, int]


@dataclass
class AdRecord:
    """Weekly advertisement volume for one phone number."""

    phone: str
    week_start: date
    ad_count: int


@dataclass
class LabeledObservation:
    record: VisitWeekRecord
    category: LabelCategory
    ad_count: int


@dataclass
class IngestSummary:
    """Counts for every row read, kept, or dropped during ingestion."""

    rows_read: int = 0
    rows_malformed: int = 0
    dropped_naics: int = 0
    dropped_name: int = 0
    dropped_bbox: int = 0
    dropped_start_date: int = 0
    dropped_gap_placekeys: int = 0
    dropped_gap_rows: int = 0
    rows_kept: int = 0
    ads_read: int = 0
    ads_malformed: int = 0
    ads_unusable_phone: int = 0
    phone_collisions: int = 0
    label_counts: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rows_read": self.rows_read,
            "rows_malformed": self.rows_malformed,
            "dropped": {
                "naics": self.dropped_naics,
                "name": self.dropped_name,
                "bbox": self.dropped_bbox,
                "start_date": self.dropped_start_date,
                "gap_placekeys": self.dropped_gap_placekeys,
                "gap_rows": self.dropped_gap_rows,
            },
            "rows_kept": self.rows_kept,
            "ads_read": self.ads_read,
            "ads_malformed": self.ads_malformed,
            "ads_unusable_phone": self.ads_unusable_phone,
            "phone_collisions": self.phone_collisions,
            "label_counts": dict(sorted(self.label_counts.items())),
        }


def normalize_phone(raw: str | None) -> str | None:
    """Canonical digit string for a raw phone, or None when unusable.

    Strips everything but digits, removes a single leading US country
    code "1" from an 11-digit number, and rejects anything shorter than
    10 digits. Deterministic and idempotent.
    """
    if raw is None:
        return None
    digits = _NON_DIGITS.sub("", raw)
    if len(digits) == 11 and digits.startswith("1"):
        digits = digits[1:]
    if len(digits) < 10:
        return None
    return digits


def monday_of(d: date) -> date:
    """The Monday starting the week that contains ``d``."""
    return d - timedelta(days=d.weekday())


def filter_population(
    records: Sequence[VisitWeekRecord],
    start_date: date | None = None,
    summary: IngestSummary | None = None,
) -> list[VisitWeekRecord]:
    """Retain the target establishment population.

    Keeps rows with the target industry code, a name containing
    "massage" or "spa" (case-insensitive), coordinates inside the
    contiguous-US bounding box, and ``week_start`` on or after
    ``start_date``; then drops every placekey that has a gap week
    (absent hourly visits) among the surviving rows.
    """
    summary = summary if summary is not None else IngestSummary()
    passed: list[VisitWeekRecord] = []
    for rec in records:
        if str(rec.naics_code) != TARGET_NAICS:
            summary.dropped_naics += 1
            continue
        name = rec.location_name.lower()
        if not any(tok in name for tok in NAME_TOKENS):
            summary.dropped_name += 1
            continue
        if not (
            CONTIGUOUS_LAT[0] <= rec.latitude <= CONTIGUOUS_LAT[1]
            and CONTIGUOUS_LON[0] <= rec.longitude <= CONTIGUOUS_LON[1]
        ):
            summary.dropped_bbox += 1
            continue
        if start_date is not None and rec.week_start < start_date:
            summary.dropped_start_date += 1
            continue
        passed.append(rec)

    gap_placekeys = {r.placekey for r in passed if r.hourly_visits is None}
    if gap_placekeys:
        summary.dropped_gap_placekeys = len(gap_placekeys)
        kept = [r for r in passed if r.placekey not in gap_placekeys]
        summary.dropped_gap_rows = len(passed) - len(kept)
    else:
        kept = passed
    summary.rows_kept = len(kept)
    return kept


def aggregate_ads(ads: Iterable[AdRecord], summary: IngestSummary | None = None) -> dict[tuple[str, date], int]:
    """Weekly ad volume per normalized phone, keyed by (phone, Monday)."""
    summary = summary if summary is not None else IngestSummary()
    volumes: dict[tuple[str, date], int] = {}
    for ad in ads:
        phone = normalize_phone(ad.phone)
        if phone is None:
            summary.ads_unusable_phone += 1
            continue
        key = (phone, monday_of(ad.week_start))
        volumes[key] = volumes.get(key, 0) + int(ad.ad_count)
    return volumes


def merge_and_label(
    pois: Sequence[VisitWeekRecord],
    ads: Sequence[AdRecord],
    summary: IngestSummary | None = None,
) -> list[LabeledObservation]:
    """Left-join visit rows to weekly ad volumes and assign categories.

    Every input POI row appears exactly once in the output. Weeks with a
    matched ad volume become IllicitActive; other weeks of a placekey
    that has at least one IllicitActive week become IllicitQuiet; the
    rest are NeverAsw. A phone shared by several placekeys labels all of
    them and is logged as a collision.
    """
    summary = summary if summary is not None else IngestSummary()
    volumes = aggregate_ads(ads, summary)

    phone_to_placekeys: dict[str, set[str]] = {}
    active_flags: list[int] = []
    for rec in pois:
        phone = normalize_phone(rec.phone)
        count = volumes.get((phone, rec.week_start), 0) if phone else 0
        active_flags.append(count)
        if phone and count > 0:
            phone_to_placekeys.setdefault(phone, set()).add(rec.placekey)

    for phone, pks in sorted(phone_to_placekeys.items()):
        if len(pks) > 1:
            summary.phone_collisions += 1
            logger.warning(
                "phone %s maps to %d placekeys: %s", phone, len(pks), sorted(pks)
            )

    linked = {rec.placekey for rec, c in zip(pois, active_flags) if c > 0}
    out: list[LabeledObservation] = []
    for rec, count in zip(pois, active_flags):
        if count > 0:
            category = LabelCategory.ILLICIT_ACTIVE
        elif rec.placekey in linked:
            category = LabelCategory.ILLICIT_QUIET
        else:
            category = LabelCategory.NEVER_ASW
        out.append(LabeledObservation(record=rec, category=category, ad_count=count))

    out.sort(key=lambda o: (o.record.placekey, o.record.week_start))
    for obs in out:
        summary.label_counts[obs.category.value] = (
            summary.label_counts.get(obs.category.value, 0) + 1
        )
    return out


def run_ingest(
    pois_path: str | Path,
    ads_path: str | Path,
    start_date: date | None = None,
) -> tuple[list[LabeledObservation], IngestSummary]:
    """File-to-observations ingestion: parse, filter, merge, label."""
    summary = IngestSummary()
    records = read_visit_file(pois_path, summary)
    ads = read_ad_file(ads_path, summary)
    kept = filter_population(records, start_date=start_date, summary=summary)
    observations = merge_and_label(kept, ads, summary)
    return observations, summary


# ---------------------------------------------------------------------------
# File formats. Visit rows mirror the vendor-style column names; the labeled
# output is JSON-lines with one observation per line, canonically ordered so
# identical inputs reproduce identical bytes.
# ---------------------------------------------------------------------------

_VISIT_FIELDS = (
    "placekey",
    "location_name",
    "naics_code",
    "phone",
    "latitude",
    "longitude",
    "poi_cbg",
    "date_range_start",
    "visits_by_each_hour",
    "bucketed_dwell_times",
    "visitor_home_cbgs",
)


def parse_visit_row(row: dict) -> VisitWeekRecord:
    """Build a validated record from one raw visit row.

    Raises ValueError on anything structurally unusable; callers count
    and skip those rows.
    """
    hourly = row["visits_by_each_hour"]
    if isinstance(hourly, str):
        hourly = json.loads(hourly) if hourly.strip() else None
    if hourly is not None:
        arr = np.asarray(hourly, dtype=np.int64)
        if arr.shape != (HOURS_PER_WEEK,):
            raise ValueError(f"visits_by_each_hour has length {arr.size}, expected {HOURS_PER_WEEK}")
        if (arr < 0).any():
            raise ValueError("negative hourly visit count")
    else:
        arr = None

    dwell = row.get("bucketed_dwell_times") or {}
    if isinstance(dwell, str):
        dwell = json.loads(dwell) if dwell.strip() else {}
    for label in dwell:
        if label not in DWELL_BUCKET_LABELS:
            raise ValueError(f"unknown dwell bucket label: {label!r}")

    homes = row.get("visitor_home_cbgs") or {}
    if isinstance(homes, str):
        homes = json.loads(homes) if homes.strip() else {}

    lat = float(row["latitude"])
    lon = float(row["longitude"])
    if not (-90.0 <= lat <= 90.0 and -180.0 <= lon <= 180.0):
        raise ValueError(f"coordinates out of range: ({lat}, {lon})")

    return VisitWeekRecord(
        placekey=str(row["placekey"]),
        naics_code=str(row["naics_code"]),
        location_name=str(row["location_name"]),
        phone=str(row.get("phone") or ""),
        latitude=lat,
        longitude=lon,
        poi_cbg=str(row["poi_cbg"]),
        week_start=date.fromisoformat(str(row["date_range_start"])[:10]),
        hourly_visits=arr,
        dwell_buckets={k: int(v) for k, v in dwell.items()},
        visitor_home_cbgs={str(k): int(v) for k, v in homes.items()},
    )


def _iter_raw_rows(path: Path) -> Iterable[dict]:
    if path.suffix.lower() == ".csv":
        with path.open(newline="") as fh:
            yield from csv.DictReader(fh)
    else:
        with path.open() as fh:
            for line in fh:
                line = line.strip()
                if line:
                    yield json.loads(line)


def read_visit_file(path: str | Path, summary: IngestSummary | None = None) -> list[VisitWeekRecord]:
    summary = summary if summary is not None else IngestSummary()
    records: list[VisitWeekRecord] = []
    for row in _iter_raw_rows(Path(path)):
        summary.rows_read += 1
        try:
            records.append(parse_visit_row(row))
        except (KeyError, ValueError, TypeError) as exc:
            summary.rows_malformed += 1
            logger.warning("skipping malformed visit row %d: %s", summary.rows_read, exc)
    return records


def read_ad_file(path: str | Path, summary: IngestSummary | None = None) -> list[AdRecord]:
    """Ad rows: phone, date (floored to its Monday), optional count."""
    summary = summary if summary is not None else IngestSummary()
    ads: list[AdRecord] = []
    for row in _iter_raw_rows(Path(path)):
        summary.ads_read += 1
        try:
            when = date.fromisoformat(str(row["date"])[:10])
            count = int(row.get("count") or 1)
            if count < 1:
                raise ValueError(f"ad count must be >= 1, got {count}")
            ads.append(AdRecord(phone=str(row["phone"]), week_start=monday_of(when), ad_count=count))
        except (KeyError, ValueError, TypeError) as exc:
            summary.ads_malformed += 1
            logger.warning("skipping malformed ad row %d: %s", summary.ads_read, exc)
    return ads


def observation_to_dict(obs: LabeledObservation) -> dict:
    rec = obs.record
    return {
        "placekey": rec.placekey,
        "naics_code": rec.naics_code,
        "location_name": rec.location_name,
        "phone": rec.phone,
        "latitude": rec.latitude,
        "longitude": rec.longitude,
        "poi_cbg": rec.poi_cbg,
        "week_start": rec.week_start.isoformat(),
        "hourly_visits": [int(v) for v in rec.hourly_visits],
        "dwell_buckets": {k: int(v) for k, v in sorted(rec.dwell_buckets.items())},
        "visitor_home_cbgs": {k: int(v) for k, v in sorted(rec.visitor_home_cbgs.items())},
        "category": obs.category.value,
        "ad_count": obs.ad_count,
    }


def observation_from_dict(row: dict) -> LabeledObservation:
    rec = VisitWeekRecord(
        placekey=row["placekey"],
        naics_code=row["naics_code"],
        location_name=row["location_name"],
        phone=row["phone"],
        latitude=float(row["latitude"]),
        longitude=float(row["longitude"]),
        poi_cbg=row["poi_cbg"],
        week_start=date.fromisoformat(row["week_start"]),
        hourly_visits=np.asarray(row["hourly_visits"], dtype=np.int64),
        dwell_buckets=dict(row["dwell_buckets"]),
        visitor_home_cbgs=dict(row["visitor_home_cbgs"]),
    )
    return LabeledObservation(
        record=rec,
        category=LabelCategory(row["category"]),
        ad_count=int(row["ad_count"]),
    )


def write_labeled(observations: Sequence[LabeledObservation], path: str | Path) -> None:
    with Path(path).open("w") as fh:
        for obs in observations:
            fh.write(json.dumps(observation_to_dict(obs), sort_keys=True, separators=(",", ":")))
            fh.write("\n")


def read_labeled(path: str | Path) -> list[LabeledObservation]:
    out = []
    with Path(path).open() as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(observation_from_dict(json.loads(line)))
    return out
