"""Seeded synthetic establishment population with planted risk signatures.

Generates weekly visit records, advertisement records, a synthetic
census-block-group grid, a county partisan table, and a latent-truth
file. Two archetypes drive the population: legitimate establishments
with business-hour traffic, service-length dwell times, regional visitor
draw, and moderately volatile demand; illicit establishments with
evening-shifted traffic, sub-5-minute dwell mass, locally drawn
visitors, and unusually stable demand. Four knobs set the class gaps
(evening share, short-dwell share, within-2-mile share, coefficient of
variation).

Labeled illicit establishments advertise during their high-signature
("hot") weeks; the remaining illicit establishments are hidden positives
that never advertise but share the same archetype distribution. Cool
weeks partially blend toward the establishment's own legitimate base
profile, so signatures manifest intermittently rather than uniformly.

Everything derives from one seed through named sub-streams, one per
establishment, so output is reproducible byte for byte.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from mobscreen import seeds
from mobscreen.features import EARTH_RADIUS_MILES, SQUARE_MILE_M2, CbgGeo
from mobscreen.ingest import DWELL_BUCKET_LABELS, AdRecord, VisitWeekRecord

_LAT0 = 33.5
_LON0 = -86.8
_MILES_PER_DEG_LAT = math.pi * EARTH_RADIUS_MILES / 180.0
_MILES_PER_DEG_LON = _MILES_PER_DEG_LAT * math.cos(math.radians(_LAT0))

_GRID_SPACING_MILES = 0.5
_GRID_HALF_MILES = 112.0
_GRID_CELLS = int(round(2 * _GRID_HALF_MILES / _GRID_SPACING_MILES))  # 448 per axis
_COUNTY_BLOCKS = 4
_EST_BOX_MILES = 20.0

# Hour-of-day visit weights (local time). The legitimate archetype peaks
# late morning through mid-afternoon; the illicit core peaks 4pm-8pm and
# stays elevated late.
_LEGIT_HOUR24 = np.array(
    [0, 0, 0, 0, 0, 0.002, 0.004, 0.01, 0.03, 0.07, 0.10, 0.11,
     0.11, 0.11, 0.10, 0.09, 0.08, 0.06, 0.04, 0.02, 0.01, 0.004, 0, 0]
)
_LEGIT_HOUR24 = _LEGIT_HOUR24 / _LEGIT_HOUR24.sum()

_ILLICIT_HOUR24_CORE = np.array(
    [0.015, 0.008, 0.004, 0, 0, 0, 0, 0.002, 0.005, 0.01, 0.02, 0.03,
     0.04, 0.045, 0.05, 0.06, 0.10, 0.13, 0.15, 0.145, 0.10, 0.05, 0.025, 0.011]
)
_ILLICIT_HOUR24_CORE = _ILLICIT_HOUR24_CORE / _ILLICIT_HOUR24_CORE.sum()

_LEGIT_DAY7 = np.array([0.15, 0.15, 0.15, 0.15, 0.16, 0.16, 0.08])
_ILLICIT_DAY7_CORE = np.array([0.125, 0.125, 0.125, 0.13, 0.15, 0.18, 0.165])
_DAY_MIX = 0.6

# Dwell-bucket probabilities in DWELL_BUCKET_LABELS order. The legit
# service-duration tail peaks at 21-60 and 61-120 minutes; the illicit
# tail redistributes toward shorter sessions.
_LEGIT_DWELL7 = np.array([0.659, 0.030, 0.035, 0.060, 0.130, 0.061, 0.025])
_ILLICIT_DWELL_TAIL6 = np.array([0.227, 0.207, 0.223, 0.207, 0.103, 0.033])

# Distance-band probabilities [0-1, 1-2, 2-5, 5-30, 30-60, 60+ miles].
_LEGIT_DIST6 = np.array([0.22, 0.20, 0.22, 0.25, 0.07, 0.04])
# Sampling ranges keep draws at least one snapping radius (0.36 mi for
# the 0.5-mile grid) away from band edges so cell-centroid snapping
# cannot cross a boundary.
_DIST_SAMPLING = ((0.05, 0.62), (1.38, 1.62), (2.38, 4.62), (5.40, 29.5), (30.4, 59.6), (60.4, 88.0))

_HOUR_CONC = 80.0
_DAY_CONC = 120.0
_DWELL_CONC = 150.0
_DIST_CONC = 120.0
_LOG_VISITS_SD = 0.35
_CV_LEGIT_MEAN = 0.45
_CV_SD = 0.10
_COOL_BLEND = (0.55, 0.90)
_VISITOR_RATE = 0.45
_HOT_BETA_CONC = 16.0

_NAME_SUFFIXES = ("Massage", "Spa", "Massage Therapy", "Day Spa", "Spa & Wellness")
_NAME_ADJECTIVES = (
    "Golden", "Lotus", "Serenity", "Harbor", "Crystal", "Willow", "Summit",
    "Riverside", "Magnolia", "Cedar", "Jade", "Amber", "Bluebird", "Sunrise",
)
_PHONE_FORMATS = (
    lambda d: f"({d[0:3]}) {d[3:6]}-{d[6:10]}",
    lambda d: f"+1 {d[0:3]} {d[3:6]} {d[6:10]}",
    lambda d: f"{d[0:3]}-{d[3:6]}-{d[6:10]}",
    lambda d: d,
)


@dataclass
class SynthConfig:
    n_establishments: int = 2000
    n_weeks: int = 52
    illicit_fraction: float = 0.10
    labeled_fraction_of_illicit: float = 0.5
    quiet_week_fraction: float = 0.4
    seed: int = 42
    evening_shift: float = 0.28
    short_dwell_share: float = 0.10
    local_share: float = 0.13
    stability_gap: float = 0.15
    mean_weekly_visits: float = 110.0
    start_date: date = date(2024, 1, 1)

    def validate(self) -> None:
        if self.n_establishments < 1 or self.n_weeks < 1:
            raise ValueError("population and week counts must be positive")
        for name in ("illicit_fraction", "labeled_fraction_of_illicit", "quiet_week_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.start_date.weekday() != 0:
            raise ValueError("start_date must be a Monday")
        core_gap = _window_share(_ILLICIT_HOUR24_CORE) - _window_share(_LEGIT_HOUR24)
        if not 0.0 <= self.evening_shift <= core_gap:
            raise ValueError(f"evening_shift must be in [0, {core_gap:.3f}] for the archetype profiles")
        if not 0.0 <= self.short_dwell_share <= 0.97 - _LEGIT_DWELL7[0]:
            raise ValueError("short_dwell_share pushes the <5 bucket above 0.97")
        if not 0.0 <= self.local_share < _LEGIT_DIST6[3:].sum():
            raise ValueError("local_share exceeds the regional mass available to move")
        if self.stability_gap < 0 or self.stability_gap >= _CV_LEGIT_MEAN:
            raise ValueError("stability_gap must be in [0, legit CV mean)")

    def to_dict(self) -> dict:
        return {
            "n_establishments": self.n_establishments,
            "n_weeks": self.n_weeks,
            "illicit_fraction": self.illicit_fraction,
            "labeled_fraction_of_illicit": self.labeled_fraction_of_illicit,
            "quiet_week_fraction": self.quiet_week_fraction,
            "seed": self.seed,
            "evening_shift": self.evening_shift,
            "short_dwell_share": self.short_dwell_share,
            "local_share": self.local_share,
            "stability_gap": self.stability_gap,
            "mean_weekly_visits": self.mean_weekly_visits,
            "start_date": self.start_date.isoformat(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "start_date" in d:
            d["start_date"] = date.fromisoformat(d["start_date"])
        return cls(**d)


def _window_share(hour24: np.ndarray, lo: int = 16, hi: int = 20) -> float:
    return float(hour24[lo:hi].sum())


@dataclass
class SynthData:
    """Generated population in columnar form, row index = e * n_weeks + w."""

    config: SynthConfig
    placekeys: list[str]
    latent_illicit: np.ndarray
    labeled_flag: np.ndarray
    est_names: list[str]
    est_phones: list[str]
    est_cbgs: list[str]
    est_lat: np.ndarray
    est_lon: np.ndarray
    week_starts: list[date]
    hours: np.ndarray
    dwell: np.ndarray
    visitor_ptr: np.ndarray
    visitor_cell: np.ndarray
    visitor_count: np.ndarray
    ads: list[tuple[str, date, int]]
    cell_lat: np.ndarray
    cell_lon: np.ndarray
    cell_area: np.ndarray
    cell_county: list[str]
    partisan: dict[str, float]

    def cell_id(self, cell: int) -> str:
        return f"{self.cell_county[cell]}{cell:07d}"

    def geo_index(self) -> dict[str, CbgGeo]:
        return {
            self.cell_id(c): CbgGeo(
                cbg_id=self.cell_id(c),
                centroid_lat=float(self.cell_lat[c]),
                centroid_lon=float(self.cell_lon[c]),
                land_area=float(self.cell_area[c]),
            )
            for c in range(len(self.cell_lat))
        }

    def to_records_and_ads(self) -> tuple[list[VisitWeekRecord], list[AdRecord]]:
        """In-memory view of the same rows the file writers emit."""
        records = []
        n_weeks = self.config.n_weeks
        for e, pk in enumerate(self.placekeys):
            for w in range(n_weeks):
                i = e * n_weeks + w
                lo, hi = self.visitor_ptr[i], self.visitor_ptr[i + 1]
                homes = {
                    self.cell_id(int(c)): int(k)
                    for c, k in zip(self.visitor_cell[lo:hi], self.visitor_count[lo:hi])
                }
                dwell = {
                    label: int(v)
                    for label, v in zip(DWELL_BUCKET_LABELS, self.dwell[i])
                    if v > 0
                }
                records.append(
                    VisitWeekRecord(
                        placekey=pk,
                        naics_code="812199",
                        location_name=self.est_names[e],
                        phone=self.est_phones[e],
                        latitude=float(self.est_lat[e]),
                        longitude=float(self.est_lon[e]),
                        poi_cbg=self.est_cbgs[e],
                        week_start=self.week_starts[w],
                        hourly_visits=self.hours[i].astype(np.int64),
                        dwell_buckets=dwell,
                        visitor_home_cbgs=homes,
                    )
                )
        ads = [AdRecord(phone=p, week_start=d, ad_count=c) for p, d, c in self.ads]
        return records, ads


def generate(cfg: SynthConfig) -> SynthData:
    """Generate the full synthetic population for a config."""
    cfg.validate()
    n, n_weeks = cfg.n_establishments, cfg.n_weeks
    n_illicit = int(round(n * cfg.illicit_fraction))
    n_labeled = int(round(n_illicit * cfg.labeled_fraction_of_illicit))

    perm = seeds.rng(cfg.seed, "classes").permutation(n)
    latent = np.zeros(n, dtype=bool)
    latent[perm[:n_illicit]] = True
    labeled = np.zeros(n, dtype=bool)
    labeled[perm[:n_labeled]] = True

    cell_lat, cell_lon, cell_area, cell_county = _build_grid(cfg.seed)
    partisan = _build_partisan(cfg.seed)

    week_starts = [cfg.start_date + timedelta(days=7 * w) for w in range(n_weeks)]
    w_evening = cfg.evening_shift / (
        _window_share(_ILLICIT_HOUR24_CORE) - _window_share(_LEGIT_HOUR24)
    )

    n_rows = n * n_weeks
    hours = np.zeros((n_rows, 168), dtype=np.int32)
    dwell = np.zeros((n_rows, 7), dtype=np.int32)
    visitor_ptr = np.zeros(n_rows + 1, dtype=np.int64)
    cells_chunks: list[np.ndarray] = []
    counts_chunks: list[np.ndarray] = []

    placekeys = [f"pk-{e:06d}" for e in range(n)]
    est_names: list[str] = []
    est_phones: list[str] = []
    est_cbgs: list[str] = []
    est_lat = np.zeros(n)
    est_lon = np.zeros(n)
    ads: list[tuple[str, date, int]] = []

    box_cells = int(_EST_BOX_MILES / _GRID_SPACING_MILES)
    g_mid = _GRID_CELLS // 2

    for e in range(n):
        r = seeds.rng(cfg.seed, "est", e)
        digits = f"20555{e:05d}"
        est_names.append(
            f"{_NAME_ADJECTIVES[e % len(_NAME_ADJECTIVES)]} "
            f"{_NAME_SUFFIXES[(e // len(_NAME_ADJECTIVES)) % len(_NAME_SUFFIXES)]}"
        )
        est_phones.append(_PHONE_FORMATS[e % 4](digits))

        gx = int(r.integers(g_mid - box_cells, g_mid + box_cells))
        gy = int(r.integers(g_mid - box_cells, g_mid + box_cells))
        cell = gy * _GRID_CELLS + gx
        est_cbgs.append(f"{cell_county[cell]}{cell:07d}")
        jx, jy = r.uniform(-0.15, 0.15, size=2)
        x0 = _cell_coord(gx) + jx
        y0 = _cell_coord(gy) + jy
        est_lat[e] = _LAT0 + y0 / _MILES_PER_DEG_LAT
        est_lon[e] = _LON0 + x0 / _MILES_PER_DEG_LON

        hour_base = r.dirichlet(_LEGIT_HOUR24 * _HOUR_CONC + 0.02)
        day_base = r.dirichlet(_LEGIT_DAY7 * _DAY_CONC)
        dwell_base = r.dirichlet(_LEGIT_DWELL7 * _DWELL_CONC)
        dist_base = r.dirichlet(_LEGIT_DIST6 * _DIST_CONC)
        m_visits = float(np.exp(r.normal(np.log(cfg.mean_weekly_visits), _LOG_VISITS_SD)))
        cv_target = float(r.normal(_CV_LEGIT_MEAN, _CV_SD))

        illicit = bool(latent[e])
        if illicit:
            cv_target -= cfg.stability_gap
            hour_ill = (1 - w_evening) * hour_base + w_evening * _ILLICIT_HOUR24_CORE
            day_ill = (1 - _DAY_MIX) * day_base + _DAY_MIX * _ILLICIT_DAY7_CORE
            short_ill = min(dwell_base[0] + cfg.short_dwell_share, 0.97)
            dwell_ill = np.concatenate([[short_ill], (1 - short_ill) * _ILLICIT_DWELL_TAIL6])
            dist_ill = _shift_local(dist_base, cfg.local_share)
        cv_target = min(max(cv_target, math.sqrt(1.35 / m_visits), 0.12), 0.90)

        r_nb = m_visits / (cv_target**2 * m_visits - 1.0)
        p_nb = r_nb / (r_nb + m_visits)
        totals = r.negative_binomial(r_nb, p_nb, size=n_weeks)

        if illicit:
            f_hot = r.beta(
                _HOT_BETA_CONC * (1 - cfg.quiet_week_fraction),
                _HOT_BETA_CONC * cfg.quiet_week_fraction,
            )
            n_hot = min(max(int(round(f_hot * n_weeks)), 1), n_weeks)
            hot_weeks = set(int(w) for w in r.choice(n_weeks, size=n_hot, replace=False))
        else:
            hot_weeks = set()
        blends = r.uniform(*_COOL_BLEND, size=n_weeks)

        for w in range(n_weeks):
            i = e * n_weeks + w
            total = int(totals[w])
            if illicit and w in hot_weeks:
                hour_w, day_w, dwell_w, dist_w = hour_ill, day_ill, dwell_ill, dist_ill
            elif illicit:
                b = blends[w]
                hour_w = b * hour_base + (1 - b) * hour_ill
                day_w = b * day_base + (1 - b) * day_ill
                dwell_w = b * dwell_base + (1 - b) * dwell_ill
                dist_w = b * dist_base + (1 - b) * dist_ill
            else:
                hour_w, day_w, dwell_w, dist_w = hour_base, day_base, dwell_base, dist_base

            if total > 0:
                hours[i] = r.multinomial(total, np.outer(day_w, hour_w).ravel())
                dwell[i] = r.multinomial(total, dwell_w)
            n_vis = min(max(int(r.poisson(_VISITOR_RATE * max(total, 1))), 1), 800)
            bins = r.choice(6, size=n_vis, p=dist_w / dist_w.sum())
            lo = np.array([_DIST_SAMPLING[b][0] for b in bins])
            hi = np.array([_DIST_SAMPLING[b][1] for b in bins])
            dist = r.uniform(lo, hi)
            theta = r.uniform(0.0, 2.0 * math.pi, size=n_vis)
            vx = x0 + dist * np.cos(theta)
            vy = y0 + dist * np.sin(theta)
            cgx = np.clip(_coord_cell(vx), 0, _GRID_CELLS - 1)
            cgy = np.clip(_coord_cell(vy), 0, _GRID_CELLS - 1)
            vis_cells, vis_counts = np.unique(cgy * _GRID_CELLS + cgx, return_counts=True)
            cells_chunks.append(vis_cells.astype(np.int32))
            counts_chunks.append(vis_counts.astype(np.int32))
            visitor_ptr[i + 1] = visitor_ptr[i] + vis_cells.size

        if illicit and labeled[e]:
            ad_phone = _PHONE_FORMATS[(e + 1) % 4](digits)
            for w in sorted(hot_weeks):
                count = 1 + int(r.poisson(1.5))
                day_offset = int(r.integers(0, 7))
                ads.append((ad_phone, week_starts[w] + timedelta(days=day_offset), count))

    r_noise = seeds.rng(cfg.seed, "noise-ads")
    for j in range(20):
        when = week_starts[int(r_noise.integers(0, n_weeks))]
        ads.append((f"99988{j:05d}", when, 1 + int(r_noise.poisson(1.0))))
    ads.append(("ext. 12", week_starts[0], 1))
    ads.append(("call us", week_starts[0], 2))

    return SynthData(
        config=cfg,
        placekeys=placekeys,
        latent_illicit=latent,
        labeled_flag=labeled,
        est_names=est_names,
        est_phones=est_phones,
        est_cbgs=est_cbgs,
        est_lat=est_lat,
        est_lon=est_lon,
        week_starts=week_starts,
        hours=hours,
        dwell=dwell,
        visitor_ptr=visitor_ptr,
        visitor_cell=np.concatenate(cells_chunks) if cells_chunks else np.zeros(0, np.int32),
        visitor_count=np.concatenate(counts_chunks) if counts_chunks else np.zeros(0, np.int32),
        ads=ads,
        cell_lat=cell_lat,
        cell_lon=cell_lon,
        cell_area=cell_area,
        cell_county=cell_county,
        partisan=partisan,
    )


def _shift_local(dist: np.ndarray, share: float) -> np.ndarray:
    """Move ``share`` of regional mass into the two local bands (6:7 split)."""
    out = dist.copy()
    regional = out[3:].sum()
    moved = min(share, regional - 0.01)
    out[0] += moved * 6.0 / 13.0
    out[1] += moved * 7.0 / 13.0
    out[3:] *= (regional - moved) / regional
    return out


def _cell_coord(g: int | np.ndarray) -> float | np.ndarray:
    return (g + 0.5) * _GRID_SPACING_MILES - _GRID_HALF_MILES


def _coord_cell(x: np.ndarray) -> np.ndarray:
    return np.floor((x + _GRID_HALF_MILES) / _GRID_SPACING_MILES).astype(np.int64)


def _build_grid(seed: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[str]]:
    g = np.arange(_GRID_CELLS)
    xs = _cell_coord(g)
    lat = _LAT0 + xs / _MILES_PER_DEG_LAT
    lon = _LON0 + xs / _MILES_PER_DEG_LON
    cell_lat = np.repeat(lat, _GRID_CELLS)
    cell_lon = np.tile(lon, _GRID_CELLS)
    base_area = SQUARE_MILE_M2 * _GRID_SPACING_MILES**2
    jitter = seeds.rng(seed, "geo").lognormal(0.0, 0.35, size=_GRID_CELLS * _GRID_CELLS)
    cell_area = base_area * jitter

    block = _GRID_CELLS // _COUNTY_BLOCKS
    by = np.repeat(g // block, _GRID_CELLS)
    bx = np.tile(g // block, _GRID_CELLS)
    counties = [f"{10 + int(i):02d}{int(j):03d}" for i, j in zip(by, bx)]
    return cell_lat, cell_lon, cell_area, counties


def _build_partisan(seed: int) -> dict[str, float]:
    r = seeds.rng(seed, "partisan")
    out = {}
    for i in range(_COUNTY_BLOCKS):
        for j in range(_COUNTY_BLOCKS):
            out[f"{10 + i:02d}{j:03d}"] = float(np.round(r.uniform(0.05, 0.95), 4))
    return out


# ---------------------------------------------------------------------------
# File emission (the ingest module's input formats plus truth.csv)
# ---------------------------------------------------------------------------


def write_synth(data: SynthData, out_dir: str | Path) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "pois": out / "pois.jsonl",
        "ads": out / "ads.csv",
        "geo": out / "geo.csv",
        "partisan": out / "partisan.csv",
        "truth": out / "truth.csv",
    }

    n_weeks = data.config.n_weeks
    with paths["pois"].open("w") as fh:
        for e, pk in enumerate(data.placekeys):
            for w in range(n_weeks):
                i = e * n_weeks + w
                lo, hi = data.visitor_ptr[i], data.visitor_ptr[i + 1]
                row = {
                    "placekey": pk,
                    "location_name": data.est_names[e],
                    "naics_code": "812199",
                    "phone": data.est_phones[e],
                    "latitude": float(data.est_lat[e]),
                    "longitude": float(data.est_lon[e]),
                    "poi_cbg": data.est_cbgs[e],
                    "date_range_start": data.week_starts[w].isoformat(),
                    "visits_by_each_hour": [int(v) for v in data.hours[i]],
                    "bucketed_dwell_times": {
                        label: int(v)
                        for label, v in zip(DWELL_BUCKET_LABELS, data.dwell[i])
                        if v > 0
                    },
                    "visitor_home_cbgs": {
                        data.cell_id(int(c)): int(k)
                        for c, k in zip(
                            data.visitor_cell[lo:hi], data.visitor_count[lo:hi]
                        )
                    },
                }
                fh.write(json.dumps(row, sort_keys=True, separators=(",", ":")))
                fh.write("\n")

    with paths["ads"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["phone", "date", "count"])
        for phone, when, count in data.ads:
            writer.writerow([phone, when.isoformat(), count])

    with paths["geo"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cbg_id", "centroid_lat", "centroid_lon", "land_area_m2"])
        for c in range(len(data.cell_lat)):
            writer.writerow(
                [
                    data.cell_id(c),
                    repr(float(data.cell_lat[c])),
                    repr(float(data.cell_lon[c])),
                    repr(float(data.cell_area[c])),
                ]
            )

    with paths["partisan"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["county_fips", "partisan_index"])
        for county, value in sorted(data.partisan.items()):
            writer.writerow([county, repr(value)])

    with paths["truth"].open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["placekey", "latent_class", "labeled_flag"])
        for e, pk in enumerate(data.placekeys):
            writer.writerow(
                [
                    pk,
                    "illicit" if data.latent_illicit[e] else "legit",
                    int(bool(data.labeled_flag[e])),
                ]
            )

    return paths


def read_truth(path: str | Path) -> dict[str, tuple[str, bool]]:
    """truth.csv -> placekey: (latent_class, labeled_flag)."""
    out: dict[str, tuple[str, bool]] = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            out[row["placekey"]] = (row["latent_class"], bool(int(row["labeled_flag"])))
    return out
