"""Seeded synthetic incident and zone data in the real file schemas.

Durations are log-normal, scaled by per-category multiplicative factors and
by linear effects of selected zone indicators on the log scale, then clipped
to ``[0.5, duration_cap]``. The defaults loosely echo the public data
(median near 29 minutes, maximum 251.46); nothing here is a faithful traffic
model.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import INCIDENT_COLUMNS, ZONE_INDICATORS, ZONE_KEY, IncidentRecord, ZoneMetadata
from .errors import InputError
from .seeding import rng

MAIN_CATEGORIES = (("Breakdown", 0.47), ("Crash", 0.41), ("Others", 0.12))
PRIMARY_VEHICLES = (
    ("Car", 0.55), ("Truck", 0.14), ("Bus", 0.05), ("Motorcycle", 0.06),
    ("Multiple vehicles", 0.12), ("Unknown", 0.08),
)
SECONDARY_VEHICLES = (
    ("None", 0.55), ("Car", 0.28), ("Truck", 0.07), ("Motorcycle", 0.04),
    ("Bicycle", 0.02), ("Bus", 0.04),
)
ATTENDING = (
    ("Police", 0.35), ("Emergency Services", 0.2), ("Transport Management Centre", 0.25),
    ("Police, Fire and Rescue", 0.1), ("Tow truck", 0.1),
)
CLOSURES = (("Affected", 0.55), ("Lanes closed", 0.3), ("Unknown", 0.15))
DIRECTIONS = (
    ("Northbound", 0.18), ("Southbound", 0.18), ("Eastbound", 0.16), ("Westbound", 0.16),
    ("Inbound", 0.1), ("Outbound", 0.1), ("Both directions", 0.12),
)
VOLUMES = (("Heavy", 0.25), ("Light", 0.3), ("Moderate", 0.3), ("Unknown", 0.15))
DISPLAY_NAMES = {"Breakdown": "Breakdown", "Crash": "Accident", "Others": "Hazard"}
ADVICE_A = ("Expect delays", "Use alternative route", "Exercise caution", "")
ADVICE_B = ("Lane closure in effect", "Follow detour signs", "")
OTHER_ADVICE = ("Emergency services on site", "Road cleared", "")
STREETS = ("Main Street", "Highway A", "Parramatta Road", "M1 Motorway", "Victoria Road")

DEFAULT_CATEGORY_EFFECTS: dict[str, dict[str, float]] = {
    "Main Category": {"Breakdown": 0.8, "Crash": 1.25, "Others": 1.1},
    "Primary Vehicle Category": {"Truck": 1.5, "Bus": 1.3, "Motorcycle": 0.7, "Multiple vehicles": 1.4},
    "Is Major Incident": {"1": 3.0},
    "Closure Type": {"Lanes closed": 1.3},
    "Direction": {"Inbound": 1.2},
}
DEFAULT_ZONE_EFFECTS: dict[str, float] = {"PD4MV": 0.3, "ML": 0.2}

START = datetime(2017, 1, 1)
SPAN_MINUTES = 5.5 * 365.25 * 24 * 60


@dataclass
class SynthConfig:
    n_rows: int = 20000
    seed: int = 0
    lognormal_mu: float = math.log(23.0)
    lognormal_sigma: float = 0.65
    category_effects: Mapping[str, Mapping[str, float]] = field(
        default_factory=lambda: {k: dict(v) for k, v in DEFAULT_CATEGORY_EFFECTS.items()}
    )
    zone_effects: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_ZONE_EFFECTS))
    duration_cap: float = 251.46
    n_zones: int = 333
    major_rate: float = 0.05

    def __post_init__(self):
        if self.n_rows <= 0:
            raise InputError("n_rows must be positive")
        if not self.lognormal_sigma > 0:
            raise InputError("lognormal_sigma must be positive")
        if not self.duration_cap > 0.5:
            raise InputError("duration_cap must exceed 0.5 minutes")
        if self.n_zones <= 0:
            raise InputError("n_zones must be positive")
        for name in self.zone_effects:
            if name not in ZONE_INDICATORS:
                raise InputError(f"zone effect on unknown indicator {name!r}")
        for col, table in self.category_effects.items():
            for value, factor in table.items():
                if not factor > 0:
                    raise InputError(f"effect factor for {col}={value} must be positive")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise InputError(f"unknown synth option(s): {sorted(unknown)}")
        return cls(**d)


def _choice(gen: np.random.Generator, table, n: int) -> np.ndarray:
    labels = np.array([t[0] for t in table], dtype=object)
    p = np.array([t[1] for t in table], dtype=float)
    return labels[gen.choice(len(labels), size=n, p=p / p.sum())]


def _zone_table(n_zones: int, gen: np.random.Generator) -> tuple[list[str], np.ndarray]:
    """Indicator values per zone, columns ordered as ZONE_INDICATORS."""
    col = {name: i for i, name in enumerate(ZONE_INDICATORS)}
    v = np.zeros((n_zones, len(ZONE_INDICATORS)))
    u = lambda lo, hi: gen.uniform(lo, hi, n_zones)  # noqa: E731
    v[:, col["Area"]] = u(0.5, 100.0)
    for name, hi in (("ML", 12), ("TRL", 10), ("PRL", 15), ("SRL", 15), ("TrRL", 20),
                     ("RRL", 120), ("LsRL", 1.5), ("URL", 10)):
        v[:, col[name]] = u(0.0, hi)
    v[:, col["ToRL"]] = v[:, [col[k] for k in ("ML", "TRL", "PRL", "SRL", "TrRL", "RRL", "LsRL", "URL")]].sum(axis=1)
    v[:, col["EoR"]] = u(0.5, 1.0)
    v[:, col["NoN"]] = np.round(u(100, 3000))
    for name, frac in (("NDEs", 0.2), ("NNC2L", 0.05), ("NNC3L", 0.55), ("NNC4L", 0.2)):
        v[:, col[name]] = np.round(v[:, col["NoN"]] * frac * u(0.8, 1.2))
    v[:, col["AND"]] = u(2.3, 3.2)
    v[:, col["NE"]] = np.round(v[:, col["NoN"]] * v[:, col["AND"]] / 2)
    v[:, col["MCI"]] = u(0.05, 0.35)
    v[:, col["CoI"]] = u(0.1, 0.6)
    v[:, col["NBS"]] = np.round(u(5, 150))
    for name in ("CA", "EA", "HA", "IA", "OA", "PA", "PrA", "RA", "TA", "WbA"):
        v[:, col[name]] = v[:, col["Area"]] * gen.dirichlet(np.ones(10), n_zones)[:, 0]
    v[:, col["EoLU"]] = u(0.2, 0.95)
    v[:, col["TP"]] = np.round(u(3000, 30000))
    shares = gen.dirichlet([8, 30, 30, 10, 4], n_zones) * 100.0
    for j, name in enumerate(("PD0MV", "PD1MV", "PD2MV", "PD3MV", "PD4MV")):
        v[:, col[name]] = shares[:, j]
    v[:, col["PUE"]] = u(2.0, 12.0)
    v[:, col["AMI"]] = u(3000, 12000)
    for name, frac in (("NPTbyPT", 0.15), ("NPTtWbyTx", 0.005), ("NPTtWbyCD", 0.3),
                       ("NPTtWbyCP", 0.03), ("NPTtWbyO", 0.02), ("NPWfH", 0.1)):
        v[:, col[name]] = np.round(v[:, col["TP"]] * frac * u(0.5, 1.5))
    v[:, col["PWCJH"]] = u(30.0, 80.0)
    v[:, col["PBCJH"]] = (100.0 - v[:, col["PWCJH"]]) * u(0.5, 0.95)
    v[:, col["ANP_FH"]] = u(2.5, 3.5)
    ids = [str(10000 + 7 * i + 1) for i in range(n_zones)]
    return ids, np.round(v, 4)


def generate(config: SynthConfig) -> tuple[list[IncidentRecord], list[ZoneMetadata]]:
    gen = rng(config.seed, "synth")
    zone_ids, zvals = _zone_table(config.n_zones, gen)
    zones = [ZoneMetadata(zid, dict(zip(ZONE_INDICATORS, map(float, row)))) for zid, row in zip(zone_ids, zvals)]
    centroids = np.column_stack([gen.uniform(150.6, 151.3, config.n_zones), gen.uniform(-34.1, -33.6, config.n_zones)])

    n = config.n_rows
    cols: dict[str, np.ndarray] = {
        "Main Category": _choice(gen, MAIN_CATEGORIES, n),
        "Primary Vehicle Category": _choice(gen, PRIMARY_VEHICLES, n),
        "Secondary Vehicle Category": _choice(gen, SECONDARY_VEHICLES, n),
        "Attending Groups": _choice(gen, ATTENDING, n),
        "Closure Type": _choice(gen, CLOSURES, n),
        "Direction": _choice(gen, DIRECTIONS, n),
        "Traffic Volume": _choice(gen, VOLUMES, n),
    }
    zone_idx = gen.integers(0, config.n_zones, n)
    major = gen.random(n) < config.major_rate
    cols["Is Major Incident"] = np.where(major, "1", "0").astype(object)
    actual = gen.choice([2, 3, 4, 6], size=n, p=[0.3, 0.25, 0.3, 0.15])
    affected = np.minimum(gen.integers(1, 4, n), actual)
    start_min = np.floor(gen.uniform(0, SPAN_MINUTES, n))
    hours = ((START.hour * 60 + start_min) // 60 % 24).astype(int)
    cols["Hour"] = hours.astype(str).astype(object)

    log_d = config.lognormal_mu + config.lognormal_sigma * gen.standard_normal(n)
    for name, coef in config.zone_effects.items():
        z = zvals[:, ZONE_INDICATORS.index(name)]
        sd = z.std()
        if sd > 0:
            log_d = log_d + coef * ((z - z.mean()) / sd)[zone_idx]
    factor = np.ones(n)
    for column, table in config.category_effects.items():
        if column not in cols:
            raise InputError(f"category effects on unsupported column {column!r}")
        values = cols[column]
        for value, f in table.items():
            factor[values == value] *= f
    duration = np.clip(np.exp(log_d) * factor, 0.5, config.duration_cap)
    duration = np.clip(np.round(duration, 2), 0.5, config.duration_cap)

    lon = centroids[zone_idx, 0] + gen.normal(0, 0.01, n)
    lat = centroids[zone_idx, 1] + gen.normal(0, 0.01, n)
    advice_a = gen.integers(0, len(ADVICE_A), n)
    advice_b = gen.integers(0, len(ADVICE_B), n)
    other = gen.integers(0, len(OTHER_ADVICE), n)
    street = gen.integers(0, len(STREETS), n)

    records = []
    for i in range(n):
        start = START + timedelta(minutes=float(start_min[i]))
        end = start + timedelta(minutes=float(duration[i]))
        end = end.replace(second=0, microsecond=0)
        zi = int(zone_idx[i])
        cat = cols["Main Category"][i]
        records.append(
            IncidentRecord(
                incident_id=str(100001 + i),
                main_category=cat,
                duration_minutes=float(duration[i]),
                start_time=start,
                end_time=end if end >= start else start,
                longitude=round(float(lon[i]), 6),
                latitude=round(float(lat[i]), 6),
                primary_vehicle=cols["Primary Vehicle Category"][i],
                secondary_vehicle=cols["Secondary Vehicle Category"][i],
                attending_groups=cols["Attending Groups"][i],
                is_major=bool(major[i]),
                closure_type=cols["Closure Type"][i],
                direction=cols["Direction"][i],
                affected_lanes=int(affected[i]),
                actual_lanes=int(actual[i]),
                traffic_volume=cols["Traffic Volume"][i],
                suburb=f"Suburb {zi + 1:03d}",
                sa2_code=zone_ids[zi],
                day_of_week=start.strftime("%A"),
                extra={
                    "Last Updated": _fmt_time(end),
                    "Display Name": DISPLAY_NAMES[cat],
                    "Diversions": STREETS[(street[i] + 1) % len(STREETS)] if advice_a[i] == 1 else "",
                    "Advice A": ADVICE_A[advice_a[i]],
                    "Advice B": ADVICE_B[advice_b[i]],
                    "Other Advice": OTHER_ADVICE[other[i]],
                    "Main Street": STREETS[street[i]],
                    "SA2 NAME21": f"Zone {zone_ids[zi]}",
                    "SA3 CODE21": str(2000 + zi // 10),
                    "SA3 NAME21": f"Region {zi // 10}",
                    "SA4 CODE21": str(3000 + zi // 50),
                    "SA4 NAME21": f"City Region {zi // 50}",
                    "AREASQKM21": f"{zvals[zi, 0]:.4f}",
                    "LOCI URI21": f"https://example.com/zone-{zone_ids[zi]}",
                },
            )
        )
    return records, zones


def _fmt_time(ts: datetime | None) -> str:
    return "" if ts is None else ts.strftime("%d:%m:%Y %H:%M")


def _fmt_num(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def incident_row(rec: IncidentRecord) -> dict[str, str]:
    row = {
        "Incident ID": rec.incident_id,
        "Main Category": rec.main_category or "",
        "Longitude": _fmt_num(rec.longitude),
        "Latitude": _fmt_num(rec.latitude),
        "Start Time": _fmt_time(rec.start_time),
        "Day": rec.day_of_week or "",
        "End Time": _fmt_time(rec.end_time),
        "Duration in Minutes": _fmt_num(rec.duration_minutes),
        "Primary Vehicle Category": rec.primary_vehicle or "",
        "Secondary Vehicle Category": rec.secondary_vehicle or "",
        "Attending Groups": rec.attending_groups or "",
        "Is Major Incident": _fmt_num(rec.is_major),
        "Closure Type": rec.closure_type or "",
        "Direction": rec.direction or "",
        "Affected Lane": _fmt_num(rec.affected_lanes),
        "Actual Number of Lanes": _fmt_num(rec.actual_lanes),
        "Suburb": rec.suburb or "",
        "Traffic Volume": rec.traffic_volume or "",
        "SA2 CODE21": rec.sa2_code or "",
    }
    for k, v in rec.extra.items():
        row.setdefault(k, v)
    return {c: row.get(c, "") for c in INCIDENT_COLUMNS}


def write_incidents(records: Sequence[IncidentRecord], path: str | Path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=INCIDENT_COLUMNS, lineterminator="\n")
        w.writeheader()
        for rec in records:
            w.writerow(incident_row(rec))


def write_zones(zones: Sequence[ZoneMetadata], path: str | Path) -> None:
    names = list(zones[0].indicators) if zones else list(ZONE_INDICATORS)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([ZONE_KEY] + names)
        for z in zones:
            w.writerow([z.zone_id] + [_fmt_num(z.indicators[k]) for k in names])
