"""Incident and zone CSV ingestion, joining, label encoding and splits.

The incident file uses the long column names of the public Sydney incident
data dictionary ("Main Category", "Duration in Minutes", ...). Files whose
headers differ can be read through an alias map ``{file header: canonical}``.
The zone file is keyed by ``ZID`` and carries the indicator short names
(``Area``, ``ML``, ..., ``ANP_FH``).
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateKeyError,
    EmptyInputError,
    InputError,
    ParseError,
    SchemaError,
    TooFewRowsError,
)
from .seeding import rng

UNKNOWN = "Unknown"

INCIDENT_COLUMNS = (
    "Incident ID",
    "Main Category",
    "Longitude",
    "Latitude",
    "Start Time",
    "Last Updated",
    "Day",
    "End Time",
    "Duration in Minutes",
    "Primary Vehicle Category",
    "Secondary Vehicle Category",
    "Attending Groups",
    "Display Name",
    "Is Major Incident",
    "Diversions",
    "Advice A",
    "Advice B",
    "Other Advice",
    "Closure Type",
    "Direction",
    "Main Street",
    "Affected Lane",
    "Actual Number of Lanes",
    "Suburb",
    "Traffic Volume",
    "SA2 CODE21",
    "SA2 NAME21",
    "SA3 CODE21",
    "SA3 NAME21",
    "SA4 CODE21",
    "SA4 NAME21",
    "AREASQKM21",
    "LOCI URI21",
)

REQUIRED_INCIDENT_COLUMNS = (
    "Incident ID",
    "Main Category",
    "Start Time",
    "End Time",
    "Duration in Minutes",
    "SA2 CODE21",
)

FREE_TEXT_COLUMNS = (
    "Advice A",
    "Advice B",
    "Other Advice",
    "Diversions",
    "Main Street",
    "LOCI URI21",
)

# column header -> IncidentRecord attribute
_FIELD_OF = {
    "Incident ID": "incident_id",
    "Main Category": "main_category",
    "Longitude": "longitude",
    "Latitude": "latitude",
    "Start Time": "start_time",
    "End Time": "end_time",
    "Day": "day_of_week",
    "Duration in Minutes": "duration_minutes",
    "Primary Vehicle Category": "primary_vehicle",
    "Secondary Vehicle Category": "secondary_vehicle",
    "Attending Groups": "attending_groups",
    "Is Major Incident": "is_major",
    "Closure Type": "closure_type",
    "Direction": "direction",
    "Affected Lane": "affected_lanes",
    "Actual Number of Lanes": "actual_lanes",
    "Traffic Volume": "traffic_volume",
    "Suburb": "suburb",
    "SA2 CODE21": "sa2_code",
}

ZONE_KEY = "ZID"

ZONE_INDICATORS = (
    "Area", "ML", "TRL", "PRL", "SRL", "TrRL", "RRL", "LsRL", "URL", "ToRL",
    "EoR", "NoN", "NDEs", "NNC2L", "NNC3L", "NNC4L", "AND", "NE", "MCI", "CoI",
    "NBS", "CA", "EA", "HA", "IA", "OA", "PA", "PrA", "RA", "TA",
    "WbA", "EoLU", "TP", "PD0MV", "PD1MV", "PD2MV", "PD3MV", "PD4MV", "PUE", "AMI",
    "NPTbyPT", "NPTtWbyTx", "NPTtWbyCD", "NPTtWbyCP", "NPTtWbyO", "NPWfH", "PWCJH", "PBCJH", "ANP_FH",
)

NONNEGATIVE_INDICATORS = frozenset(
    ("Area", "ML", "TRL", "PRL", "SRL", "TrRL", "RRL", "LsRL", "URL", "ToRL")
    + ("CA", "EA", "HA", "IA", "OA", "PA", "PrA", "RA", "TA", "WbA")
)
PERCENT_INDICATORS = frozenset(("PD0MV", "PD1MV", "PD2MV", "PD3MV", "PD4MV", "PUE", "PWCJH", "PBCJH"))

# Default feature columns: categoricals first, then numerics, then zone indicators.
CATEGORICAL_FEATURES = (
    "Main Category",
    "Primary Vehicle Category",
    "Secondary Vehicle Category",
    "Attending Groups",
    "Closure Type",
    "Direction",
    "Traffic Volume",
    "Suburb",
    "Day",
)
NUMERIC_FEATURES = (
    "Longitude",
    "Latitude",
    "Is Major Incident",
    "Affected Lane",
    "Actual Number of Lanes",
    "Hour",
    "Month",
)

_TIME_FORMATS = ("%d:%m:%Y %H:%M", "%d:%m:%Y %H:%M:%S", "%d/%m/%Y %H:%M", "%d/%m/%Y %H:%M:%S")


@dataclass(frozen=True)
class IncidentRecord:
    incident_id: str
    main_category: str | None
    duration_minutes: float
    start_time: datetime | None = None
    end_time: datetime | None = None
    longitude: float | None = None
    latitude: float | None = None
    primary_vehicle: str | None = None
    secondary_vehicle: str | None = None
    attending_groups: str | None = None
    is_major: bool | None = None
    closure_type: str | None = None
    direction: str | None = None
    affected_lanes: int | None = None
    actual_lanes: int | None = None
    traffic_volume: str | None = None
    suburb: str | None = None
    sa2_code: str | None = None
    day_of_week: str | None = None
    extra: Mapping[str, str] = field(default_factory=dict, compare=False)

    @property
    def hour(self) -> int | None:
        return None if self.start_time is None else self.start_time.hour

    @property
    def month(self) -> int | None:
        return None if self.start_time is None else self.start_time.month


@dataclass(frozen=True)
class ZoneMetadata:
    zone_id: str
    indicators: Mapping[str, float]


class IncidentList(list):
    """Parsed incidents; ``dropped`` counts rows that had no usable duration."""

    dropped: int = 0


@dataclass(frozen=True)
class JoinedRecord:
    incident: IncidentRecord
    indicators: Mapping[str, float]
    matched: bool


@dataclass
class JoinReport:
    rows: int
    dropped: int
    unmatched_rows: int
    unmatched_zones: list[str]

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "dropped": self.dropped,
            "unmatched_rows": self.unmatched_rows,
            "unmatched_zones": list(self.unmatched_zones),
        }


class JoinedList(list):
    report: JoinReport


def parse_timestamp(text: str | None) -> datetime | None:
    if text is None:
        return None
    text = text.strip()
    if not text:
        return None
    for fmt in _TIME_FORMATS:
        try:
            return datetime.strptime(text, fmt)
        except ValueError:
            pass
    try:
        ts = datetime.fromisoformat(text.replace("Z", "+00:00"))
    except ValueError:
        return None
    return ts.replace(tzinfo=None)


def _blank(text: str | None) -> bool:
    return text is None or not text.strip()


def _float_or_none(text: str | None) -> float | None:
    if _blank(text):
        return None
    try:
        value = float(text)
    except ValueError:
        return None
    return value if math.isfinite(value) else None


def _int_or_none(text: str | None) -> int | None:
    value = _float_or_none(text)
    return None if value is None else int(round(value))


def _bool_or_none(text: str | None) -> bool | None:
    if _blank(text):
        return None
    t = text.strip().lower()
    if t in ("1", "true", "yes", "y", "1.0"):
        return True
    if t in ("0", "false", "no", "n", "0.0"):
        return False
    return None


def _str_or_none(text: str | None) -> str | None:
    return None if _blank(text) else text.strip()


def _read_csv(path: str | Path, aliases: Mapping[str, str] | None = None):
    path = Path(path)
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyInputError(f"{path}: empty file") from None
        if aliases:
            header = [aliases.get(h.strip(), h.strip()) for h in header]
        else:
            header = [h.strip() for h in header]
        rows = [dict(zip(header, r)) for r in reader if any(c.strip() for c in r)]
    return header, rows


def load_incidents(path: str | Path, aliases: Mapping[str, str] | None = None) -> IncidentList:
    """Parse an incident CSV into records, in file order.

    A blank or unparseable duration is recomputed from Start/End Time; rows
    where neither route gives a positive duration are dropped and counted in
    ``result.dropped``. An End Time earlier than Start Time is discarded while
    the row is kept.
    """
    header, rows = _read_csv(path, aliases)
    for col in REQUIRED_INCIDENT_COLUMNS:
        if col not in header:
            raise SchemaError(col, str(path))
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")

    out = IncidentList()
    dropped = 0
    modelled = set(_FIELD_OF)
    for raw in rows:
        start = parse_timestamp(raw.get("Start Time"))
        end = parse_timestamp(raw.get("End Time"))
        if start is not None and end is not None and end < start:
            end = None
        duration = _float_or_none(raw.get("Duration in Minutes"))
        if duration is None and start is not None and end is not None:
            duration = (end - start).total_seconds() / 60.0
        if duration is None or duration <= 0:
            dropped += 1
            continue
        day = _str_or_none(raw.get("Day"))
        if day is None and start is not None:
            day = start.strftime("%A")
        out.append(
            IncidentRecord(
                incident_id=(raw.get("Incident ID") or "").strip(),
                main_category=_str_or_none(raw.get("Main Category")),
                duration_minutes=duration,
                start_time=start,
                end_time=end,
                longitude=_float_or_none(raw.get("Longitude")),
                latitude=_float_or_none(raw.get("Latitude")),
                primary_vehicle=_str_or_none(raw.get("Primary Vehicle Category")),
                secondary_vehicle=_str_or_none(raw.get("Secondary Vehicle Category")),
                attending_groups=_str_or_none(raw.get("Attending Groups")),
                is_major=_bool_or_none(raw.get("Is Major Incident")),
                closure_type=_str_or_none(raw.get("Closure Type")),
                direction=_str_or_none(raw.get("Direction")),
                affected_lanes=_int_or_none(raw.get("Affected Lane")),
                actual_lanes=_int_or_none(raw.get("Actual Number of Lanes")),
                traffic_volume=_str_or_none(raw.get("Traffic Volume")),
                suburb=_str_or_none(raw.get("Suburb")),
                sa2_code=_str_or_none(raw.get("SA2 CODE21")),
                day_of_week=day,
                extra={k: v for k, v in raw.items() if k not in modelled and k is not None},
            )
        )
    out.dropped = dropped
    return out


def load_zones(path: str | Path) -> list[ZoneMetadata]:
    header, rows = _read_csv(path)
    if ZONE_KEY not in header:
        raise SchemaError(ZONE_KEY, str(path))
    if not rows:
        raise EmptyInputError(f"{path}: no data rows")
    names = [h for h in header if h != ZONE_KEY]
    seen: set[str] = set()
    zones = []
    for i, raw in enumerate(rows, start=1):
        zid = (raw.get(ZONE_KEY) or "").strip()
        if not zid:
            raise ParseError("blank zone id", row=i, column=ZONE_KEY)
        if zid in seen:
            raise DuplicateKeyError(f"{path}: duplicate {ZONE_KEY} {zid!r} at row {i}")
        seen.add(zid)
        values = {}
        for name in names:
            text = raw.get(name)
            if _blank(text):
                values[name] = math.nan
                continue
            try:
                v = float(text)
            except ValueError:
                raise ParseError(f"non-numeric indicator value {text!r}", row=i, column=name) from None
            if not math.isfinite(v):
                raise ParseError(f"non-finite indicator value {text!r}", row=i, column=name)
            if name in NONNEGATIVE_INDICATORS and v < 0:
                raise ParseError(f"negative value {v}", row=i, column=name)
            if name in PERCENT_INDICATORS and not 0.0 <= v <= 100.0:
                raise ParseError(f"percentage {v} outside [0, 100]", row=i, column=name)
            values[name] = v
        zones.append(ZoneMetadata(zid, values))
    return zones


def zone_medians(zones: Sequence[ZoneMetadata]) -> dict[str, float]:
    names: list[str] = []
    for z in zones:
        for k in z.indicators:
            if k not in names:
                names.append(k)
    medians = {}
    for name in names:
        col = np.array([z.indicators.get(name, math.nan) for z in zones], dtype=float)
        col = col[~np.isnan(col)]
        medians[name] = float(np.median(col)) if col.size else math.nan
    return medians


def merge(incidents: Sequence[IncidentRecord], zones: Sequence[ZoneMetadata]) -> JoinedList:
    """Left-join incidents to zones on the SA2 code.

    Incidents whose zone is unknown receive the per-indicator zone medians
    and are tallied in ``result.report``.
    """
    by_id = {z.zone_id: z for z in zones}
    medians = zone_medians(zones)
    out = JoinedList()
    unmatched: set[str] = set()
    unmatched_rows = 0
    for rec in incidents:
        zone = by_id.get(rec.sa2_code) if rec.sa2_code is not None else None
        if zone is None:
            unmatched_rows += 1
            unmatched.add(rec.sa2_code if rec.sa2_code is not None else "")
            out.append(JoinedRecord(rec, dict(medians), False))
        else:
            ind = {k: (medians[k] if math.isnan(zone.indicators.get(k, math.nan)) else zone.indicators[k])
                   for k in medians}
            out.append(JoinedRecord(rec, ind, True))
    out.report = JoinReport(
        rows=len(out),
        dropped=getattr(incidents, "dropped", 0),
        unmatched_rows=unmatched_rows,
        unmatched_zones=sorted(unmatched),
    )
    return out


def _raw_value(jr: JoinedRecord, name: str):
    rec = jr.incident
    if name == "Hour":
        return rec.hour
    if name == "Month":
        return rec.month
    if name in _FIELD_OF:
        value = getattr(rec, _FIELD_OF[name])
        if isinstance(value, bool):
            return int(value)
        return value
    if name in jr.indicators:
        return jr.indicators[name]
    if name in rec.extra:
        return _str_or_none(rec.extra[name])
    raise KeyError(name)


def available_columns(records: Sequence[JoinedRecord]) -> list[str]:
    names = list(INCIDENT_COLUMNS[:])
    names += ["Hour", "Month"]
    if records:
        names += [k for k in records[0].indicators if k not in names]
        names += [k for k in records[0].incident.extra if k not in names]
    return names


def column_values(records: Sequence[JoinedRecord], name: str) -> list:
    """Raw per-row values of one column (``None`` when missing)."""
    if not records:
        return []
    try:
        return [_raw_value(r, name) for r in records]
    except KeyError:
        raise InputError(f"unknown column {name!r}") from None


def category_labels(records: Sequence[JoinedRecord], name: str) -> list[str]:
    """Column values as category strings; missing values become ``Unknown``."""
    out = []
    for v in column_values(records, name):
        if v is None or (isinstance(v, float) and math.isnan(v)):
            out.append(UNKNOWN)
        elif isinstance(v, float) and v.is_integer():
            out.append(str(int(v)))
        else:
            out.append(str(v))
    return out


class LabelEncoder:
    """Bijective category <-> code map; codes follow lexicographic order."""

    def __init__(self, categories: Iterable[str]):
        self.classes = tuple(sorted(set(categories)))
        self.mapping = {c: i for i, c in enumerate(self.classes)}

    def encode(self, value: str) -> int:
        return self.mapping[value]

    def decode(self, code: int) -> str:
        return self.classes[int(code)]

    def transform(self, values: Iterable[str]) -> np.ndarray:
        unknown = self.mapping.get(UNKNOWN, len(self.classes))
        return np.array([self.mapping.get(v, unknown) for v in values], dtype=float)

    def __len__(self):
        return len(self.classes)

    def __eq__(self, other):
        return isinstance(other, LabelEncoder) and self.classes == other.classes

    def to_dict(self) -> dict:
        return {"classes": list(self.classes)}


@dataclass
class ColumnMeta:
    name: str
    kind: str  # "numeric" | "categorical"
    encoder: LabelEncoder | None = None
    fill_value: float | None = None

    def __post_init__(self):
        if self.kind not in ("numeric", "categorical"):
            raise ValueError(f"unknown column kind {self.kind!r}")
        if (self.kind == "categorical") != (self.encoder is not None):
            raise ValueError(f"column {self.name!r}: categorical columns need an encoder, numeric none")

    def to_dict(self) -> dict:
        d = {"name": self.name, "kind": self.kind}
        if self.encoder is not None:
            d["classes"] = list(self.encoder.classes)
        if self.fill_value is not None:
            d["fill_value"] = self.fill_value
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ColumnMeta":
        enc = LabelEncoder(d["classes"]) if d["kind"] == "categorical" else None
        return cls(d["name"], d["kind"], enc, d.get("fill_value"))


@dataclass
class FeatureMatrix:
    rows: np.ndarray
    columns: list[ColumnMeta]
    target: np.ndarray
    row_ids: list[str]

    def __post_init__(self):
        n, d = self.rows.shape
        if len(self.columns) != d or self.target.shape != (n,) or len(self.row_ids) != n:
            raise ValueError("inconsistent FeatureMatrix shapes")

    def __len__(self):
        return self.rows.shape[0]

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def subset(self, idx) -> "FeatureMatrix":
        idx = np.asarray(idx, dtype=np.int64)
        return FeatureMatrix(self.rows[idx], self.columns, self.target[idx], [self.row_ids[i] for i in idx])


def default_feature_columns(records: Sequence[JoinedRecord]) -> list[str]:
    cols = list(CATEGORICAL_FEATURES) + list(NUMERIC_FEATURES)
    if records:
        cols += list(records[0].indicators)
    return cols


def _is_numeric_column(name: str, records) -> bool:
    if name in CATEGORICAL_FEATURES or name in _FIELD_OF and name not in NUMERIC_FEATURES:
        return False
    if name in NUMERIC_FEATURES:
        return True
    return bool(records) and name in records[0].indicators


def encode(
    records: Sequence[JoinedRecord],
    include: Sequence[str] = (),
    exclude: Sequence[str] = (),
    columns: Sequence[ColumnMeta] | None = None,
) -> FeatureMatrix:
    """Build the numeric feature matrix with duration (minutes) as target.

    ``include`` adds columns beyond the defaults (extra categoricals such as
    "Display Name"); ``exclude`` removes any. Passing ``columns`` from an
    earlier call reuses its encoders and fill values instead of fitting new
    ones, which is how held-out data is aligned with a trained model.
    """
    if not records:
        raise EmptyInputError("encode: no records")
    n = len(records)
    target = np.array([r.incident.duration_minutes for r in records], dtype=float)
    row_ids = [r.incident.incident_id for r in records]

    if columns is not None:
        mats = []
        for meta in columns:
            if meta.kind == "categorical":
                mats.append(meta.encoder.transform(category_labels(records, meta.name)))
            else:
                col = np.array([np.nan if v is None else float(v) for v in column_values(records, meta.name)])
                col[np.isnan(col)] = meta.fill_value if meta.fill_value is not None else 0.0
                mats.append(col)
        rows = np.column_stack(mats) if mats else np.zeros((n, 0))
        return FeatureMatrix(rows, list(columns), target, row_ids)

    names = default_feature_columns(records)
    names += [c for c in include if c not in names]
    names = [c for c in names if c not in set(exclude)]
    metas: list[ColumnMeta] = []
    mats = []
    for name in names:
        raw = column_values(records, name)
        if all(v is None or (isinstance(v, float) and math.isnan(v)) for v in raw):
            warnings.warn(f"column {name!r} is missing in every row; dropped", stacklevel=2)
            continue
        if _is_numeric_column(name, records):
            col = np.array([np.nan if v is None else float(v) for v in raw])
            fill = float(np.median(col[~np.isnan(col)]))
            col[np.isnan(col)] = fill
            metas.append(ColumnMeta(name, "numeric", None, fill))
            mats.append(col)
        else:
            labels = category_labels(records, name)
            enc = LabelEncoder(labels)
            metas.append(ColumnMeta(name, "categorical", enc))
            mats.append(enc.transform(labels))
    rows = np.column_stack(mats) if mats else np.zeros((n, 0))
    return FeatureMatrix(rows, metas, target, row_ids)


@dataclass(frozen=True)
class SplitSpec:
    seed: int
    train_idx: np.ndarray
    test_idx: np.ndarray


def _num_rows(matrix) -> int:
    return matrix if isinstance(matrix, (int, np.integer)) else len(matrix)


def split(matrix, test_fraction: float = 0.2, seed: int = 0) -> SplitSpec:
    """Seeded shuffle, then hold out ``round(test_fraction * n)`` rows.

    ``matrix`` may be a FeatureMatrix or a plain row count. Index arrays are
    returned sorted.
    """
    if not 0.0 < test_fraction < 1.0:
        raise InputError(f"test_fraction must be in (0, 1), got {test_fraction}")
    n = _num_rows(matrix)
    if n < 5:
        raise TooFewRowsError(f"need at least 5 rows to split, got {n}")
    perm = rng(seed, "split").permutation(n)
    n_test = int(math.floor(test_fraction * n + 0.5))
    n_test = min(max(n_test, 1), n - 1)
    return SplitSpec(seed, np.sort(perm[n_test:]), np.sort(perm[:n_test]))


def kfold(matrix, k: int = 5, seed: int = 0) -> list[SplitSpec]:
    n = _num_rows(matrix)
    if k < 2:
        raise InputError(f"k must be at least 2, got {k}")
    if k > n:
        raise TooFewRowsError(f"k={k} folds need at least {k} rows, got {n}")
    perm = rng(seed, "kfold").permutation(n)
    folds = np.array_split(perm, k)
    out = []
    for i, test in enumerate(folds):
        train = np.concatenate([f for j, f in enumerate(folds) if j != i])
        out.append(SplitSpec(seed, np.sort(train), np.sort(test)))
    return out
