"""Case data model, predictor encoding, outcome transform, and cluster keys.

The outcome is modelled on the natural-log scale. Categorical predictors are
reference-coded (first level dropped) into a single shared design matrix;
missing source fields become NaN cells to be filled by the imputation stage.
Site identity is deliberately never a predictor: it only drives cluster
construction.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import json
import math
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .errors import FieldError, SchemaMismatchError, ValidationError

SCHEMA_VERSION = 1

# Canonical CSV column order (ingest contract).
CSV_COLUMNS = (
    "case_id",
    "site",
    "surgery_date",
    "emergency",
    "admission",
    "scheduled_duration_min",
    "general_anaesthesia",
    "pos_supine",
    "pos_prone",
    "pos_sitting",
    "pos_lithotomy",
    "pos_lateral",
    "pos_other",
    "sex",
    "age_years",
    "bmi",
    "allergy",
    "infection",
    "comorbidity",
    "asa",
    "actual_duration_min",
)

POSITION_FIELDS = (
    "pos_supine",
    "pos_prone",
    "pos_sitting",
    "pos_lithotomy",
    "pos_lateral",
    "pos_other",
)

# Fields a prediction request may carry (any subset). Derived calendar
# features come from surgery_date; site is not accepted here by design.
PREDICT_FIELDS = (
    "surgery_date",
    "scheduled_duration_min",
    "general_anaesthesia",
    *POSITION_FIELDS,
    "sex",
    "age_years",
    "bmi",
    "allergy",
    "infection",
    "comorbidity",
    "asa",
)

MONTH_LEVELS = tuple(str(m) for m in range(1, 13))
WEEKDAY_LEVELS = ("monday", "tuesday", "wednesday", "thursday", "friday")
SEX_LEVELS = ("female", "male")
ASA_LEVELS = ("1", "2", "3", "4")

MAX_PLAUSIBLE_DURATION_MIN = 1440.0


class ClusterKey(NamedTuple):
    """Centre-year unit used for fold construction and reporting."""

    site_id: str
    year: int

    def label(self) -> str:
        return f"{self.site_id} at {self.year}"


@dataclass(frozen=True)
class CaseRecord:
    """One surgical case with predictors, outcome, and missingness.

    Optional fields are ``None`` when the source value was absent. The six
    position flags are individually optional; when all six are present at
    least one must be true.
    """

    case_id: str
    site_id: str
    surgery_date: dt.date
    emergency: bool
    sex: str
    allergy: bool
    infection: bool
    comorbidity: bool
    admission: Optional[bool] = None
    scheduled_duration_min: Optional[float] = None
    general_anaesthesia: Optional[bool] = None
    pos_supine: Optional[bool] = None
    pos_prone: Optional[bool] = None
    pos_sitting: Optional[bool] = None
    pos_lithotomy: Optional[bool] = None
    pos_lateral: Optional[bool] = None
    pos_other: Optional[bool] = None
    age_years: Optional[float] = None
    bmi: Optional[float] = None
    asa: Optional[int] = None
    actual_duration_min: Optional[float] = None

    def position_flags(self) -> tuple[Optional[bool], ...]:
        return tuple(getattr(self, f) for f in POSITION_FIELDS)


def cluster_of(record: CaseRecord) -> ClusterKey:
    """Centre-year cluster key of a record."""
    return ClusterKey(record.site_id, record.surgery_date.year)


# ---------------------------------------------------------------------------
# Field-level parsing/validation
# ---------------------------------------------------------------------------

def _parse_bool(value) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, (int, np.integer)) and value in (0, 1):
        return bool(value)
    if isinstance(value, str) and value in ("0", "1"):
        return value == "1"
    raise ValueError("expected 0 or 1")

def _parse_date(value) -> dt.date:
    if isinstance(value, dt.date) and not isinstance(value, dt.datetime):
        return value
    if isinstance(value, str):
        try:
            return dt.date.fromisoformat(value)
        except ValueError:
            raise ValueError("not an ISO-8601 date (YYYY-MM-DD)")
    raise ValueError("not an ISO-8601 date (YYYY-MM-DD)")

def _parse_real(value) -> float:
    if isinstance(value, bool):
        raise ValueError("expected a number")
    if isinstance(value, (int, float, np.integer, np.floating)):
        out = float(value)
    elif isinstance(value, str):
        try:
            out = float(value)
        except ValueError:
            raise ValueError("not a number")
    else:
        raise ValueError("expected a number")
    if not math.isfinite(out):
        raise ValueError("not finite")
    return out

def _parse_positive(value) -> float:
    out = _parse_real(value)
    if out <= 0:
        raise ValueError("non-positive")
    return out

def _parse_nonnegative(value) -> float:
    out = _parse_real(value)
    if out < 0:
        raise ValueError("negative")
    return out

def _parse_sex(value) -> str:
    if isinstance(value, str) and value.lower() in SEX_LEVELS:
        return value.lower()
    raise ValueError("unknown sex code (expected female/male)")

def _parse_asa(value) -> int:
    if isinstance(value, bool):
        raise ValueError("expected an integer 1..5")
    if isinstance(value, str):
        if not value.strip().lstrip("-").isdigit():
            raise ValueError("expected an integer 1..5")
        value = int(value)
    if isinstance(value, (int, np.integer)):
        if 1 <= int(value) <= 5:
            return int(value)
        raise ValueError("out of range (1..5)")
    raise ValueError("expected an integer 1..5")


# parser, required flag
_FIELD_PARSERS = {
    "case_id": (str, True),
    "site": (str, True),
    "surgery_date": (_parse_date, True),
    "emergency": (_parse_bool, True),
    "admission": (_parse_bool, False),
    "scheduled_duration_min": (_parse_positive, False),
    "general_anaesthesia": (_parse_bool, False),
    **{f: (_parse_bool, False) for f in POSITION_FIELDS},
    "sex": (_parse_sex, True),
    "age_years": (_parse_nonnegative, False),
    "bmi": (_parse_positive, False),
    "allergy": (_parse_bool, True),
    "infection": (_parse_bool, True),
    "comorbidity": (_parse_bool, True),
    "asa": (_parse_asa, False),
    "actual_duration_min": (_parse_positive, False),
}


def validate_record(raw: Mapping[str, object]) -> CaseRecord:
    """Validate one parsed row keyed by the canonical column names.

    Empty cells / ``None`` become absent optionals. Raises
    :class:`ValidationError` carrying one :class:`FieldError` per offending
    field; out-of-range values are never silently coerced.
    """
    errors: list[FieldError] = []
    parsed: dict[str, object] = {}
    for name, (parser, required) in _FIELD_PARSERS.items():
        value = raw.get(name)
        if value is None or (isinstance(value, str) and value == ""):
            if required:
                errors.append(FieldError(name, "required field missing"))
            else:
                parsed[name] = None
            continue
        try:
            parsed[name] = parser(value)
        except ValueError as exc:
            label = "outcome" if name == "actual_duration_min" else name
            errors.append(FieldError(label, str(exc)))

    unknown = set(raw) - set(_FIELD_PARSERS)
    for name in sorted(unknown):
        errors.append(FieldError(name, "unknown field"))

    if not errors:
        flags = [parsed[f] for f in POSITION_FIELDS]
        if all(v is not None for v in flags) and not any(flags):
            errors.append(
                FieldError("position", "all position flags present but none true")
            )
    if errors:
        raise ValidationError(errors)

    return CaseRecord(
        case_id=parsed["case_id"],
        site_id=parsed["site"],
        surgery_date=parsed["surgery_date"],
        emergency=parsed["emergency"],
        admission=parsed["admission"],
        scheduled_duration_min=parsed["scheduled_duration_min"],
        general_anaesthesia=parsed["general_anaesthesia"],
        pos_supine=parsed["pos_supine"],
        pos_prone=parsed["pos_prone"],
        pos_sitting=parsed["pos_sitting"],
        pos_lithotomy=parsed["pos_lithotomy"],
        pos_lateral=parsed["pos_lateral"],
        pos_other=parsed["pos_other"],
        sex=parsed["sex"],
        age_years=parsed["age_years"],
        bmi=parsed["bmi"],
        allergy=parsed["allergy"],
        infection=parsed["infection"],
        comorbidity=parsed["comorbidity"],
        asa=parsed["asa"],
        actual_duration_min=parsed["actual_duration_min"],
    )


def record_to_row(record: CaseRecord) -> dict[str, str]:
    """Render a record back to canonical CSV cells (empty cell = missing)."""

    def b(v: Optional[bool]) -> str:
        return "" if v is None else ("1" if v else "0")

    def r(v: Optional[float]) -> str:
        # repr round-trips the exact double, keeping CSV output lossless
        return "" if v is None else repr(float(v))

    row = {
        "case_id": record.case_id,
        "site": record.site_id,
        "surgery_date": record.surgery_date.isoformat(),
        "emergency": b(record.emergency),
        "admission": b(record.admission),
        "scheduled_duration_min": r(record.scheduled_duration_min),
        "general_anaesthesia": b(record.general_anaesthesia),
        "sex": record.sex,
        "age_years": r(record.age_years),
        "bmi": r(record.bmi),
        "allergy": b(record.allergy),
        "infection": b(record.infection),
        "comorbidity": b(record.comorbidity),
        "asa": "" if record.asa is None else str(record.asa),
        "actual_duration_min": r(record.actual_duration_min),
    }
    for f in POSITION_FIELDS:
        row[f] = b(getattr(record, f))
    return row


# ---------------------------------------------------------------------------
# Encoding
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FeatureColumn:
    """One column of the design matrix.

    kind is one of ``indicator`` (reference-coded categorical level),
    ``binary`` (0/1 flag), ``continuous``.
    """

    name: str
    source: str
    kind: str
    level: Optional[str] = None


@dataclass(frozen=True)
class FieldGroup:
    """Columns of X belonging to one imputation field.

    kind: ``continuous`` | ``binary`` | ``categorical``. Categorical groups
    list their levels with the reference level first; the all-zero indicator
    pattern encodes the reference.
    """

    name: str
    kind: str
    cols: tuple[int, ...]
    levels: tuple[str, ...] = ()


@dataclass(frozen=True)
class EncodingMeta:
    """Ordered feature descriptors shared by every model in a run."""

    year_levels: tuple[int, ...]
    columns: tuple[FeatureColumn, ...]
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def for_years(cls, years: Iterable[int]) -> "EncodingMeta":
        year_levels = tuple(sorted(set(int(y) for y in years)))
        if not year_levels:
            raise SchemaMismatchError("cannot build encoding meta without years")
        cols: list[FeatureColumn] = []
        for y in year_levels[1:]:
            cols.append(FeatureColumn(f"year_{y}", "year", "indicator", str(y)))
        for m in MONTH_LEVELS[1:]:
            cols.append(FeatureColumn(f"month_{m}", "month", "indicator", m))
        for w in WEEKDAY_LEVELS[1:]:
            cols.append(FeatureColumn(f"weekday_{w}", "weekday", "indicator", w))
        cols.append(FeatureColumn("sex_male", "sex", "binary"))
        for a in ASA_LEVELS[1:]:
            cols.append(FeatureColumn(f"asa_{a}", "asa", "indicator", a))
        cols.append(
            FeatureColumn("scheduled_duration_min", "scheduled_duration_min", "continuous")
        )
        cols.append(
            FeatureColumn("general_anaesthesia", "general_anaesthesia", "binary")
        )
        for f in POSITION_FIELDS:
            cols.append(FeatureColumn(f, f, "binary"))
        cols.append(FeatureColumn("age_years", "age_years", "continuous"))
        cols.append(FeatureColumn("bmi", "bmi", "continuous"))
        for f in ("allergy", "infection", "comorbidity"):
            cols.append(FeatureColumn(f, f, "binary"))
        return cls(year_levels=year_levels, columns=tuple(cols))

    @property
    def p(self) -> int:
        return len(self.columns)

    def column_names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.columns)

    def column_index(self) -> dict[str, int]:
        return {c.name: i for i, c in enumerate(self.columns)}

    def groups(self) -> tuple[FieldGroup, ...]:
        """Imputation field groups in canonical order."""
        idx = self.column_index()
        out: list[FieldGroup] = []
        out.append(
            FieldGroup(
                "year",
                "categorical",
                tuple(idx[f"year_{y}"] for y in self.year_levels[1:]),
                tuple(str(y) for y in self.year_levels),
            )
        )
        out.append(
            FieldGroup(
                "month",
                "categorical",
                tuple(idx[f"month_{m}"] for m in MONTH_LEVELS[1:]),
                MONTH_LEVELS,
            )
        )
        out.append(
            FieldGroup(
                "weekday",
                "categorical",
                tuple(idx[f"weekday_{w}"] for w in WEEKDAY_LEVELS[1:]),
                WEEKDAY_LEVELS,
            )
        )
        out.append(FieldGroup("sex", "binary", (idx["sex_male"],)))
        out.append(
            FieldGroup(
                "asa",
                "categorical",
                tuple(idx[f"asa_{a}"] for a in ASA_LEVELS[1:]),
                ASA_LEVELS,
            )
        )
        out.append(
            FieldGroup(
                "scheduled_duration_min", "continuous", (idx["scheduled_duration_min"],)
            )
        )
        out.append(
            FieldGroup("general_anaesthesia", "binary", (idx["general_anaesthesia"],))
        )
        for f in POSITION_FIELDS:
            out.append(FieldGroup(f, "binary", (idx[f],)))
        out.append(FieldGroup("age_years", "continuous", (idx["age_years"],)))
        out.append(FieldGroup("bmi", "continuous", (idx["bmi"],)))
        for f in ("allergy", "infection", "comorbidity"):
            out.append(FieldGroup(f, "binary", (idx[f],)))
        return tuple(out)

    def to_json(self) -> dict:
        return {
            "schema_version": self.schema_version,
            "year_levels": list(self.year_levels),
            "columns": [
                {"name": c.name, "source": c.source, "kind": c.kind, "level": c.level}
                for c in self.columns
            ],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "EncodingMeta":
        if obj.get("schema_version") != SCHEMA_VERSION:
            raise SchemaMismatchError(
                f"encoding meta schema version {obj.get('schema_version')} "
                f"does not match code version {SCHEMA_VERSION}"
            )
        meta = cls.for_years(obj["year_levels"])
        stored = [
            (c["name"], c["source"], c["kind"], c["level"]) for c in obj["columns"]
        ]
        built = [
            (c.name, c.source, c.kind, c.level) for c in meta.columns
        ]
        if stored != built:
            raise SchemaMismatchError("stored encoding columns do not match schema")
        return meta

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()


@dataclass
class EncodedDataset:
    """Numeric design matrix + log-outcome + cluster labels + missingness.

    ``X`` holds NaN exactly where ``missing_mask`` is true; completed
    datasets produced by imputation have NaN-free ``X`` but keep the mask as
    a record of which cells were filled.
    """

    case_ids: tuple[str, ...]
    X: np.ndarray
    y: np.ndarray
    clusters: tuple[ClusterKey, ...]
    missing_mask: np.ndarray
    meta: EncodingMeta

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def subset(self, indices: Sequence[int]) -> "EncodedDataset":
        idx = np.asarray(indices, dtype=int)
        return EncodedDataset(
            case_ids=tuple(self.case_ids[i] for i in idx),
            X=self.X[idx].copy(),
            y=self.y[idx].copy(),
            clusters=tuple(self.clusters[i] for i in idx),
            missing_mask=self.missing_mask[idx].copy(),
            meta=self.meta,
        )

    def with_X(self, X: np.ndarray) -> "EncodedDataset":
        if X.shape != self.X.shape:
            raise SchemaMismatchError("replacement X has wrong shape")
        return replace(self, X=X)

    def distinct_clusters(self) -> tuple[ClusterKey, ...]:
        return tuple(sorted(set(self.clusters)))


def _encode_row_known(record_fields: Mapping[str, object], meta: EncodingMeta,
                      x: np.ndarray) -> None:
    """Fill one row of X from typed field values; absent keys stay NaN.

    ``record_fields`` uses group-level keys: year/month/weekday (strings),
    sex, asa (level strings), plus the boolean/continuous fields.
    """
    idx = meta.column_index()
    for group in meta.groups():
        if group.name not in record_fields:
            continue
        value = record_fields[group.name]
        if group.kind == "categorical":
            for c, level in zip(group.cols, group.levels[1:]):
                x[c] = 0.0
            level = str(value)
            if level != group.levels[0] and level in group.levels:
                x[idx[f"{_indicator_prefix(group.name)}{level}"]] = 1.0
            # levels outside the stored domain (e.g. an unseen year) keep
            # the all-zero reference pattern
        elif group.kind == "binary":
            x[group.cols[0]] = 1.0 if value else 0.0
        else:
            x[group.cols[0]] = float(value)


def _indicator_prefix(group_name: str) -> str:
    return {"year": "year_", "month": "month_", "weekday": "weekday_",
            "asa": "asa_"}[group_name]


def _record_group_values(record: CaseRecord) -> dict[str, object]:
    """Known group-level values of a full record (absent fields omitted)."""
    date = record.surgery_date
    out: dict[str, object] = {
        "year": str(date.year),
        "month": str(date.month),
        "weekday": WEEKDAY_LEVELS[date.weekday()] if date.weekday() < 5 else None,
        "sex": record.sex == "male",
        "allergy": record.allergy,
        "infection": record.infection,
        "comorbidity": record.comorbidity,
    }
    if out["weekday"] is None:
        raise ValidationError(
            [FieldError("surgery_date", "weekend date outside the weekday cohort")]
        )
    if record.asa is not None:
        out["asa"] = str(record.asa)
    for name in ("scheduled_duration_min", "age_years", "bmi"):
        value = getattr(record, name)
        if value is not None:
            out[name] = value
    if record.general_anaesthesia is not None:
        out["general_anaesthesia"] = record.general_anaesthesia
    for name in POSITION_FIELDS:
        value = getattr(record, name)
        if value is not None:
            out[name] = value
    return out


def encode(cohort: Sequence[CaseRecord],
           meta: Optional[EncodingMeta] = None) -> EncodedDataset:
    """Encode a cohort into the shared design matrix.

    Every record must carry the outcome. When ``meta`` is given (serve/test
    path) its column order and reference levels are reused exactly; levels
    absent from the stored domain (an unseen year) map to the all-zero
    reference pattern.
    """
    if not cohort:
        raise SchemaMismatchError("cannot encode an empty cohort")
    missing_outcome = [r.case_id for r in cohort if r.actual_duration_min is None]
    if missing_outcome:
        raise ValidationError(
            [FieldError("outcome", f"missing for case {cid}")
             for cid in missing_outcome[:5]]
        )
    if meta is None:
        meta = EncodingMeta.for_years(r.surgery_date.year for r in cohort)
    elif meta.schema_version != SCHEMA_VERSION:
        raise SchemaMismatchError("encoding meta from an incompatible schema")

    n, p = len(cohort), meta.p
    X = np.full((n, p), np.nan)
    y = np.empty(n)
    clusters = []
    for i, record in enumerate(cohort):
        _encode_row_known(_record_group_values(record), meta, X[i])
        y[i] = math.log(record.actual_duration_min)
        clusters.append(cluster_of(record))
    mask = np.isnan(X)
    return EncodedDataset(
        case_ids=tuple(r.case_id for r in cohort),
        X=X,
        y=y,
        clusters=tuple(clusters),
        missing_mask=mask,
        meta=meta,
    )


# ---------------------------------------------------------------------------
# Partial records (serve / predict path)
# ---------------------------------------------------------------------------

def validate_partial(raw: Mapping[str, object]) -> dict[str, object]:
    """Validate an any-subset predictor map (no outcome).

    Unknown keys are rejected; ``None`` values count as absent. Returns the
    typed subset keyed by request field names.
    """
    errors: list[FieldError] = []
    unknown = set(raw) - set(PREDICT_FIELDS)
    for name in sorted(unknown):
        errors.append(FieldError(name, "unknown field"))
    typed: dict[str, object] = {}
    for name in PREDICT_FIELDS:
        if name not in raw or raw[name] is None:
            continue
        value = raw[name]
        if isinstance(value, str) and value == "":
            continue
        parser, _ = _FIELD_PARSERS[name]
        try:
            typed[name] = parser(value)
        except ValueError as exc:
            errors.append(FieldError(name, str(exc)))
    if "surgery_date" in typed and typed["surgery_date"].weekday() >= 5:
        errors.append(
            FieldError("surgery_date", "weekend date outside the weekday cohort")
        )
    if errors:
        raise ValidationError(errors)
    return typed


def encode_partial(typed: Mapping[str, object],
                   meta: EncodingMeta) -> tuple[np.ndarray, tuple[str, ...]]:
    """Encode a validated partial record into one NaN-padded design row.

    Returns the row and the request-level field names that were absent
    (and therefore require imputation).
    """
    groups: dict[str, object] = {}
    if "surgery_date" in typed:
        date = typed["surgery_date"]
        groups["year"] = str(date.year)
        groups["month"] = str(date.month)
        groups["weekday"] = WEEKDAY_LEVELS[date.weekday()]
    if "sex" in typed:
        groups["sex"] = typed["sex"] == "male"
    if "asa" in typed:
        groups["asa"] = str(typed["asa"])
    for name in ("scheduled_duration_min", "age_years", "bmi",
                 "general_anaesthesia", *POSITION_FIELDS,
                 "allergy", "infection", "comorbidity"):
        if name in typed:
            groups[name] = typed[name]
    x = np.full(meta.p, np.nan)
    _encode_row_known(groups, meta, x)
    absent = tuple(f for f in PREDICT_FIELDS if f not in typed)
    return x, absent


def decode_row(x: np.ndarray, meta: EncodingMeta) -> dict[str, object]:
    """Map one completed design row back to group-level field values."""
    out: dict[str, object] = {}
    for group in meta.groups():
        if group.kind == "categorical":
            level = group.levels[0]
            for c, lv in zip(group.cols, group.levels[1:]):
                if x[c] >= 0.5:
                    level = lv
                    break
            out[group.name] = level
        elif group.kind == "binary":
            out[group.name] = bool(x[group.cols[0]] >= 0.5)
        else:
            out[group.name] = float(x[group.cols[0]])
    return out
