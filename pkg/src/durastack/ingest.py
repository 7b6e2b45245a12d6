"""CSV ingest, eligibility filtering, and cohort descriptives."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CsvError, ValidationError
from .fsutil import atomic_write_text
from .schema import (
    CSV_COLUMNS,
    MAX_PLAUSIBLE_DURATION_MIN,
    POSITION_FIELDS,
    CaseRecord,
    record_to_row,
    validate_record,
)


@dataclass(frozen=True)
class RowError:
    """Validation failure of one data row (1-based, excluding the header)."""

    row: int
    errors: tuple


@dataclass(frozen=True)
class ExclusionStage:
    name: str
    dropped: int
    remaining: int


def parse_csv(path) -> tuple[list[CaseRecord], list[RowError]]:
    """Read a canonical cohort CSV.

    The header must match the canonical column order exactly. Invalid rows
    are collected, not fatal; callers decide whether any error aborts.
    """
    path = Path(path)
    try:
        handle = path.open(newline="", encoding="utf-8")
    except OSError as exc:
        raise CsvError(f"cannot read {path}: {exc}")
    records: list[CaseRecord] = []
    row_errors: list[RowError] = []
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvError(f"{path} is empty")
        if tuple(header) != CSV_COLUMNS:
            raise CsvError(
                f"{path} header does not match the canonical column order"
            )
        for i, cells in enumerate(reader, start=1):
            if len(cells) != len(CSV_COLUMNS):
                row_errors.append(
                    RowError(i, (f"expected {len(CSV_COLUMNS)} cells, "
                                 f"got {len(cells)}",))
                )
                continue
            raw = dict(zip(CSV_COLUMNS, cells))
            try:
                records.append(validate_record(raw))
            except ValidationError as exc:
                row_errors.append(RowError(i, tuple(exc.errors)))
    return records, row_errors


def write_csv(path, records: Sequence[CaseRecord]) -> None:
    """Write records in canonical column order (empty cell = missing)."""
    buf = io.StringIO(newline="")
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for record in records:
        writer.writerow(record_to_row(record))
    atomic_write_text(Path(path), buf.getvalue())


def select_cohort(
    records: Sequence[CaseRecord],
) -> tuple[list[CaseRecord], list[ExclusionStage]]:
    """Apply eligibility rules in fixed order, counting each exclusion.

    Stages: emergency cases out, weekend dates out, ASA grade 5 out
    (absent ASA is retained for imputation), then records without a
    plausible outcome (absent, non-positive, or above 24 hours) out.
    """
    stages: list[ExclusionStage] = []
    kept = list(records)
    stages.append(ExclusionStage("initial", 0, len(kept)))

    def apply(name: str, keep_fn) -> None:
        nonlocal kept
        before = len(kept)
        kept = [r for r in kept if keep_fn(r)]
        stages.append(ExclusionStage(name, before - len(kept), len(kept)))

    apply("emergency", lambda r: not r.emergency)
    apply("weekend", lambda r: r.surgery_date.weekday() < 5)
    apply("asa_5", lambda r: r.asa is None or r.asa <= 4)
    apply(
        "outcome",
        lambda r: r.actual_duration_min is not None
        and 0 < r.actual_duration_min <= MAX_PLAUSIBLE_DURATION_MIN,
    )
    return kept, stages


def _quantile(values: list[float], q: float) -> float:
    return float(np.quantile(np.asarray(values), q)) if values else float("nan")


def _binary_summary(records, name) -> dict:
    known = [getattr(r, name) for r in records if getattr(r, name) is not None]
    n_missing = len(records) - len(known)
    n_true = sum(1 for v in known if v)
    return {
        "n_known": len(known),
        "n_true": n_true,
        "pct_true": 100.0 * n_true / len(known) if known else float("nan"),
        "n_missing": n_missing,
    }


def _continuous_summary(records, name) -> dict:
    known = [float(getattr(r, name)) for r in records
             if getattr(r, name) is not None]
    return {
        "n_known": len(known),
        "median": _quantile(known, 0.5),
        "q1": _quantile(known, 0.25),
        "q3": _quantile(known, 0.75),
        "n_missing": len(records) - len(known),
    }


def describe_cohort(records: Sequence[CaseRecord]) -> dict:
    """Marginal descriptives: counts/percentages for categorical fields,
    median (IQR) for continuous ones, and per-field missingness."""
    n = len(records)
    out: dict = {"n": n}
    if n == 0:
        return out

    out["sites"] = {}
    for r in records:
        key = r.site_id
        out["sites"][key] = out["sites"].get(key, 0) + 1

    asa_known = [r.asa for r in records if r.asa is not None]
    asa_counts = {grade: asa_known.count(grade) for grade in (1, 2, 3, 4, 5)}
    out["asa"] = {
        "counts": asa_counts,
        "pct": {
            g: (100.0 * c / len(asa_known) if asa_known else float("nan"))
            for g, c in asa_counts.items()
        },
        "n_missing": n - len(asa_known),
    }

    out["sex_female"] = {
        "n_true": sum(1 for r in records if r.sex == "female"),
        "pct_true": 100.0 * sum(1 for r in records if r.sex == "female") / n,
    }
    for name in ("emergency", "admission", "general_anaesthesia",
                 "allergy", "infection", "comorbidity", *POSITION_FIELDS):
        out[name] = _binary_summary(records, name)
    for name in ("scheduled_duration_min", "age_years", "bmi",
                 "actual_duration_min"):
        out[name] = _continuous_summary(records, name)
    return out


def load_cohort(path) -> tuple[list[CaseRecord], list[ExclusionStage],
                               list[RowError]]:
    """Parse + select in one step (the ingest CLI path)."""
    records, row_errors = parse_csv(path)
    kept, stages = select_cohort(records)
    return kept, stages, row_errors
