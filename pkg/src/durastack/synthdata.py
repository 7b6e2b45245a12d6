"""Synthetic multicentre cohort generator with known linear ground truth.

Marginal defaults follow the descriptive summary the toolkit itself emits:
anaesthesia ~96%, supine ~76%, ASA grades ~17.5/49/32/1.6, scheduled
duration median 150 (75, 300), age 69 (52, 78), bmi 21.95 (18.83, 24.75).
Log-duration is linear in the encoded features plus a per-cluster shift and
Normal(0, sd) noise, so recovery, calibration, and imputation behaviour all
have closed-form oracles. Missingness is applied as a separate masking pass
with MCAR or site-dependent mechanisms and joint block groups.
"""

from __future__ import annotations

import dataclasses
import datetime as dt
import math
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError
from .schema import (
    POSITION_FIELDS,
    CaseRecord,
    EncodingMeta,
    encode,
    record_to_row,
)
from .seeds import child_rng

# only optional predictor fields may be masked; identity, date, emergency
# flag, sex, and the outcome are never eligible
MASKABLE_FIELDS = (
    "admission",
    "scheduled_duration_min",
    "general_anaesthesia",
    *POSITION_FIELDS,
    "age_years",
    "bmi",
    "asa",
)

_NORMAL_IQR = 1.3489795003921634  # Φ⁻¹(0.75) − Φ⁻¹(0.25)


@dataclass(frozen=True)
class MissingnessRule:
    """One masking rule: fields masked jointly at a rate by a mechanism."""

    fields: tuple[str, ...]
    mechanism: str  # "mcar" | "mar_site"
    rate: float

    def __post_init__(self):
        unknown = [f for f in self.fields if f not in MASKABLE_FIELDS]
        if unknown:
            raise ConfigError(f"fields not eligible for masking: {unknown}")
        if not 0.0 <= self.rate <= 1.0:
            raise ConfigError("missingness rate must lie in [0, 1]")
        if self.mechanism not in ("mcar", "mar_site"):
            raise ConfigError(f"unknown mechanism {self.mechanism!r}")
        if not self.fields:
            raise ConfigError("missingness rule needs at least one field")


@dataclass(frozen=True)
class GeneratorConfig:
    """Cohort layout, marginal targets, truth model, and missingness."""

    # (site, year, rows) cells; development years plus one later test year
    cells: tuple[tuple[str, int, int], ...] = (
        ("Site 1", 2021, 500),
        ("Site 1", 2022, 700),
        ("Site 1", 2023, 700),
        ("Site 1", 2024, 300),
        ("Site 2", 2022, 900),
        ("Site 2", 2023, 900),
        ("Site 2", 2024, 500),
    )
    seed: int = 0

    ga_rate: float = 0.962
    position_rates: tuple[float, ...] = (0.755, 0.046, 0.010, 0.131, 0.110,
                                         0.009)
    second_position_rate: float = 0.061
    asa_probs: tuple[float, ...] = (0.175, 0.490, 0.319, 0.016)
    female_rate: float = 0.493
    allergy_rate: float = 0.219
    infection_rate: float = 0.065
    comorbidity_rate: float = 0.202
    admission_rate: float = 0.503

    sched_median: float = 150.0
    sched_q1: float = 75.0
    sched_q3: float = 300.0
    sched_clip: tuple[float, float] = (15.0, 600.0)
    age_median: float = 69.0
    age_q1: float = 52.0
    age_q3: float = 78.0
    age_clip: tuple[float, float] = (18.0, 102.0)
    bmi_median: float = 21.95
    bmi_q1: float = 18.83
    bmi_q3: float = 24.75
    bmi_clip: tuple[float, float] = (12.0, 55.0)

    intercept: float = 1.8
    coefficients: tuple[tuple[str, float], ...] = (
        ("scheduled_duration_min", 0.003),
        ("age_years", 0.02),
        ("bmi", 0.03),
        ("general_anaesthesia", 0.3),
        ("sex_male", 0.05),
        ("asa_2", 0.05),
        ("asa_3", 0.1),
        ("asa_4", 0.2),
        ("pos_prone", 0.1),
        ("pos_sitting", 0.1),
        ("pos_lithotomy", -0.05),
        ("pos_lateral", 0.05),
        ("allergy", 0.02),
        ("infection", 0.08),
        ("comorbidity", 0.06),
    )
    cluster_shifts: tuple[tuple[str, float], ...] = (
        ("Site 1 at 2021", 0.04),
        ("Site 1 at 2022", 0.02),
        ("Site 1 at 2023", 0.03),
        ("Site 2 at 2022", -0.02),
        ("Site 2 at 2023", -0.03),
    )
    residual_sd: float = 0.5

    missingness: tuple[MissingnessRule, ...] = (
        MissingnessRule(("general_anaesthesia", *POSITION_FIELDS, "asa"),
                        "mar_site", 0.64),
        MissingnessRule(("scheduled_duration_min",), "mcar", 0.32),
        MissingnessRule(("bmi",), "mcar", 0.024),
    )
    mar_site_factors: tuple[tuple[str, float], ...] = (
        ("Site 1", 1.25),
        ("Site 2", 0.875),
    )

    # rates feeding the cohort-selection stages (all default to zero so a
    # generated cohort passes selection at full size)
    emergency_rate: float = 0.0
    weekend_rate: float = 0.0
    asa5_rate: float = 0.0
    missing_outcome_rate: float = 0.0
    extreme_outcome_rate: float = 0.0

    def __post_init__(self):
        if self.residual_sd < 0:
            raise ConfigError("residual sd must be non-negative")
        if len(self.position_rates) != len(POSITION_FIELDS):
            raise ConfigError("need one rate per position flag")
        if len(self.asa_probs) != 4:
            raise ConfigError("asa_probs covers grades 1..4")

    def years(self) -> tuple[int, ...]:
        return tuple(sorted({year for _, year, _ in self.cells}))

    def shift_of(self, site: str, year: int) -> float:
        return dict(self.cluster_shifts).get(f"{site} at {year}", 0.0)


def _lognormal_params(median: float, q1: float, q3: float) -> tuple[float, float]:
    mu = math.log(median)
    sigma = (math.log(q3) - math.log(q1)) / _NORMAL_IQR
    return mu, sigma


def _weekday_dates(year: int) -> list[dt.date]:
    day = dt.date(year, 1, 1)
    out = []
    while day.year == year:
        if day.weekday() < 5:
            out.append(day)
        day += dt.timedelta(days=1)
    return out


def _weekend_dates(year: int) -> list[dt.date]:
    day = dt.date(year, 1, 1)
    out = []
    while day.year == year:
        if day.weekday() >= 5:
            out.append(day)
        day += dt.timedelta(days=1)
    return out


def generate(config: GeneratorConfig) -> tuple[list[CaseRecord], dict]:
    """Draw a complete cohort (no missing cells) plus its truth sidecar."""
    meta = EncodingMeta.for_years(config.years())
    names = meta.column_names()
    coef_map = dict(config.coefficients)
    unknown = set(coef_map) - set(names)
    if unknown:
        raise ConfigError(f"truth coefficients name unknown columns: "
                          f"{sorted(unknown)}")
    beta = np.array([coef_map.get(name, 0.0) for name in names])

    sched_mu, sched_sigma = _lognormal_params(
        config.sched_median, config.sched_q1, config.sched_q3)
    bmi_mu, bmi_sigma = _lognormal_params(
        config.bmi_median, config.bmi_q1, config.bmi_q3)
    age_sigma = (config.age_q3 - config.age_q1) / _NORMAL_IQR

    records: list[CaseRecord] = []
    offsets: list[float] = []  # per record: cluster shift + noise
    pos_p = np.asarray(config.position_rates)
    pos_p = pos_p / pos_p.sum()
    asa_p = np.asarray(config.asa_probs)
    asa_p = asa_p / asa_p.sum()

    for site, year, n_cell in config.cells:
        rng = child_rng(config.seed, "cell", site, year)
        weekdays = _weekday_dates(year)
        weekends = _weekend_dates(year)
        shift = config.shift_of(site, year)
        for i in range(n_cell):
            case_id = f"{site.replace(' ', '')}-{year}-{i:06d}"
            if config.weekend_rate > 0 and rng.random() < config.weekend_rate:
                date = weekends[rng.integers(len(weekends))]
            else:
                date = weekdays[rng.integers(len(weekdays))]
            emergency = bool(rng.random() < config.emergency_rate)
            sex = "female" if rng.random() < config.female_rate else "male"
            ga = bool(rng.random() < config.ga_rate)
            primary = int(rng.choice(len(POSITION_FIELDS), p=pos_p))
            flags = [False] * len(POSITION_FIELDS)
            flags[primary] = True
            if rng.random() < config.second_position_rate:
                others = [k for k in range(len(POSITION_FIELDS)) if k != primary]
                weights = pos_p[others] / pos_p[others].sum()
                flags[int(rng.choice(others, p=weights))] = True
            if config.asa5_rate > 0 and rng.random() < config.asa5_rate:
                asa = 5
            else:
                asa = int(rng.choice(4, p=asa_p)) + 1
            sched = float(np.clip(
                math.exp(rng.normal(sched_mu, sched_sigma)), *config.sched_clip))
            age = float(np.clip(
                rng.normal(config.age_median, age_sigma), *config.age_clip))
            bmi = float(np.clip(
                math.exp(rng.normal(bmi_mu, bmi_sigma)), *config.bmi_clip))
            noise = rng.normal(0.0, config.residual_sd) if config.residual_sd else 0.0
            records.append(CaseRecord(
                case_id=case_id,
                site_id=site,
                surgery_date=date,
                emergency=emergency,
                admission=bool(rng.random() < config.admission_rate),
                scheduled_duration_min=sched,
                general_anaesthesia=ga,
                pos_supine=flags[0], pos_prone=flags[1], pos_sitting=flags[2],
                pos_lithotomy=flags[3], pos_lateral=flags[4],
                pos_other=flags[5],
                sex=sex,
                age_years=age,
                bmi=bmi,
                allergy=bool(rng.random() < config.allergy_rate),
                infection=bool(rng.random() < config.infection_rate),
                comorbidity=bool(rng.random() < config.comorbidity_rate),
                asa=asa,
                actual_duration_min=1.0,  # placeholder until truth applied
            ))
            offsets.append(shift + noise)

    # one vectorized truth pass; weekend feeder rows never survive cohort
    # selection, so they get an arbitrary in-range outcome
    weekday_idx = [i for i, r in enumerate(records)
                   if r.surgery_date.weekday() < 5]
    log_y = np.full(len(records), config.intercept) + np.asarray(offsets)
    if weekday_idx:
        subset = encode([records[i] for i in weekday_idx], meta)
        log_y[weekday_idx] += subset.X @ beta
    records = [
        dataclasses.replace(r, actual_duration_min=math.exp(log_y[i]))
        for i, r in enumerate(records)
    ]

    rng_tail = child_rng(config.seed, "tail")
    if config.missing_outcome_rate > 0 or config.extreme_outcome_rate > 0:
        out = []
        for r in records:
            u = rng_tail.random()
            if u < config.missing_outcome_rate:
                out.append(dataclasses.replace(r, actual_duration_min=None))
            elif u < config.missing_outcome_rate + config.extreme_outcome_rate:
                out.append(dataclasses.replace(r, actual_duration_min=2000.0))
            else:
                out.append(r)
        records = out

    truth = {
        "intercept": config.intercept,
        "coefficients": {name: coef_map.get(name, 0.0) for name in names},
        "cluster_shifts": dict(config.cluster_shifts),
        "residual_sd": config.residual_sd,
        "seed": config.seed,
        "columns": list(names),
    }
    return records, truth


def mask(records: Sequence[CaseRecord], config: GeneratorConfig,
         seed: Optional[int] = None) -> tuple[list[CaseRecord], dict]:
    """Apply the configured missingness; sidecar holds every masked cell."""
    if seed is None:
        seed = config.seed
    factors = dict(config.mar_site_factors)
    masked_cells: dict[str, dict[str, str]] = {}
    out: list[CaseRecord] = []
    for record in records:
        removed: dict[str, str] = {}
        updates: dict[str, None] = {}
        for k, rule in enumerate(config.missingness):
            rate = rule.rate
            if rule.mechanism == "mar_site":
                rate = min(1.0, rate * factors.get(record.site_id, 1.0))
            if rate <= 0.0:
                continue
            rng = child_rng(seed, "mask", record.case_id, k)
            if rng.random() >= rate:
                continue
            row = record_to_row(record)
            for name in rule.fields:
                if getattr(record, name) is None:
                    continue
                removed[name] = row[name]
                updates[name] = None
        if updates:
            out.append(dataclasses.replace(record, **updates))
            masked_cells[record.case_id] = removed
        else:
            out.append(record)
    sidecar = {"seed": seed, "masked": masked_cells}
    return out, sidecar


def unmask(records: Sequence[CaseRecord], sidecar: Mapping) -> list[CaseRecord]:
    """Restore masked cells from the sidecar (exact reconstruction)."""
    from .schema import validate_record

    masked = sidecar["masked"]
    out = []
    for record in records:
        cells = masked.get(record.case_id)
        if not cells:
            out.append(record)
            continue
        row = record_to_row(record)
        row.update(cells)
        out.append(validate_record(row))
    return out
