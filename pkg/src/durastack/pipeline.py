"""End-to-end orchestration: develop, validate, and batch prediction.

Develop runs cohort selection, fold-local imputation, per-imputation
tuning over the (imputation x grid point x fold) work pool, stacking,
full-data locking, and the cross-validation report. All outputs are
written atomically and are bit-reproducible for a fixed config seed;
worker count never changes results, only wall time.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Union

import numpy as np

from . import artifact
from .config import RunConfig
from .errors import CsvError, DurastackError, StageFailure
from .fsutil import atomic_write_bytes, atomic_write_text
from .iecv import (FoldImputations, GridPoint, TuneResult, _fit_and_score,
                   choose_best, make_folds)
from .ingest import parse_csv, select_cohort
from .learners import KINDS, LearnerSpec
from .metrics import (adjusted_r2, calibration, cluster_report, emit_report,
                      error_metrics, rubin_pool)
from .mice import apply_imputer, fit_imputer
from .schema import CSV_COLUMNS, PREDICT_FIELDS, EncodedDataset, encode
from .seeds import child_rng, child_seed
from .stack import LockedModel, Prediction, RecordFailure, lock, predict_locked


@contextmanager
def _stage(name: str):
    """Tag any toolkit error with the pipeline stage it happened in."""
    try:
        yield
    except StageFailure:
        raise
    except DurastackError as exc:
        raise StageFailure(name, exc) from exc


def load_clean_cohort(path: str):
    """Parse a CSV and apply cohort selection; row errors are fatal here."""
    records, row_errors = parse_csv(path)
    if row_errors:
        first = row_errors[0]
        raise CsvError(
            f"{len(row_errors)} invalid rows; first at row {first.row}: "
            f"{'; '.join(str(e) for e in first.errors)}"
        )
    kept, stages = select_cohort(records)
    if not kept:
        raise CsvError("no rows remain after cohort selection")
    return kept, stages


def _evaluate_grids(data: EncodedDataset, imps: FoldImputations,
                    grids: dict[str, list[LearnerSpec]], m: int, seed: int,
                    workers: int):
    """Fit every (stream, kind, grid point, fold) job, pooled or not.

    Returns per-stream tune results and the per-stream out-of-fold
    matrices for the selected specs, identical to running tune and
    oof_predictions sequentially because every job's seed depends only
    on (fold, kind, stream).
    """
    jobs = []
    for s in range(m):
        for kind in KINDS:
            for gi, spec in enumerate(grids[kind]):
                for fold in imps.plan:
                    jobs.append((s, kind, gi, fold))

    def run(job):
        s, kind, gi, fold = job
        return _fit_and_score(grids[kind][gi], fold, imps, s, seed)

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(run, jobs))
    else:
        outputs = [run(job) for job in jobs]
    scored = {
        (s, kind, gi, fold.index): out
        for (s, kind, gi, fold), out in zip(jobs, outputs)
    }

    n = len(data.y)
    tune_results: list[dict[str, TuneResult]] = []
    oof_per_stream: list[np.ndarray] = []
    for s in range(m):
        per_kind = {}
        oof = np.full((n, len(KINDS)), np.nan)
        for k, kind in enumerate(KINDS):
            points = []
            for gi, spec in enumerate(grids[kind]):
                per_fold = []
                total_sq = 0.0
                total_n = 0
                for fold in imps.plan:
                    fn, mse, _ = scored[(s, kind, gi, fold.index)]
                    per_fold.append((fold.cluster.label(), fn, mse))
                    total_sq += fn * mse
                    total_n += fn
                points.append(GridPoint(spec, total_sq / total_n,
                                        tuple(per_fold)))
            best = choose_best(points)
            per_kind[kind] = TuneResult(kind, s, tuple(points), best)
            for fold in imps.plan:
                _, _, pred = scored[(s, kind, best, fold.index)]
                oof[fold.holdout_idx, k] = pred
        tune_results.append(per_kind)
        oof_per_stream.append(oof)
    return tune_results, oof_per_stream


@dataclass
class DevelopResult:
    model_path: str
    audit_path: str
    report_paths: list[str]
    locked: LockedModel
    oof_per_stream: list[np.ndarray]
    dataset: EncodedDataset


def develop(train_csv: str, config: RunConfig, out_dir: str) -> DevelopResult:
    os.makedirs(out_dir, exist_ok=True)
    with _stage("ingest"):
        kept, stages = load_clean_cohort(train_csv)
        data = encode(kept)
    with _stage("fold construction"):
        plan = make_folds(data)
    workers = config.worker_count()
    seed = config.seed

    with _stage("fold imputation"):
        imps = FoldImputations(data, plan, config.m, config.iterations, seed,
                               workers=workers)
    grids = config.grids(data.meta.p)
    with _stage("tuning"):
        tune_results, oof_per_stream = _evaluate_grids(
            data, imps, grids, config.m, seed, workers,
        )
    specs_per_stream = [
        {kind: tune_results[s][kind].selected for kind in KINDS}
        for s in range(config.m)
    ]
    audit = {
        "streams": [
            {kind: tune_results[s][kind].to_json() for kind in KINDS}
            for s in range(config.m)
        ],
    }
    audit_text = json.dumps(audit, sort_keys=True, indent=2) + "\n"
    tune_digest = hashlib.sha256(audit_text.encode("utf-8")).hexdigest()

    with _stage("full-data imputation"):
        model_set, completed = fit_imputer(
            data, config.m, config.iterations,
            child_seed(seed, "full-imputation"),
        )
    provenance = {
        "seed": seed,
        "m": config.m,
        "iterations": config.iterations,
        "grids": config.grid_summary(),
        "tune_digest": tune_digest,
        "exclusions": [
            {"stage": st.name, "dropped": st.dropped, "remaining": st.remaining}
            for st in stages
        ],
    }
    with _stage("locking"):
        locked = lock(data, model_set, completed, specs_per_stream,
                      oof_per_stream, seed=seed, provenance=provenance)

        model_path = os.path.join(out_dir, "model.dsm")
        buf = io.BytesIO()
        artifact.save(locked, buf)
        atomic_write_bytes(model_path, buf.getvalue())

        audit_path = os.path.join(out_dir, "tune_audit.json")
        atomic_write_text(audit_path, audit_text)

    with _stage("reporting"):
        preds = np.stack([
            oof_per_stream[s] @ locked.pipelines[s].weights.w
            for s in range(config.m)
        ])
        report_seed = child_seed(seed, "report")
        report = cluster_report(data.y, preds, data.clusters, "iecv",
                                report_seed, B=config.bootstrap_b)
        report_paths = emit_report(
            report, os.path.join(out_dir, "iecv_report"), plots=True,
            pairs=(data.y, preds.mean(axis=0)), seed=report_seed,
        )
    return DevelopResult(
        model_path=model_path,
        audit_path=audit_path,
        report_paths=report_paths,
        locked=locked,
        oof_per_stream=oof_per_stream,
        dataset=data,
    )


@dataclass
class ValidateResult:
    summary: dict
    report_paths: list[str]
    summary_path: str


def validate(model: Union[str, LockedModel], test_csv: str,
             config: RunConfig, out_dir: str) -> ValidateResult:
    os.makedirs(out_dir, exist_ok=True)
    locked = artifact.load(model) if isinstance(model, (str, os.PathLike)) else model
    kept, _ = load_clean_cohort(test_csv)
    test = encode(kept, meta=locked.meta)
    seed = config.seed
    vseed = child_seed(seed, "validate")

    m = locked.m
    n = len(test.y)
    preds = np.empty((m, n))
    for s in range(m):
        stream = locked.imputer.streams[s]
        completed = apply_imputer(locked.imputer, stream, test,
                                  use_outcome=True, seed=vseed)
        preds[s] = locked.pipelines[s].predict_log(completed.X)

    int_e, int_v, slope_e, slope_v = [], [], [], []
    rmse_e, rmse_v, mae_e, mae_v, r2s = [], [], [], [], []
    B = config.bootstrap_b
    for s in range(m):
        cal = calibration(test.y, preds[s])
        int_e.append(cal["intercept"].value)
        int_v.append(cal["intercept"].variance)
        slope_e.append(cal["slope"].value)
        slope_v.append(cal["slope"].variance)
        errs = error_metrics(test.y, preds[s])
        rmse_e.append(errs["rmse"])
        mae_e.append(errs["mae"])
        resid = test.y - preds[s]
        rmse_reps = np.empty(B)
        mae_reps = np.empty(B)
        for b in range(B):
            idx = child_rng(vseed, "boot", s, b).integers(0, n, size=n)
            r = resid[idx]
            rmse_reps[b] = np.sqrt(np.mean(r ** 2))
            mae_reps[b] = np.mean(np.abs(r))
        rmse_v.append(float(rmse_reps.var(ddof=1)))
        mae_v.append(float(mae_reps.var(ddof=1)))
        r2s.append(adjusted_r2(test.y, preds[s], p=1))

    summary = {
        "context": "temporal_test",
        "n": n,
        "intercept": rubin_pool(int_e, int_v).to_json(),
        "slope": rubin_pool(slope_e, slope_v).to_json(),
        "rmse": rubin_pool(rmse_e, rmse_v).to_json(),
        "mae": rubin_pool(mae_e, mae_v).to_json(),
        "adjusted_r2": {
            "value": float(np.mean(r2s)),
            "per_imputation": [float(v) for v in r2s],
        },
    }

    report_seed = child_seed(seed, "report-temporal")
    report = cluster_report(test.y, preds, test.clusters, "temporal_test",
                            report_seed, B=B)
    report_paths = emit_report(
        report, os.path.join(out_dir, "temporal_report"), plots=True,
        pairs=(test.y, preds.mean(axis=0)), seed=report_seed,
    )
    summary_path = os.path.join(out_dir, "validation_summary.json")
    atomic_write_text(summary_path,
                      json.dumps(summary, sort_keys=True, indent=2) + "\n")
    return ValidateResult(summary=summary, report_paths=report_paths,
                          summary_path=summary_path)


_PREDICT_CSV_ALLOWED = set(CSV_COLUMNS) | set(PREDICT_FIELDS)


def predict_batch(model: Union[str, LockedModel], in_csv: str, out_csv: str,
                  seed: int) -> list[Union[Prediction, RecordFailure]]:
    """Score partial records from a CSV; empty cells mean absent."""
    locked = artifact.load(model) if isinstance(model, (str, os.PathLike)) else model
    with open(in_csv, "r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        unknown = [h for h in header if h not in _PREDICT_CSV_ALLOWED]
        if unknown:
            raise CsvError(f"unknown prediction columns: {', '.join(unknown)}")
        rows = list(reader)
    payloads = []
    ids = []
    for i, row in enumerate(rows):
        ids.append(row.get("case_id") or f"row{i + 1}")
        payloads.append({
            key: row[key] for key in PREDICT_FIELDS
            if key in row and row[key] not in (None, "")
        })
    results = predict_locked(locked, payloads, seed)
    lines = ["case_id,predicted_minutes,log_prediction_mean,"
             "pipeline_spread,imputed_fields,error"]
    for case_id, res in zip(ids, results):
        if isinstance(res, Prediction):
            lines.append(",".join([
                case_id,
                repr(res.predicted_minutes),
                repr(res.log_pred_mean),
                repr(res.pipeline_spread),
                ";".join(res.imputed_fields),
                "",
            ]))
        else:
            msg = "; ".join(f"{e['field']}: {e['message']}" for e in res.errors)
            lines.append(",".join([case_id, "", "", "", "", f'"{msg}"']))
    atomic_write_text(out_csv, "\n".join(lines) + "\n")
    return results
