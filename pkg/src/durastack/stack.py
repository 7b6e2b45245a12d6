"""Convex stacking of the four learners, model locking, and prediction.

Stack weights minimize squared error of the combined out-of-fold
prediction over the probability simplex. With four learners the QP is
solved exactly: every nonempty support subset yields an equality-
constrained candidate, feasible candidates are compared by objective,
and degenerate ties resolve toward the uniform weights.

A locked model bundles, per imputation pipeline, the frozen imputation
models, the four learners refitted on that pipeline's completed
development data, and its stack weights. Prediction completes partial
records with the outcome-free companion chains, runs all pipelines, and
averages on the log scale.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from .errors import LearnerError, ValidationError
from .learners import KINDS, LearnerSpec, build_learner
from .mice import ImputationModelSet, impute_single
from .schema import EncodedDataset, EncodingMeta, encode_partial, validate_partial
from .seeds import child_seed

FORMAT_VERSION = 1
WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class StackWeights:
    """Convex combination weights over the four learners."""

    w: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        object.__setattr__(self, "w", w)
        if w.shape != (len(KINDS),):
            raise LearnerError("stack weights must have one entry per learner")
        if np.any(w < -WEIGHT_TOL) or abs(float(w.sum()) - 1.0) > WEIGHT_TOL:
            raise LearnerError("stack weights must lie on the simplex")


def _candidate(G: np.ndarray, b: np.ndarray,
               support: tuple[int, ...]) -> Optional[np.ndarray]:
    """Equality-constrained minimizer restricted to one support subset."""
    k = len(support)
    idx = list(support)
    K = np.zeros((k + 1, k + 1))
    K[:k, :k] = G[np.ix_(idx, idx)]
    K[:k, k] = 1.0
    K[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[:k] = b[idx]
    rhs[k] = 1.0
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    ws = sol[:k]
    if np.any(ws < -1e-9):
        return None
    w = np.zeros(len(b))
    w[idx] = np.clip(ws, 0.0, None)
    total = w.sum()
    if total <= 0:
        return None
    return w / total


def fit_stack_weights(oof: np.ndarray, y: np.ndarray) -> StackWeights:
    """Exact simplex-constrained least squares over the 15 supports."""
    P = np.ascontiguousarray(np.asarray(oof, dtype=np.float64))
    t = np.asarray(y, dtype=np.float64)
    if P.ndim != 2 or P.shape[1] != len(KINDS):
        raise LearnerError("out-of-fold matrix must have one column per learner")
    if P.shape[0] != len(t):
        raise LearnerError("out-of-fold matrix and outcome lengths differ")
    if P.shape[0] < len(KINDS):
        raise LearnerError("stacking needs at least as many rows as learners")
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(t))):
        raise LearnerError("stack inputs must be finite")

    G = P.T @ P
    b = P.T @ t
    yy = float(t @ t)
    candidates: list[tuple[float, np.ndarray]] = []
    cols = range(len(KINDS))
    for size in range(1, len(KINDS) + 1):
        for support in combinations(cols, size):
            w = _candidate(G, b, support)
            if w is None:
                continue
            obj = yy - 2.0 * float(b @ w) + float(w @ G @ w)
            candidates.append((obj, w))
    best = min(obj for obj, _ in candidates)
    tol = 1e-12 * max(1.0, abs(best))
    near = [w for obj, w in candidates if obj <= best + tol]
    uniform = np.full(len(KINDS), 1.0 / len(KINDS))
    w = min(near, key=lambda v: float(np.sum((v - uniform) ** 2)))
    return StackWeights(w)


@dataclass
class Pipeline:
    """One imputation's refitted learners and stack weights."""

    index: int
    specs: dict[str, LearnerSpec]
    learners: dict[str, object]
    weights: StackWeights

    def predict_log(self, X: np.ndarray) -> np.ndarray:
        preds = np.column_stack(
            [self.learners[kind].predict_rows(X) for kind in KINDS]
        )
        return preds @ self.weights.w


@dataclass
class LockedModel:
    """Frozen artifact: imputers, refitted learners, weights, provenance."""

    meta: EncodingMeta
    imputer: ImputationModelSet
    pipelines: list[Pipeline]
    provenance: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    @property
    def m(self) -> int:
        return len(self.pipelines)

    def model_version(self) -> str:
        digest = self.provenance.get("tune_digest", "unversioned")
        return f"{self.format_version}.{digest[:12]}"


def lock(dev: EncodedDataset, imputer: ImputationModelSet,
         completed: Sequence[EncodedDataset],
         specs_per_stream: Sequence[Mapping[str, LearnerSpec]],
         oof_per_stream: Sequence[np.ndarray], seed: int,
         provenance: Optional[dict] = None) -> LockedModel:
    """Refit every pipeline on its completed development data and bundle.

    Any fit failure propagates before a model object exists, so a locked
    model is all-or-nothing.
    """
    if len(completed) < 1:
        raise LearnerError("locking requires at least one imputation")
    if not (len(completed) == len(specs_per_stream) == len(oof_per_stream)):
        raise LearnerError("per-imputation inputs have mismatched lengths")
    pipelines = []
    for s, data in enumerate(completed):
        weights = fit_stack_weights(oof_per_stream[s], dev.y)
        learners = {}
        for kind in KINDS:
            spec = specs_per_stream[s][kind]
            learner = build_learner(spec, child_seed(seed, "final", kind, s))
            learner.fit(data)
            learners[kind] = learner
        pipelines.append(Pipeline(
            index=s,
            specs={kind: specs_per_stream[s][kind] for kind in KINDS},
            learners=learners,
            weights=weights,
        ))
    return LockedModel(
        meta=dev.meta,
        imputer=imputer,
        pipelines=pipelines,
        provenance=dict(provenance or {}),
    )


@dataclass(frozen=True)
class Prediction:
    """Per-record output of a locked model."""

    log_pred_per_pipeline: tuple[float, ...]
    log_pred_mean: float
    predicted_minutes: float
    pipeline_spread: float
    imputed_fields: tuple[str, ...]


@dataclass(frozen=True)
class RecordFailure:
    """Schema violation for one record in a batch."""

    index: int
    errors: tuple[dict, ...]


def predict_one(model: LockedModel, payload: Mapping[str, object],
                seed: int, request_token: object = 0) -> Prediction:
    """Validate, complete, and score a single partial record."""
    typed = validate_partial(payload)
    row, absent = encode_partial(typed, model.meta)
    logs = []
    for pipe in model.pipelines:
        stream = model.imputer.streams[pipe.index]
        completed_row = impute_single(model.imputer, stream, row, seed,
                                      request_token=request_token)
        logs.append(float(pipe.predict_log(completed_row[None, :])[0]))
    log_mean = float(np.mean(logs))
    minutes = math.exp(log_mean)
    if not all(math.isfinite(v) for v in logs) or not math.isfinite(minutes):
        raise LearnerError("prediction produced a non-finite value")
    return Prediction(
        log_pred_per_pipeline=tuple(logs),
        log_pred_mean=log_mean,
        predicted_minutes=minutes,
        pipeline_spread=float(max(logs) - min(logs)),
        imputed_fields=absent,
    )


def predict_locked(model: LockedModel,
                   payloads: Sequence[Mapping[str, object]],
                   seed: int) -> list[Union[Prediction, RecordFailure]]:
    """Batch prediction; per-record schema failures do not abort the batch."""
    results: list[Union[Prediction, RecordFailure]] = []
    for i, payload in enumerate(payloads):
        try:
            results.append(predict_one(model, payload, seed, request_token=i))
        except ValidationError as exc:
            errors = tuple(
                {"field": fe.field, "message": fe.reason}
                for fe in exc.errors
            )
            results.append(RecordFailure(index=i, errors=errors))
    return results
