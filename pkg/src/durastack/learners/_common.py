"""Shared checks for the learner fit/predict contract."""

from __future__ import annotations

import numpy as np

from ..errors import LearnerError


def check_completed(X: np.ndarray, y: np.ndarray = None) -> None:
    if not np.isfinite(X).all():
        raise LearnerError("design matrix has missing or non-finite cells")
    if y is not None and not np.isfinite(np.asarray(y)).all():
        raise LearnerError("outcome vector has non-finite entries")


def check_fingerprint(model_fp: str, data_fp: str) -> None:
    if model_fp is not None and model_fp != data_fp:
        raise LearnerError(
            "prediction data was encoded with a different schema than the "
            "model was trained on"
        )


def training_arrays(data) -> tuple[np.ndarray, np.ndarray, str]:
    """(X, y, meta fingerprint) from an EncodedDataset, validated."""
    X = np.ascontiguousarray(np.asarray(data.X, dtype=np.float64))
    y = np.asarray(data.y, dtype=np.float64)
    check_completed(X, y)
    if X.shape[0] != y.shape[0]:
        raise LearnerError("X and y row counts differ")
    return X, y, data.meta.fingerprint()
