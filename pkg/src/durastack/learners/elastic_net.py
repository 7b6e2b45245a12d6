"""Elastic-net linear regression by cyclic coordinate descent.

Objective on standardized columns:
    (1/2n)·Σ(y − β0 − Xβ)² + λ·[α‖β‖₁ + (1−α)/2·‖β‖₂²]
with an unpenalized intercept. Coefficients are reported on the original
feature scale after fitting.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import LearnerError
from ._common import check_completed, check_fingerprint, training_arrays


def soft_threshold(z: float, gamma: float) -> float:
    """S(z, γ) = sign(z)·max(|z| − γ, 0)."""
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


class ElasticNet:
    kind = "elastic_net"

    def __init__(self, lambda_: float, alpha: float,
                 tol: float = 1e-7, max_sweeps: int = 100_000):
        if lambda_ < 0:
            raise LearnerError("lambda must be non-negative")
        if not 0.0 <= alpha <= 1.0:
            raise LearnerError("alpha must lie in [0, 1]")
        self.lambda_ = float(lambda_)
        self.alpha = float(alpha)
        self.tol = float(tol)
        self.max_sweeps = int(max_sweeps)
        self.coef_: Optional[np.ndarray] = None
        self.intercept_: Optional[float] = None
        self.fingerprint: Optional[str] = None
        # standardized-scale state kept for optimality checks
        self.coef_std_: Optional[np.ndarray] = None
        self.center_: Optional[np.ndarray] = None
        self.scale_: Optional[np.ndarray] = None

    def fit(self, data) -> "ElasticNet":
        X, y, fp = training_arrays(data)
        self._fit(X, y)
        self.fingerprint = fp
        return self

    def _fit(self, X: np.ndarray, y: np.ndarray) -> "ElasticNet":
        check_completed(X, y)
        n, p = X.shape
        if n < 2:
            raise LearnerError("need at least two rows")
        mu = X.mean(axis=0)
        sd = X.std(axis=0)
        active = sd > 0.0
        scale = np.where(active, sd, 1.0)
        Xs = (X - mu) / scale
        ybar = float(y.mean())
        r = y - ybar

        lam = self.lambda_
        l1 = lam * self.alpha
        denom = 1.0 + lam * (1.0 - self.alpha)
        beta = np.zeros(p)
        cols = np.flatnonzero(active)
        for _ in range(self.max_sweeps):
            max_delta = 0.0
            for j in cols:
                xj = Xs[:, j]
                rho = beta[j] + float(xj @ r) / n
                bj = soft_threshold(rho, l1) / denom
                delta = bj - beta[j]
                if delta != 0.0:
                    r -= delta * xj
                    beta[j] = bj
                    max_delta = max(max_delta, abs(delta))
            if max_delta <= self.tol:
                break

        self.coef_std_ = beta
        self.center_ = mu
        self.scale_ = scale
        self.coef_ = np.where(active, beta / scale, 0.0)
        self.intercept_ = ybar - float(self.coef_ @ mu)
        return self

    def predict(self, data) -> np.ndarray:
        check_fingerprint(self.fingerprint, data.meta.fingerprint())
        X = np.asarray(data.X, dtype=np.float64)
        check_completed(X)
        return self.predict_rows(X)

    def predict_rows(self, X: np.ndarray) -> np.ndarray:
        if self.coef_ is None:
            raise LearnerError("model not fitted")
        return self.intercept_ + np.asarray(X, dtype=np.float64) @ self.coef_

    # --- serialization -----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {
            "coef": self.coef_,
            "intercept": np.array([self.intercept_]),
            "coef_std": self.coef_std_,
            "center": self.center_,
            "scale": self.scale_,
        }

    def state_scalars(self) -> dict:
        return {"lambda_": self.lambda_, "alpha": self.alpha,
                "fingerprint": self.fingerprint}

    @classmethod
    def from_state(cls, scalars: dict, arrays: dict) -> "ElasticNet":
        model = cls(lambda_=scalars["lambda_"], alpha=scalars["alpha"])
        model.coef_ = np.asarray(arrays["coef"])
        model.intercept_ = float(arrays["intercept"][0])
        model.coef_std_ = np.asarray(arrays["coef_std"])
        model.center_ = np.asarray(arrays["center"])
        model.scale_ = np.asarray(arrays["scale"])
        model.fingerprint = scalars["fingerprint"]
        return model
