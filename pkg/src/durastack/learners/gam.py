"""Penalized additive model: cubic B-spline smooths plus linear terms.

Each smoothed column gets a cubic B-spline basis (`knots` basis functions,
interior knots at training quantiles) constrained to sum to zero over the
training rows. The roughness penalty is the sum of squared second divided
differences of the spline coefficients taken at the Greville abscissae, so
its null space is exactly the linear functions: as the penalty grows every
smooth collapses onto a straight line and the fit approaches ordinary
least squares.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..errors import LearnerError, SingularSystemError
from ._common import check_completed, check_fingerprint, training_arrays


def bspline_knot_vector(x: np.ndarray, basis_dim: int) -> np.ndarray:
    """Clamped cubic knot vector with interior knots at quantiles."""
    if basis_dim < 4:
        raise LearnerError("spline basis needs at least 4 functions")
    lo, hi = float(np.min(x)), float(np.max(x))
    n_interior = basis_dim - 4
    if n_interior > 0:
        probs = np.arange(1, n_interior + 1) / (n_interior + 1)
        interior = np.quantile(x, probs)
    else:
        interior = np.empty(0)
    return np.concatenate([[lo] * 4, interior, [hi] * 4])


def bspline_basis(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    """Cubic B-spline design matrix by the Cox-de Boor recursion.

    Values are clamped to the boundary knots, so out-of-range inputs get
    constant extrapolation.
    """
    t = np.asarray(knots, dtype=np.float64)
    k = len(t) - 4
    x = np.clip(np.asarray(x, dtype=np.float64), t[0], t[-1])
    n = x.shape[0]
    # degree 0: right-closed last interval so x = max lands in a basis
    n0 = len(t) - 1
    B = np.zeros((n, n0))
    for i in range(n0):
        if t[i] == t[i + 1]:
            continue
        inside = (x >= t[i]) & (x < t[i + 1])
        if t[i + 1] == t[-1]:
            inside = (x >= t[i]) & (x <= t[i + 1])
        B[inside, i] = 1.0
    for d in range(1, 4):
        nb = n0 - d
        Bn = np.zeros((n, nb))
        for i in range(nb):
            left_den = t[i + d] - t[i]
            if left_den > 0:
                Bn[:, i] += (x - t[i]) / left_den * B[:, i]
            right_den = t[i + d + 1] - t[i + 1]
            if right_den > 0:
                Bn[:, i] += (t[i + d + 1] - x) / right_den * B[:, i + 1]
        B = Bn
    assert B.shape[1] == k
    return B


def greville_sites(knots: np.ndarray) -> np.ndarray:
    """Greville abscissae of the cubic basis: 3-knot averages."""
    t = np.asarray(knots, dtype=np.float64)
    k = len(t) - 4
    return np.array([(t[i + 1] + t[i + 2] + t[i + 3]) / 3.0 for i in range(k)])


def second_difference_penalty(sites: np.ndarray) -> np.ndarray:
    """(k−2)×k matrix of second divided differences over the sites.

    D @ c vanishes exactly when c is linear in the sites, which by the
    linear-precision property of B-splines means the spline itself is a
    straight line.
    """
    xi = np.asarray(sites, dtype=np.float64)
    k = len(xi)
    D = np.zeros((k - 2, k))
    for i in range(1, k - 1):
        h1 = xi[i] - xi[i - 1]
        h2 = xi[i + 1] - xi[i]
        if h1 <= 0 or h2 <= 0:
            raise LearnerError("spline sites must be strictly increasing")
        D[i - 1, i - 1] = 2.0 / (h1 * (h1 + h2))
        D[i - 1, i] = -2.0 / (h1 * h2)
        D[i - 1, i + 1] = 2.0 / (h2 * (h1 + h2))
    return D


class _SmoothTerm:
    """Fitted basis of one smoothed column."""

    def __init__(self, col: int, knots: np.ndarray, constraint: np.ndarray):
        self.col = col
        self.knots = knots
        # k×(k−1) orthonormal null-space basis of the sum-to-zero constraint
        self.constraint = constraint

    def design(self, x: np.ndarray) -> np.ndarray:
        return bspline_basis(x, self.knots) @ self.constraint

    def penalty(self) -> np.ndarray:
        D = second_difference_penalty(greville_sites(self.knots))
        return D @ self.constraint


class AdditiveSplineModel:
    kind = "gam"

    def __init__(self, smooth_penalty: float, knots: int = 10,
                 smooth_cols: Optional[Sequence[int]] = None):
        if knots < 4:
            raise LearnerError("knots (basis dimension) must be at least 4")
        if smooth_penalty < 0:
            raise LearnerError("smooth penalty must be non-negative")
        self.smooth_penalty = float(smooth_penalty)
        self.knots = int(knots)
        self.smooth_cols = None if smooth_cols is None else tuple(smooth_cols)
        self.fingerprint: Optional[str] = None
        self.terms_: list[_SmoothTerm] = []
        self.linear_cols_: Optional[tuple[int, ...]] = None
        self.coef_: Optional[np.ndarray] = None

    def fit(self, data) -> "AdditiveSplineModel":
        X, y, fp = training_arrays(data)
        if self.smooth_cols is None:
            cols = tuple(
                i for i, c in enumerate(data.meta.columns)
                if c.kind == "continuous"
            )
        else:
            cols = self.smooth_cols
        self._fit(X, y, cols)
        self.fingerprint = fp
        return self

    def _fit(self, X: np.ndarray, y: np.ndarray,
             smooth_cols: Sequence[int]) -> "AdditiveSplineModel":
        check_completed(X, y)
        n, p = X.shape
        smooth_set = set(smooth_cols)
        self.terms_ = []
        for col in smooth_cols:
            x = X[:, col]
            # degenerate columns (too few distinct values for the basis)
            # fall back to a plain linear term
            if len(np.unique(x)) <= self.knots:
                smooth_set.discard(col)
                continue
            knots = bspline_knot_vector(x, self.knots)
            if len(np.unique(knots)) != len(knots) - 6:
                smooth_set.discard(col)
                continue
            B = bspline_basis(x, knots)
            means = B.mean(axis=0)
            # orthonormal basis of {c : means·c = 0} via full QR
            Q = np.linalg.qr(means.reshape(-1, 1), mode="complete")[0]
            constraint = Q[:, 1:]
            self.terms_.append(_SmoothTerm(col, knots, constraint))

        # columns aliased with the intercept or with earlier columns get
        # coefficient zero rather than poisoning the solve; a cluster
        # cross-validation split can lose a factor level entirely, leaving
        # the surviving indicators collinear (their sum is constant), and
        # the fit must still be solvable for the held-out rows
        basis = [np.full(n, 1.0 / np.sqrt(n))]
        variable: list[int] = []
        for j in range(p):
            if j in smooth_set or np.ptp(X[:, j]) == 0.0:
                continue
            col = X[:, j].astype(np.float64)
            residual = col.copy()
            for q in basis:
                residual -= (q @ residual) * q
            norm = float(np.linalg.norm(residual))
            if norm > 1e-8 * float(np.linalg.norm(col)):
                basis.append(residual / norm)
                variable.append(j)
        self.linear_cols_ = tuple(variable)

        blocks = [np.ones((n, 1)), X[:, variable]]
        pen_blocks = []
        offset = 1 + len(variable)
        total = offset
        for term in self.terms_:
            BZ = term.design(X[:, term.col])
            blocks.append(BZ)
            pen_blocks.append((total, term.penalty()))
            total += BZ.shape[1]

        W = np.hstack(blocks)
        rows = [W]
        rhs = [y]
        root = np.sqrt(self.smooth_penalty)
        for start, D in pen_blocks:
            padded = np.zeros((D.shape[0], total))
            padded[:, start:start + D.shape[1]] = root * D
            rows.append(padded)
            rhs.append(np.zeros(D.shape[0]))
        A = np.vstack(rows)
        b = np.concatenate(rhs)
        theta, _, rank, _ = np.linalg.lstsq(A, b, rcond=None)
        if rank < total:
            raise SingularSystemError(
                "additive model system is singular; increase the smooth "
                "penalty or remove collinear columns"
            )
        self.coef_ = theta
        return self

    def predict(self, data) -> np.ndarray:
        check_fingerprint(self.fingerprint, data.meta.fingerprint())
        X = np.asarray(data.X, dtype=np.float64)
        check_completed(X)
        return self.predict_rows(X)

    def predict_rows(self, X: np.ndarray) -> np.ndarray:
        if self.coef_ is None:
            raise LearnerError("model not fitted")
        X = np.asarray(X, dtype=np.float64)
        n = X.shape[0]
        out = np.full(n, self.coef_[0])
        k = 1
        for j in self.linear_cols_:
            out += self.coef_[k] * X[:, j]
            k += 1
        for term in self.terms_:
            BZ = term.design(X[:, term.col])
            out += BZ @ self.coef_[k:k + BZ.shape[1]]
            k += BZ.shape[1]
        return out

    def training_rmse_parts(self):  # used by penalty-monotonicity tests
        return self.terms_, self.linear_cols_

    # --- serialization -----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        arrays = {
            "coef": self.coef_,
            "linear_cols": np.asarray(self.linear_cols_, dtype=np.float64),
        }
        for i, term in enumerate(self.terms_):
            arrays[f"term{i}_col"] = np.array([float(term.col)])
            arrays[f"term{i}_knots"] = term.knots
            arrays[f"term{i}_constraint"] = term.constraint.ravel()
        return arrays

    def state_scalars(self) -> dict:
        return {
            "smooth_penalty": self.smooth_penalty,
            "knots": self.knots,
            "n_terms": len(self.terms_),
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_state(cls, scalars: dict, arrays: dict) -> "AdditiveSplineModel":
        model = cls(smooth_penalty=scalars["smooth_penalty"],
                    knots=scalars["knots"])
        model.coef_ = np.asarray(arrays["coef"])
        model.linear_cols_ = tuple(int(v) for v in arrays["linear_cols"])
        model.terms_ = []
        for i in range(int(scalars["n_terms"])):
            knots = np.asarray(arrays[f"term{i}_knots"])
            k = len(knots) - 4
            constraint = np.asarray(arrays[f"term{i}_constraint"])
            constraint = constraint.reshape(k, k - 1)
            model.terms_.append(
                _SmoothTerm(int(arrays[f"term{i}_col"][0]), knots, constraint)
            )
        model.fingerprint = scalars["fingerprint"]
        return model
