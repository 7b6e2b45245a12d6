"""Chained-equation imputation with frozen application and a serve path.

Per field group, a conditional model is fitted on currently-completed data:
linear regression with predictive mean matching for continuous fields,
ridge-stabilized logistic regression for binary fields, softmax regression
for categorical groups. The imputation design holds every other predictor
group, centre-year fixed-effect indicators, and (primary models only) the
log outcome as an auxiliary term; companion models drop the outcome so
records can be completed at serve time. The outcome itself is never
imputed.

Freezing happens after the final sweep: primary and companion models plus
donor pools are fitted for every field group on the final completed
training data, so holdout records can be completed without any refitting
regardless of which fields they are missing.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import ImputationError, SchemaMismatchError
from .schema import EncodedDataset, EncodingMeta, FieldGroup
from .seeds import child_rng

PMM_DONORS = 5
RIDGE = 1e-4
GRAD_TOL = 1e-6


# ---------------------------------------------------------------------------
# Conditional model fitting
# ---------------------------------------------------------------------------

def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def fit_linear(Z: np.ndarray, t: np.ndarray) -> np.ndarray:
    A = np.column_stack([np.ones(len(Z)), Z])
    coef, _, _, _ = np.linalg.lstsq(A, t, rcond=None)
    return coef


def fit_logistic(Z: np.ndarray, t: np.ndarray, ridge: float = RIDGE,
                 max_iter: int = 60) -> np.ndarray:
    """Newton-IRLS for penalized logistic regression (intercept free)."""
    A = np.column_stack([np.ones(len(Z)), Z])
    n, d = A.shape
    pen = np.full(d, ridge)
    pen[0] = 0.0
    beta = np.zeros(d)
    for _ in range(max_iter):
        p = _sigmoid(A @ beta)
        grad = A.T @ (t - p) - pen * beta
        if np.max(np.abs(grad)) <= GRAD_TOL:
            break
        w = p * (1.0 - p)
        H = (A * w[:, None]).T @ A
        H[np.diag_indices_from(H)] += pen
        try:
            step = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        beta = beta + step
    return beta


def _softmax_probs(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Class probabilities with class 0 as the zero-logit reference."""
    logits = np.column_stack([np.zeros(len(A)), A @ B.T])
    logits -= logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_objective(flat: np.ndarray, A, Y, pen_mask, ridge):
    L1 = Y.shape[1] - 1
    B = flat.reshape(L1, A.shape[1])
    P = _softmax_probs(A, B)
    nll = -float(np.sum(Y * np.log(np.maximum(P, 1e-300))))
    nll += 0.5 * ridge * float(np.sum((B * pen_mask) ** 2))
    G = (P[:, 1:] - Y[:, 1:]).T @ A + ridge * (B * pen_mask)
    return nll, G.ravel()


def fit_softmax(Z: np.ndarray, t_idx: np.ndarray, n_levels: int,
                ridge: float = RIDGE, max_newton: int = 40) -> np.ndarray:
    """Penalized softmax regression driven to sup-norm gradient ≤ 1e-6.

    Quasi-Newton warm start, then exact Newton steps; the ridge keeps the
    penalized objective strictly convex even under separation.
    """
    A = np.column_stack([np.ones(len(Z)), Z])
    n, d = A.shape
    L1 = n_levels - 1
    Y = np.zeros((n, n_levels))
    Y[np.arange(n), t_idx] = 1.0
    pen_mask = np.ones((L1, d))
    pen_mask[:, 0] = 0.0

    B = np.zeros((L1, d))
    if L1 * d > 400 or n_levels > 4:
        res = minimize(
            _softmax_objective, B.ravel(), args=(A, Y, pen_mask, ridge),
            jac=True, method="L-BFGS-B",
            options={"maxiter": 400, "gtol": 1e-4},
        )
        B = res.x.reshape(L1, d)

    dim = L1 * d
    for _ in range(max_newton):
        nll, g = _softmax_objective(B.ravel(), A, Y, pen_mask, ridge)
        if np.max(np.abs(g)) <= GRAD_TOL:
            break
        P = _softmax_probs(A, B)
        H = np.empty((dim, dim))
        for a in range(L1):
            pa = P[:, a + 1]
            for b in range(a, L1):
                w = pa * ((1.0 if a == b else 0.0) - P[:, b + 1])
                block = (A * w[:, None]).T @ A
                H[a * d:(a + 1) * d, b * d:(b + 1) * d] = block
                if b != a:
                    H[b * d:(b + 1) * d, a * d:(a + 1) * d] = block
        H[np.diag_indices_from(H)] += ridge * pen_mask.ravel()
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(H, g, rcond=None)[0]
        scale = 1.0
        for _ in range(30):
            cand = B.ravel() - scale * step
            new_nll, _ = _softmax_objective(cand, A, Y, pen_mask, ridge)
            if new_nll <= nll:
                B = cand.reshape(L1, d)
                break
            scale *= 0.5
        else:
            break
    return B


# ---------------------------------------------------------------------------
# Model containers
# ---------------------------------------------------------------------------

@dataclass
class FieldModel:
    """Frozen conditional model for one field group.

    coef shapes: continuous/binary (d,); categorical (levels−1, d) with the
    first level as zero-logit reference. Continuous models carry their PMM
    donor pool sorted by fitted mean.
    """

    kind: str
    coef: np.ndarray
    donor_means: Optional[np.ndarray] = None
    donor_values: Optional[np.ndarray] = None


@dataclass
class StreamModels:
    """All frozen models of one imputation stream (primary + companion)."""

    index: int
    primary: dict[str, FieldModel] = field(default_factory=dict)
    companion: dict[str, FieldModel] = field(default_factory=dict)


@dataclass
class Marginals:
    """Observed training marginals used to initialize chains."""

    continuous: dict[str, np.ndarray] = field(default_factory=dict)
    binary: dict[str, float] = field(default_factory=dict)
    categorical: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class ImputationModelSet:
    """Everything needed to complete new records without refitting."""

    meta: EncodingMeta
    cluster_levels: tuple[str, ...]
    visit_order: tuple[str, ...]
    iterations: int
    marginals: Marginals
    streams: list[StreamModels]
    seed: int

    @property
    def m(self) -> int:
        return len(self.streams)


# ---------------------------------------------------------------------------
# Design assembly
# ---------------------------------------------------------------------------

def _group_missing(dataset: EncodedDataset, group: FieldGroup) -> np.ndarray:
    cols = list(group.cols)
    block = dataset.missing_mask[:, cols]
    first = block[:, 0]
    if not np.array_equal(block, np.repeat(first[:, None], len(cols), axis=1)):
        raise ImputationError(
            f"field {group.name} has a partially missing indicator block"
        )
    return first


def _cluster_matrix(labels: Sequence[str],
                    levels: Sequence[str]) -> np.ndarray:
    """Drop-first indicators; labels outside levels get the all-zero row."""
    index = {lab: i for i, lab in enumerate(levels)}
    C = np.zeros((len(labels), max(len(levels) - 1, 0)))
    for r, lab in enumerate(labels):
        i = index.get(lab)
        if i is not None and i > 0:
            C[r, i - 1] = 1.0
    return C


def _design(X: np.ndarray, group: FieldGroup, all_cols: int,
            C: np.ndarray, y: Optional[np.ndarray]) -> np.ndarray:
    keep = [c for c in range(all_cols) if c not in group.cols]
    parts = [X[:, keep], C]
    if y is not None:
        parts.append(y[:, None])
    return np.hstack(parts)


def _draw_categorical(rng: np.random.Generator, probs: np.ndarray) -> int:
    return int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))


def _pmm_pick(rng: np.random.Generator, donor_means: np.ndarray,
              donor_values: np.ndarray, target: float,
              k: int = PMM_DONORS) -> float:
    """Uniform draw among the k donors nearest in fitted mean."""
    n = len(donor_means)
    if n <= k:
        return float(donor_values[rng.integers(n)])
    pos = np.searchsorted(donor_means, target)
    lo = max(0, pos - k)
    hi = min(n, pos + k)
    window = np.arange(lo, hi)
    dist = np.abs(donor_means[window] - target)
    nearest = window[np.argsort(dist, kind="stable")[:k]]
    return float(donor_values[nearest[rng.integers(k)]])


def _apply_group_values(X: np.ndarray, rows: np.ndarray, group: FieldGroup,
                        level_idx: np.ndarray) -> None:
    """Write categorical level indices as indicator patterns."""
    X[np.ix_(rows, group.cols)] = 0.0
    for j, lv in enumerate(range(1, len(group.levels))):
        sel = rows[level_idx == lv]
        X[sel, group.cols[j]] = 1.0


def _group_level_index(X: np.ndarray, group: FieldGroup) -> np.ndarray:
    """Observed indicator patterns back to level indices (0 = reference)."""
    idx = np.zeros(X.shape[0], dtype=np.int64)
    for j, col in enumerate(group.cols):
        idx[X[:, col] >= 0.5] = j + 1
    return idx


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------

def _fit_field_model(kind: str, Z: np.ndarray, obs: np.ndarray,
                     target_cont: Optional[np.ndarray],
                     target_idx: Optional[np.ndarray],
                     n_levels: int) -> FieldModel:
    Zo = Z[obs]
    if kind == "continuous":
        coef = fit_linear(Zo, target_cont[obs])
        means = np.ones(len(Zo)) * coef[0] + Zo @ coef[1:]
        order = np.argsort(means, kind="stable")
        return FieldModel(kind, coef, donor_means=means[order],
                          donor_values=target_cont[obs][order])
    if kind == "binary":
        coef = fit_logistic(Zo, target_cont[obs])
        return FieldModel(kind, coef)
    coef = fit_softmax(Zo, target_idx[obs], n_levels)
    return FieldModel(kind, coef)


def _model_predict(model: FieldModel, Z: np.ndarray) -> np.ndarray:
    A = np.column_stack([np.ones(len(Z)), Z])
    if model.kind == "continuous":
        return A @ model.coef
    if model.kind == "binary":
        return _sigmoid(A @ model.coef)
    return _softmax_probs(A, model.coef)


def _redraw(model: FieldModel, group: FieldGroup, X: np.ndarray,
            rows: np.ndarray, Z_rows: np.ndarray,
            rng: np.random.Generator) -> None:
    """Fill the missing rows of one group from its fitted model."""
    pred = _model_predict(model, Z_rows)
    if group.kind == "continuous":
        col = group.cols[0]
        for r, mu in zip(rows, pred):
            X[r, col] = _pmm_pick(rng, model.donor_means,
                                  model.donor_values, float(mu))
    elif group.kind == "binary":
        draws = rng.random(len(rows))
        X[rows, group.cols[0]] = (draws < pred).astype(np.float64)
    else:
        total = pred.sum(axis=1)
        if np.any(np.abs(total - 1.0) > 1e-12):
            raise ImputationError(
                f"class probabilities for {group.name} do not sum to one"
            )
        idx = np.array([_draw_categorical(rng, p) for p in pred],
                       dtype=np.int64)
        _apply_group_values(X, rows, group, idx)


def _initialize(X: np.ndarray, groups: Sequence[FieldGroup],
                missing: Mapping[str, np.ndarray], marginals: Marginals,
                rng: np.random.Generator) -> None:
    for group in groups:
        rows = np.flatnonzero(missing[group.name])
        if len(rows) == 0:
            continue
        if group.kind == "continuous":
            pool = marginals.continuous[group.name]
            X[rows, group.cols[0]] = pool[rng.integers(len(pool), size=len(rows))]
        elif group.kind == "binary":
            rate = marginals.binary[group.name]
            X[rows, group.cols[0]] = (rng.random(len(rows)) < rate).astype(float)
        else:
            probs = marginals.categorical[group.name]
            idx = np.array([_draw_categorical(rng, probs) for _ in rows],
                           dtype=np.int64)
            _apply_group_values(X, rows, group, idx)


def _collect_marginals(dataset: EncodedDataset,
                       groups: Sequence[FieldGroup],
                       missing: Mapping[str, np.ndarray]) -> Marginals:
    marg = Marginals()
    for group in groups:
        obs = ~missing[group.name]
        if not obs.any():
            raise ImputationError(
                f"field {group.name} is missing in every training row"
            )
        if group.kind == "continuous":
            marg.continuous[group.name] = dataset.X[obs, group.cols[0]].copy()
        elif group.kind == "binary":
            marg.binary[group.name] = float(dataset.X[obs, group.cols[0]].mean())
        else:
            idx = _group_level_index(dataset.X[obs], group)
            counts = np.bincount(idx, minlength=len(group.levels)).astype(float)
            marg.categorical[group.name] = counts / counts.sum()
    return marg


def fit_imputer(train: EncodedDataset, m: int, iterations: int, seed: int,
                freeze_groups: Optional[frozenset[str]] = None,
                freeze_companion: bool = True,
                ) -> tuple[ImputationModelSet, list[EncodedDataset]]:
    """Fit m chained-equation streams; returns frozen models + completions.

    freeze_groups restricts which field groups get frozen models (None
    freezes all of them); freeze_companion=False skips the outcome-free
    companions. Both are cost controls for fold-local imputers whose only
    later use is completing a known holdout with the outcome available.
    """
    if m < 1:
        raise ImputationError("m must be at least 1")
    if iterations < 1:
        raise ImputationError("iterations must be at least 1")
    groups = train.meta.groups()
    missing = {g.name: _group_missing(train, g) for g in groups}
    marginals = _collect_marginals(train, groups, missing)

    counts = {g.name: int(missing[g.name].sum()) for g in groups}
    with_missing = [g for g in groups if counts[g.name] > 0]
    order = {g.name: i for i, g in enumerate(groups)}
    visit = sorted(with_missing, key=lambda g: (counts[g.name], order[g.name]))
    full_visit = visit + [g for g in groups if counts[g.name] == 0]

    cluster_levels = tuple(sorted({c.label() for c in train.clusters}))
    labels = [c.label() for c in train.clusters]
    C = _cluster_matrix(labels, cluster_levels)
    p = train.meta.p

    model_set = ImputationModelSet(
        meta=train.meta,
        cluster_levels=cluster_levels,
        visit_order=tuple(g.name for g in full_visit),
        iterations=iterations,
        marginals=marginals,
        streams=[],
        seed=seed,
    )
    completed_sets: list[EncodedDataset] = []

    for s in range(m):
        rng = child_rng(seed, "stream", s)
        X = train.X.copy()
        _initialize(X, visit, missing, marginals, rng)
        for _ in range(iterations):
            for group in visit:
                rows = np.flatnonzero(missing[group.name])
                obs = ~missing[group.name]
                Z = _design(X, group, p, C, train.y)
                model = _fit_sweep_model(train, group, Z, obs, X)
                _redraw(model, group, X, rows, Z[rows], rng)
        to_freeze = [g for g in full_visit
                     if freeze_groups is None or g.name in freeze_groups]
        stream = _freeze_stream(s, train, X, C, to_freeze, p,
                                freeze_companion)
        model_set.streams.append(stream)
        completed_sets.append(train.with_X(X))
    return model_set, completed_sets


def _fit_sweep_model(train: EncodedDataset, group: FieldGroup,
                     Z: np.ndarray, obs: np.ndarray,
                     X: np.ndarray) -> FieldModel:
    if group.kind == "continuous":
        return _fit_field_model("continuous", Z, obs,
                                train.X[:, group.cols[0]], None, 0)
    if group.kind == "binary":
        return _fit_field_model("binary", Z, obs, X[:, group.cols[0]],
                                None, 0)
    idx = _group_level_index(X, group)
    return _fit_field_model("categorical", Z, obs, None, idx,
                            len(group.levels))


def _freeze_stream(index: int, train: EncodedDataset, X: np.ndarray,
                   C: np.ndarray, groups: Sequence[FieldGroup], p: int,
                   freeze_companion: bool) -> StreamModels:
    """Fit primary and companion models per group on completed data."""
    stream = StreamModels(index=index)
    obs_all = np.ones(X.shape[0], dtype=bool)
    variants = [(True, stream.primary)]
    if freeze_companion:
        variants.append((False, stream.companion))
    for group in groups:
        for with_outcome, store in variants:
            Z = _design(X, group, p, C, train.y if with_outcome else None)
            if group.kind == "continuous":
                model = _fit_field_model("continuous", Z, obs_all,
                                         X[:, group.cols[0]], None, 0)
            elif group.kind == "binary":
                model = _fit_field_model("binary", Z, obs_all,
                                         X[:, group.cols[0]], None, 0)
            else:
                idx = _group_level_index(X, group)
                model = _fit_field_model("categorical", Z, obs_all, None,
                                         idx, len(group.levels))
            store[group.name] = model
    return stream


# ---------------------------------------------------------------------------
# Frozen application
# ---------------------------------------------------------------------------

def apply_imputer(model_set: ImputationModelSet, stream: StreamModels,
                  holdout: EncodedDataset, use_outcome: bool,
                  seed: int) -> EncodedDataset:
    """Complete a holdout dataset with one stream's frozen models."""
    if holdout.meta.fingerprint() != model_set.meta.fingerprint():
        raise SchemaMismatchError(
            "holdout encoding does not match the imputer's training schema"
        )
    groups = {g.name: g for g in holdout.meta.groups()}
    missing = {name: _group_missing(holdout, g)
               for name, g in groups.items()}
    rng = child_rng(seed, "apply", stream.index)
    X = holdout.X.copy()
    labels = [c.label() for c in holdout.clusters]
    C = _cluster_matrix(labels, model_set.cluster_levels)
    p = holdout.meta.p
    models = stream.primary if use_outcome else stream.companion
    y = holdout.y if use_outcome else None

    to_fill = [groups[name] for name in model_set.visit_order
               if missing[name].any()]
    _initialize(X, to_fill, missing, model_set.marginals, rng)
    for _ in range(model_set.iterations):
        for group in to_fill:
            rows = np.flatnonzero(missing[group.name])
            Z = _design(X, group, p, C, y)
            _redraw(models[group.name], group, X, rows, Z[rows], rng)
    return holdout.with_X(X)


def impute_single(model_set: ImputationModelSet, stream: StreamModels,
                  x_row: np.ndarray, seed: int,
                  request_token: object = 0) -> np.ndarray:
    """Complete one encoded predictor row with companion models.

    The row carries NaN for every absent group; there is no outcome and no
    cluster, so cluster indicators take the all-zero reference pattern.
    """
    meta = model_set.meta
    groups = meta.groups()
    X = x_row.reshape(1, -1).copy()
    nan_groups = {g.name: np.array([bool(np.isnan(X[0, g.cols[0]]))])
                  for g in groups}
    rng = child_rng(seed, "single", stream.index, request_token)
    C = np.zeros((1, max(len(model_set.cluster_levels) - 1, 0)))
    to_fill = [g for g in groups if nan_groups[g.name][0]]
    ordered = [g for name in model_set.visit_order
               for g in to_fill if g.name == name]
    _initialize(X, ordered, nan_groups, model_set.marginals, rng)
    for _ in range(model_set.iterations):
        for group in ordered:
            Z = _design(X, group, meta.p, C, None)
            _redraw(stream.companion[group.name], group, X,
                    np.array([0]), Z, rng)
    return X[0]
