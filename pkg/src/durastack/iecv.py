"""Leave-one-cluster-out evaluation over centre-year folds.

Each distinct (site, year) cluster becomes the validation set of exactly
one fold. Imputation is fold-local: chains are fitted on the fold's
training rows only and applied frozen to its validation rows, so no
validation information reaches any fitted model. Fold seeds derive from
the cluster key, making every fold's results independent of the order in
which folds are evaluated.

Hyper-parameters are tuned independently within each imputation stream:
for every grid point the learner is fitted on each fold's completed
training rows and scored on the fold's completed validation rows, then
fold errors are pooled as the row-weighted mean (equal to the overall
out-of-fold MSE). Ties go to the earliest grid point in canonical order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, FoldError, LearnerError
from .learners import KINDS, LearnerSpec, build_learner
from .mice import ImputationModelSet, apply_imputer, fit_imputer
from .schema import ClusterKey, EncodedDataset
from .seeds import child_seed


@dataclass(frozen=True)
class Fold:
    """One cluster held out for validation, the rest for training."""

    index: int
    cluster: ClusterKey
    train_idx: np.ndarray
    holdout_idx: np.ndarray


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[Fold, ...]

    def __iter__(self):
        return iter(self.folds)

    def __len__(self) -> int:
        return len(self.folds)


def make_folds(data: EncodedDataset) -> FoldPlan:
    """One fold per distinct cluster, ordered by (site, year)."""
    clusters = sorted(set(data.clusters))
    if len(clusters) < 2:
        raise FoldError("LOCO requires at least 2 distinct clusters")
    labels = np.array([c.label() for c in data.clusters])
    folds = []
    for i, cluster in enumerate(clusters):
        mask = labels == cluster.label()
        folds.append(Fold(
            index=i,
            cluster=cluster,
            train_idx=np.flatnonzero(~mask),
            holdout_idx=np.flatnonzero(mask),
        ))
    return FoldPlan(tuple(folds))


def fold_seed(base_seed: int, cluster: ClusterKey) -> int:
    """Deterministic seed mixing the base seed with the cluster key."""
    return child_seed(base_seed, "fold", cluster.site_id, cluster.year)


def learner_seed(base_seed: int, cluster: ClusterKey, kind: str,
                 stream: int) -> int:
    return child_seed(fold_seed(base_seed, cluster), "learner", kind, stream)


class FoldImputations:
    """Cache of fold-local imputations shared by tuning and prediction.

    Per fold: m chains fitted on the training rows (frozen models kept
    only for the field groups actually missing in the validation rows,
    with the outcome as auxiliary), then applied once per stream to the
    validation rows. Folds are independent, so they can be built by a
    worker pool; results depend only on the per-fold seeds.
    """

    def __init__(self, data: EncodedDataset, plan: FoldPlan, m: int,
                 iterations: int, seed: int, workers: int = 1):
        self.data = data
        self.plan = plan
        self.m = m
        self.model_sets: list[ImputationModelSet] = []
        self._train: dict[tuple[int, int], EncodedDataset] = {}
        self._holdout: dict[tuple[int, int], EncodedDataset] = {}
        groups = data.meta.groups()

        def build(fold: Fold):
            train = data.subset(fold.train_idx)
            holdout = data.subset(fold.holdout_idx)
            need = frozenset(
                g.name for g in groups
                if np.isnan(holdout.X[:, g.cols[0]]).any()
            )
            fs = fold_seed(seed, fold.cluster)
            model_set, completed = fit_imputer(
                train, m, iterations, fs,
                freeze_groups=need, freeze_companion=False,
            )
            hold_seed = child_seed(fs, "holdout")
            holdouts = [
                apply_imputer(model_set, model_set.streams[s], holdout,
                              use_outcome=True, seed=hold_seed)
                for s in range(m)
            ]
            return model_set, completed, holdouts

        if workers > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=workers) as pool:
                built = list(pool.map(build, plan.folds))
        else:
            built = [build(fold) for fold in plan.folds]
        for fold, (model_set, completed, holdouts) in zip(plan.folds, built):
            self.model_sets.append(model_set)
            for s in range(m):
                self._train[(fold.index, s)] = completed[s]
                self._holdout[(fold.index, s)] = holdouts[s]

    def train_completed(self, fold_index: int, stream: int) -> EncodedDataset:
        return self._train[(fold_index, stream)]

    def holdout_completed(self, fold_index: int, stream: int) -> EncodedDataset:
        return self._holdout[(fold_index, stream)]


@dataclass(frozen=True)
class GridPoint:
    spec: LearnerSpec
    pooled_mse: float
    per_fold: tuple[tuple[str, int, float], ...]


@dataclass(frozen=True)
class TuneResult:
    kind: str
    stream: int
    grid: tuple[GridPoint, ...]
    selected_index: int

    @property
    def selected(self) -> LearnerSpec:
        return self.grid[self.selected_index].spec

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "stream": self.stream,
            "selected": self.selected.as_dict(),
            "selected_index": self.selected_index,
            "grid": [
                {
                    "params": g.spec.as_dict(),
                    "pooled_mse": g.pooled_mse,
                    "per_fold": [
                        {"cluster": lab, "n": n, "mse": mse}
                        for lab, n, mse in g.per_fold
                    ],
                }
                for g in self.grid
            ],
        }


def _fit_and_score(spec: LearnerSpec, fold: Fold, imps: FoldImputations,
                   stream: int, seed: int) -> tuple[int, float, np.ndarray]:
    train = imps.train_completed(fold.index, stream)
    holdout = imps.holdout_completed(fold.index, stream)
    ls = learner_seed(seed, fold.cluster, spec.kind, stream)
    try:
        learner = build_learner(spec, ls)
        learner.fit(train)
        pred = learner.predict(holdout)
    except LearnerError as exc:
        raise LearnerError(
            f"fold {fold.cluster.label()}, grid point {spec.as_dict()}: {exc}"
        ) from exc
    n = len(holdout.y)
    mse = float(np.mean((holdout.y - pred) ** 2))
    return n, mse, pred


def choose_best(points: Sequence[GridPoint]) -> int:
    """Index of the minimal pooled MSE; ties keep the earliest point."""
    best_index = 0
    best_mse = np.inf
    for gi, point in enumerate(points):
        if point.pooled_mse < best_mse:
            best_mse = point.pooled_mse
            best_index = gi
    return best_index


def tune(data: EncodedDataset, kind: str, grid: Sequence[LearnerSpec],
         imps: FoldImputations, stream: int, seed: int) -> TuneResult:
    """Row-weighted pooled cross-fold MSE over the grid; argmin wins."""
    if len(grid) == 0:
        raise ConfigError(f"empty tuning grid for {kind}")
    points = []
    for spec in grid:
        if spec.kind != kind:
            raise ConfigError(
                f"grid point {spec.as_dict()} is not a {kind} spec"
            )
        per_fold = []
        total_sq = 0.0
        total_n = 0
        for fold in imps.plan:
            n, mse, _ = _fit_and_score(spec, fold, imps, stream, seed)
            per_fold.append((fold.cluster.label(), n, mse))
            total_sq += n * mse
            total_n += n
        pooled = total_sq / total_n
        points.append(GridPoint(spec, pooled, tuple(per_fold)))
    return TuneResult(kind, stream, tuple(points), choose_best(points))


def oof_predictions(data: EncodedDataset, imps: FoldImputations,
                    specs: Mapping[str, LearnerSpec], stream: int,
                    seed: int) -> np.ndarray:
    """n×4 out-of-fold log predictions, columns in canonical learner order.

    Row i is predicted by the fold whose validation set contains i, so no
    entry comes from a model that saw its own cluster.
    """
    n = len(data.y)
    out = np.full((n, len(KINDS)), np.nan)
    for fold in imps.plan:
        for k, kind in enumerate(KINDS):
            _, _, pred = _fit_and_score(specs[kind], fold, imps, stream, seed)
            out[fold.holdout_idx, k] = pred
    if not np.all(np.isfinite(out)):
        raise FoldError("out-of-fold matrix has non-finite entries")
    return out
