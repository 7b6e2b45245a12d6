"""Gradient-boosted regression trees with squared-error loss."""

from __future__ import annotations

import math
from typing import Optional

import numpy as np

from ..errors import LearnerError
from ..seeds import child_rng, child_seed
from ._common import check_completed, check_fingerprint, training_arrays
from .trees import accumulate_tree, canonical_order, grow_tree


class GradientBoosting:
    kind = "gbt"

    def __init__(self, n_rounds: int, depth: int, learning_rate: float,
                 subsample: float, seed: int, min_node: int = 1):
        if n_rounds < 1:
            raise LearnerError("n_rounds must be positive")
        if depth < 1:
            raise LearnerError("depth must be at least 1")
        if learning_rate <= 0:
            raise LearnerError("learning_rate must be positive")
        if not 0.0 < subsample <= 1.0:
            raise LearnerError("subsample must lie in (0, 1]")
        self.n_rounds = int(n_rounds)
        self.depth = int(depth)
        self.learning_rate = float(learning_rate)
        self.subsample = float(subsample)
        self.seed = int(seed)
        self.min_node = int(min_node)
        self.base_score_: Optional[float] = None
        self.trees_: Optional[list[tuple]] = None
        self.fingerprint: Optional[str] = None

    def fit(self, data) -> "GradientBoosting":
        X, y, fp = training_arrays(data)
        self._fit(X, y)
        self.fingerprint = fp
        return self

    def _fit(self, X: np.ndarray, y: np.ndarray) -> "GradientBoosting":
        check_completed(X, y)
        n, p = X.shape
        if n < 2:
            raise LearnerError("need at least two rows")
        order = canonical_order(X, y)
        Xc = np.ascontiguousarray(X[order])
        yc = np.ascontiguousarray(y[order])

        ylo, yhi = float(yc.min()), float(yc.max())
        self.base_score_ = ylo if ylo == yhi else float(yc.mean())
        resid = yc - self.base_score_
        take = max(1, math.floor(self.subsample * n))
        self.trees_ = []
        for r in range(self.n_rounds):
            if take < n:
                rows = child_rng(self.seed, "subsample", r).choice(
                    n, size=take, replace=False
                ).astype(np.int64)
                rows.sort()
            else:
                rows = np.arange(n, dtype=np.int64)
            tree_seed = np.uint64(child_seed(self.seed, "round", r))
            nodes = grow_tree(Xc, resid, rows, np.int64(self.depth),
                              np.int64(self.min_node), np.int64(p), tree_seed)
            self.trees_.append(nodes)
            update = np.zeros(n)
            accumulate_tree(*nodes, Xc, update)
            resid -= self.learning_rate * update
        return self

    def predict(self, data) -> np.ndarray:
        check_fingerprint(self.fingerprint, data.meta.fingerprint())
        X = np.asarray(data.X, dtype=np.float64)
        check_completed(X)
        return self.predict_rows(X)

    def predict_rows(self, X: np.ndarray) -> np.ndarray:
        if self.trees_ is None:
            raise LearnerError("model not fitted")
        X = np.ascontiguousarray(np.asarray(X, dtype=np.float64))
        out = np.zeros(X.shape[0])
        for nodes in self.trees_:
            accumulate_tree(*nodes, X, out)
        return self.base_score_ + self.learning_rate * out

    # --- serialization -----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        counts = np.array([len(t[0]) for t in self.trees_], dtype=np.float64)
        stacked = [np.concatenate([t[i] for t in self.trees_]).astype(np.float64)
                   for i in range(5)]
        return {
            "node_counts": counts,
            "feature": stacked[0],
            "threshold": stacked[1],
            "left": stacked[2],
            "right": stacked[3],
            "value": stacked[4],
            "base_score": np.array([self.base_score_]),
        }

    def state_scalars(self) -> dict:
        return {
            "n_rounds": self.n_rounds, "depth": self.depth,
            "learning_rate": self.learning_rate,
            "subsample": self.subsample, "seed": self.seed,
            "min_node": self.min_node, "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_state(cls, scalars: dict, arrays: dict) -> "GradientBoosting":
        from .forest import _unstack_trees

        model = cls(n_rounds=scalars["n_rounds"], depth=scalars["depth"],
                    learning_rate=scalars["learning_rate"],
                    subsample=scalars["subsample"], seed=scalars["seed"],
                    min_node=scalars["min_node"])
        model.fingerprint = scalars["fingerprint"]
        model.base_score_ = float(arrays["base_score"][0])
        model.trees_ = _unstack_trees(arrays)
        return model
