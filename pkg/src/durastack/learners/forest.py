"""Random forest regression over bootstrap CART trees."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import LearnerError
from ..seeds import child_rng, child_seed
from ._common import check_completed, check_fingerprint, training_arrays
from .trees import accumulate_tree, canonical_order, grow_tree


class RandomForest:
    kind = "random_forest"

    def __init__(self, n_trees: int, mtry: int, min_node: int, seed: int):
        if n_trees < 1:
            raise LearnerError("n_trees must be positive")
        if mtry < 1:
            raise LearnerError("mtry must be positive")
        if min_node < 1:
            raise LearnerError("min_node must be positive")
        self.n_trees = int(n_trees)
        self.mtry = int(mtry)
        self.min_node = int(min_node)
        self.seed = int(seed)
        self.trees_: Optional[list[tuple]] = None
        self.fingerprint: Optional[str] = None

    def fit(self, data) -> "RandomForest":
        X, y, fp = training_arrays(data)
        self._fit(X, y)
        self.fingerprint = fp
        return self

    def _fit(self, X: np.ndarray, y: np.ndarray) -> "RandomForest":
        check_completed(X, y)
        n, p = X.shape
        if self.mtry > p:
            raise LearnerError(f"mtry {self.mtry} exceeds feature count {p}")
        if self.min_node > n:
            raise LearnerError(f"min_node {self.min_node} exceeds row count {n}")
        order = canonical_order(X, y)
        Xc = np.ascontiguousarray(X[order])
        yc = np.ascontiguousarray(y[order])
        self.trees_ = []
        for t in range(self.n_trees):
            boot = child_rng(self.seed, "bootstrap", t).integers(
                0, n, size=n, dtype=np.int64
            )
            boot.sort()
            tree_seed = np.uint64(child_seed(self.seed, "tree", t))
            self.trees_.append(
                grow_tree(Xc, yc, boot, np.int64(-1),
                          np.int64(self.min_node), np.int64(self.mtry),
                          tree_seed)
            )
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
        out /= self.n_trees
        return out

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
        }

    def state_scalars(self) -> dict:
        return {
            "n_trees": self.n_trees, "mtry": self.mtry,
            "min_node": self.min_node, "seed": self.seed,
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_state(cls, scalars: dict, arrays: dict) -> "RandomForest":
        model = cls(n_trees=scalars["n_trees"], mtry=scalars["mtry"],
                    min_node=scalars["min_node"], seed=scalars["seed"])
        model.fingerprint = scalars["fingerprint"]
        model.trees_ = _unstack_trees(arrays)
        return model


def _unstack_trees(arrays: dict) -> list[tuple]:
    counts = arrays["node_counts"].astype(np.int64)
    trees = []
    offset = 0
    for c in counts:
        sl = slice(offset, offset + int(c))
        trees.append((
            np.ascontiguousarray(arrays["feature"][sl].astype(np.int64)),
            np.ascontiguousarray(arrays["threshold"][sl]),
            np.ascontiguousarray(arrays["left"][sl].astype(np.int64)),
            np.ascontiguousarray(arrays["right"][sl].astype(np.int64)),
            np.ascontiguousarray(arrays["value"][sl]),
        ))
        offset += int(c)
    return trees
