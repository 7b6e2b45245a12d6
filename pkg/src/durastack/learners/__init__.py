"""Four base regression learners sharing one fit/predict contract.

Kinds, in canonical column order for stacking: elastic_net, gam,
random_forest, gbt. Default tuning grids live here so every caller sees
the same canonical grid order (ties in tuning resolve to the first entry).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

from ..errors import LearnerError
from .elastic_net import ElasticNet, soft_threshold
from .gam import AdditiveSplineModel
from .forest import RandomForest
from .gbt import GradientBoosting

KINDS = ("elastic_net", "gam", "random_forest", "gbt")

_SPACES = {
    "elastic_net": ("lambda_", "alpha"),
    "gam": ("smooth_penalty", "knots"),
    "random_forest": ("n_trees", "mtry", "min_node"),
    "gbt": ("n_rounds", "depth", "learning_rate", "subsample"),
}


@dataclass(frozen=True)
class LearnerSpec:
    """One grid point: a learner kind plus its hyperparameter values."""

    kind: str
    params: tuple

    @classmethod
    def make(cls, kind: str, params: Mapping[str, object]) -> "LearnerSpec":
        if kind not in _SPACES:
            raise LearnerError(f"unknown learner kind {kind!r}")
        keys = _SPACES[kind]
        if set(params) != set(keys):
            raise LearnerError(
                f"{kind} hyperparameters must be exactly {sorted(keys)}, "
                f"got {sorted(params)}"
            )
        return cls(kind, tuple((k, params[k]) for k in keys))

    def as_dict(self) -> dict:
        return dict(self.params)


def default_grid(kind: str, p: int) -> list[LearnerSpec]:
    """Canonical tuning grid for one learner kind (p = feature count)."""
    if kind == "elastic_net":
        return [
            LearnerSpec.make(kind, {"lambda_": lam, "alpha": a})
            for lam in (0.0001, 0.001, 0.01, 0.1)
            for a in (0.1, 0.5, 0.9)
        ]
    if kind == "gam":
        return [
            LearnerSpec.make(kind, {"smooth_penalty": lam, "knots": 10})
            for lam in (0.01, 1.0, 100.0)
        ]
    if kind == "random_forest":
        grid = []
        for mtry in (math.ceil(p / 3), math.ceil(math.sqrt(p))):
            for min_node in (5, 20):
                spec = LearnerSpec.make(
                    kind, {"n_trees": 300, "mtry": mtry, "min_node": min_node}
                )
                if spec not in grid:
                    grid.append(spec)
        return grid
    if kind == "gbt":
        return [
            LearnerSpec.make(
                kind,
                {"n_rounds": r, "depth": d, "learning_rate": lr,
                 "subsample": 0.8},
            )
            for r in (100, 300)
            for d in (2, 4)
            for lr in (0.05, 0.1)
        ]
    raise LearnerError(f"unknown learner kind {kind!r}")


def build_learner(spec: LearnerSpec, seed: int = 0):
    """Instantiate an unfitted learner from a grid point."""
    params = spec.as_dict()
    if spec.kind == "elastic_net":
        return ElasticNet(lambda_=params["lambda_"], alpha=params["alpha"])
    if spec.kind == "gam":
        return AdditiveSplineModel(
            smooth_penalty=params["smooth_penalty"], knots=params["knots"]
        )
    if spec.kind == "random_forest":
        return RandomForest(
            n_trees=params["n_trees"], mtry=params["mtry"],
            min_node=params["min_node"], seed=seed,
        )
    if spec.kind == "gbt":
        return GradientBoosting(
            n_rounds=params["n_rounds"], depth=params["depth"],
            learning_rate=params["learning_rate"],
            subsample=params["subsample"], seed=seed,
        )
    raise LearnerError(f"unknown learner kind {spec.kind!r}")


def learner_class(kind: str):
    """Class implementing one learner kind (for deserialization)."""
    classes = {
        "elastic_net": ElasticNet,
        "gam": AdditiveSplineModel,
        "random_forest": RandomForest,
        "gbt": GradientBoosting,
    }
    if kind not in classes:
        raise LearnerError(f"unknown learner kind {kind!r}")
    return classes[kind]


__all__ = [
    "KINDS",
    "LearnerSpec",
    "default_grid",
    "build_learner",
    "learner_class",
    "ElasticNet",
    "AdditiveSplineModel",
    "RandomForest",
    "GradientBoosting",
    "soft_threshold",
]
