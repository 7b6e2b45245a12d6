"""Run configuration: flat key=value files with typed, closed parsing.

Every key is declared with a type and default; anything else is rejected
so a typo cannot silently fall back to a default. List-valued keys take
comma-separated entries. Defaults mirror the published pipeline where it
states them (five imputations, five chained iterations).
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, fields, replace
from typing import Optional

from .errors import ConfigError
from .learners import LearnerSpec


def _parse_int(raw: str) -> int:
    try:
        return int(raw, 10)
    except ValueError as exc:
        raise ConfigError(f"expected an integer, got {raw!r}") from exc


def _parse_float(raw: str) -> float:
    try:
        value = float(raw)
    except ValueError as exc:
        raise ConfigError(f"expected a number, got {raw!r}") from exc
    if not math.isfinite(value):
        raise ConfigError(f"expected a finite number, got {raw!r}")
    return value


def _parse_float_list(raw: str) -> tuple[float, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError("expected a comma-separated list of numbers")
    return tuple(_parse_float(p) for p in parts)


def _parse_int_list(raw: str) -> tuple[int, ...]:
    parts = [p.strip() for p in raw.split(",") if p.strip()]
    if not parts:
        raise ConfigError("expected a comma-separated list of integers")
    return tuple(_parse_int(p) for p in parts)


def _parse_str(raw: str) -> str:
    return raw


_PARSERS = {
    int: _parse_int,
    float: _parse_float,
    str: _parse_str,
    "float_list": _parse_float_list,
    "int_list": _parse_int_list,
}


@dataclass(frozen=True)
class RunConfig:
    """Everything a run needs beyond its input files."""

    m: int = 5
    iterations: int = 5
    seed: int = 0
    bootstrap_b: int = 1000
    threads: int = 0
    serve_host: str = "127.0.0.1"
    serve_port: int = 8321
    static_dir: str = ""
    synth_cells: str = ""
    synth_residual_sd: float = 0.5
    enet_lambda: tuple[float, ...] = (1e-4, 1e-3, 1e-2, 0.1)
    enet_alpha: tuple[float, ...] = (0.1, 0.5, 0.9)
    gam_penalty: tuple[float, ...] = (0.01, 1.0, 100.0)
    gam_knots: int = 10
    rf_trees: int = 300
    rf_mtry: tuple[int, ...] = ()
    rf_min_node: tuple[int, ...] = (5, 20)
    gbt_rounds: tuple[int, ...] = (100, 300)
    gbt_depth: tuple[int, ...] = (2, 4)
    gbt_learning_rate: tuple[float, ...] = (0.05, 0.1)
    gbt_subsample: float = 0.8

    def __post_init__(self):
        if self.m < 1:
            raise ConfigError("m must be at least 1")
        if self.iterations < 1:
            raise ConfigError("iterations must be at least 1")
        if self.bootstrap_b < 100:
            raise ConfigError("bootstrap_b must be at least 100")
        if self.threads < 0:
            raise ConfigError("threads must be nonnegative")
        if not (0 < self.serve_port < 65536):
            raise ConfigError("serve_port must be a valid TCP port")

    def worker_count(self) -> int:
        if self.threads > 0:
            return self.threads
        env = os.environ.get("DURASTACK_THREADS", "").strip()
        if env:
            value = _parse_int(env)
            if value < 1:
                raise ConfigError("DURASTACK_THREADS must be positive")
            return value
        return os.cpu_count() or 1

    def grids(self, p: int) -> dict[str, list[LearnerSpec]]:
        """Materialize the tuning grids for a p-column design."""
        mtry = self.rf_mtry
        if not mtry:
            auto = (math.ceil(p / 3), math.ceil(math.sqrt(p)))
            mtry = tuple(dict.fromkeys(auto))
        grids: dict[str, list[LearnerSpec]] = {
            "elastic_net": [
                LearnerSpec.make("elastic_net", {"lambda_": lam, "alpha": al})
                for lam in self.enet_lambda for al in self.enet_alpha
            ],
            "gam": [
                LearnerSpec.make("gam", {"smooth_penalty": pen,
                                         "knots": self.gam_knots})
                for pen in self.gam_penalty
            ],
            "random_forest": [
                LearnerSpec.make("random_forest", {
                    "n_trees": self.rf_trees, "mtry": mt, "min_node": mn,
                })
                for mt in mtry for mn in self.rf_min_node
            ],
            "gbt": [
                LearnerSpec.make("gbt", {
                    "n_rounds": r, "depth": d, "learning_rate": lr,
                    "subsample": self.gbt_subsample,
                })
                for r in self.gbt_rounds for d in self.gbt_depth
                for lr in self.gbt_learning_rate
            ],
        }
        return grids

    def grid_summary(self) -> dict:
        return {
            "elastic_net": {"lambda": list(self.enet_lambda),
                            "alpha": list(self.enet_alpha)},
            "gam": {"smooth_penalty": list(self.gam_penalty),
                    "knots": self.gam_knots},
            "random_forest": {"n_trees": self.rf_trees,
                              "mtry": list(self.rf_mtry) or "auto",
                              "min_node": list(self.rf_min_node)},
            "gbt": {"n_rounds": list(self.gbt_rounds),
                    "depth": list(self.gbt_depth),
                    "learning_rate": list(self.gbt_learning_rate),
                    "subsample": self.gbt_subsample},
        }


_FIELD_TYPES = {}
for f in fields(RunConfig):
    if f.type in ("int", int):
        _FIELD_TYPES[f.name] = int
    elif f.type in ("float", float):
        _FIELD_TYPES[f.name] = float
    elif f.type in ("str", str):
        _FIELD_TYPES[f.name] = str
    elif "float" in str(f.type):
        _FIELD_TYPES[f.name] = "float_list"
    else:
        _FIELD_TYPES[f.name] = "int_list"


def parse_config(text: str) -> RunConfig:
    """Parse flat key=value lines; blank lines and # comments allowed."""
    values: dict[str, object] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, _, raw_value = line.partition("=")
        key = key.strip()
        raw_value = raw_value.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        parser = _PARSERS[_FIELD_TYPES[key]]
        try:
            values[key] = parser(raw_value)
        except ConfigError as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from exc
    return RunConfig(**values)


def load_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


def with_seed(config: RunConfig, seed: Optional[int]) -> RunConfig:
    if seed is None:
        return config
    return replace(config, seed=seed)


def with_threads(config: RunConfig, threads: Optional[int]) -> RunConfig:
    """Override the thread count; 0 restores the machine default."""
    if threads is None:
        return config
    if threads < 0:
        raise ConfigError("threads must be nonnegative")
    return replace(config, threads=threads)
