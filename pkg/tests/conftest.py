"""Shared fixtures: one small developed model reused across suites."""

import dataclasses

import pytest

from durastack import pipeline, synthdata
from durastack.config import RunConfig
from durastack.ingest import write_csv

SMALL_CELLS = (
    ("Alpha", 2021, 300),
    ("Alpha", 2022, 300),
    ("Beta", 2021, 300),
)
SMALL_SHIFTS = (
    ("Alpha at 2021", 0.04),
    ("Alpha at 2022", 0.02),
    ("Beta at 2021", -0.03),
)


def small_generator(seed: int = 11, cells=SMALL_CELLS) -> synthdata.GeneratorConfig:
    return dataclasses.replace(
        synthdata.GeneratorConfig(seed=seed),
        cells=cells,
        cluster_shifts=SMALL_SHIFTS,
    )


def small_run_config(**overrides) -> RunConfig:
    base = dict(
        m=2, iterations=2, bootstrap_b=100,
        enet_lambda=(1e-3, 1e-2), enet_alpha=(0.5,),
        gam_penalty=(1.0,), rf_trees=25, rf_min_node=(20,),
        gbt_rounds=(40,), gbt_depth=(2,),
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture(scope="session")
def small_config():
    return small_run_config()


@pytest.fixture(scope="session")
def small_csv(tmp_path_factory):
    gen = small_generator()
    records, _ = synthdata.generate(gen)
    masked, _ = synthdata.mask(records, gen)
    path = tmp_path_factory.mktemp("cohort") / "train.csv"
    write_csv(path, masked)
    return str(path)


@pytest.fixture(scope="session")
def test_year_csv(tmp_path_factory):
    gen = small_generator(cells=(("Alpha", 2023, 250), ("Beta", 2023, 250)))
    records, _ = synthdata.generate(gen)
    masked, _ = synthdata.mask(records, gen)
    path = tmp_path_factory.mktemp("cohort") / "test.csv"
    write_csv(path, masked)
    return str(path)


@pytest.fixture(scope="session")
def dev_result(small_csv, small_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("develop")
    return pipeline.develop(small_csv, small_config, str(out))


@pytest.fixture(scope="session")
def locked(dev_result):
    return dev_result.locked


@pytest.fixture(scope="session")
def model_path(dev_result):
    return dev_result.model_path
