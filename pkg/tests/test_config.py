"""Run-configuration parsing, defaults, and grid materialization."""

import math

import pytest

from durastack.config import (
    RunConfig,
    load_config,
    parse_config,
    with_seed,
    with_threads,
)
from durastack.errors import ConfigError
from durastack.learners import KINDS


class TestDefaults:
    def test_published_pipeline_defaults(self):
        cfg = RunConfig()
        assert cfg.m == 5
        assert cfg.iterations == 5
        assert cfg.seed == 0
        assert cfg.bootstrap_b == 1000
        assert cfg.serve_host == "127.0.0.1"
        assert cfg.serve_port == 8321
        assert cfg.synth_residual_sd == 0.5

    def test_bounds_are_enforced(self):
        with pytest.raises(ConfigError, match="m must be at least 1"):
            RunConfig(m=0)
        with pytest.raises(ConfigError, match="iterations"):
            RunConfig(iterations=0)
        with pytest.raises(ConfigError, match="bootstrap_b"):
            RunConfig(bootstrap_b=99)
        with pytest.raises(ConfigError, match="threads"):
            RunConfig(threads=-1)
        with pytest.raises(ConfigError, match="serve_port"):
            RunConfig(serve_port=0)
        with pytest.raises(ConfigError, match="serve_port"):
            RunConfig(serve_port=70000)


class TestWorkerCount:
    def test_explicit_threads_win(self, monkeypatch):
        monkeypatch.setenv("DURASTACK_THREADS", "7")
        assert RunConfig(threads=3).worker_count() == 3

    def test_environment_fallback(self, monkeypatch):
        monkeypatch.setenv("DURASTACK_THREADS", "7")
        assert RunConfig().worker_count() == 7

    def test_machine_fallback(self, monkeypatch):
        monkeypatch.delenv("DURASTACK_THREADS", raising=False)
        import os
        assert RunConfig().worker_count() == (os.cpu_count() or 1)

    def test_bad_environment_values(self, monkeypatch):
        monkeypatch.setenv("DURASTACK_THREADS", "0")
        with pytest.raises(ConfigError, match="positive"):
            RunConfig().worker_count()
        monkeypatch.setenv("DURASTACK_THREADS", "many")
        with pytest.raises(ConfigError, match="integer"):
            RunConfig().worker_count()


class TestGrids:
    def test_default_grid_sizes(self):
        grids = RunConfig().grids(p=9)
        assert list(grids) == list(KINDS)
        assert len(grids["elastic_net"]) == 12
        assert len(grids["gam"]) == 3
        assert len(grids["random_forest"]) == 2
        assert len(grids["gbt"]) == 8

    def test_auto_mtry_deduplicates(self):
        specs = RunConfig().grids(p=9)["random_forest"]
        assert sorted({s.as_dict()["mtry"] for s in specs}) == [3]
        assert sorted(s.as_dict()["min_node"] for s in specs) == [5, 20]

    def test_auto_mtry_tracks_width(self):
        specs = RunConfig().grids(p=26)["random_forest"]
        want = {math.ceil(26 / 3), math.ceil(math.sqrt(26))}
        assert {s.as_dict()["mtry"] for s in specs} == want
        assert len(specs) == len(want) * 2

    def test_explicit_mtry_overrides(self):
        cfg = RunConfig(rf_mtry=(2, 4), rf_min_node=(10,))
        specs = cfg.grids(p=9)["random_forest"]
        assert [s.as_dict()["mtry"] for s in specs] == [2, 4]
        assert all(s.as_dict()["n_trees"] == 300 for s in specs)

    def test_gbt_grid_is_a_full_cross(self):
        cfg = RunConfig(gbt_rounds=(50,), gbt_depth=(2, 3),
                        gbt_learning_rate=(0.1,), gbt_subsample=0.9)
        specs = cfg.grids(p=5)["gbt"]
        assert [(s.as_dict()["n_rounds"], s.as_dict()["depth"]) for s in specs] \
            == [(50, 2), (50, 3)]
        assert all(s.as_dict()["subsample"] == 0.9 for s in specs)

    def test_summary_marks_auto_mtry(self):
        summary = RunConfig().grid_summary()
        assert summary["random_forest"]["mtry"] == "auto"
        widened = RunConfig(rf_mtry=(4,)).grid_summary()
        assert widened["random_forest"]["mtry"] == [4]


class TestParsing:
    def test_round_trip_of_each_value_kind(self):
        cfg = parse_config(
            "# comment\n"
            "\n"
            "m = 3\n"
            "serve_host = 0.0.0.0\n"
            "synth_residual_sd = 0.25\n"
            "enet_lambda = 0.001, 0.1\n"
            "rf_min_node = 5\n"
        )
        assert cfg.m == 3
        assert cfg.serve_host == "0.0.0.0"
        assert cfg.synth_residual_sd == 0.25
        assert cfg.enet_lambda == (0.001, 0.1)
        assert cfg.rf_min_node == (5,)
        assert cfg.iterations == 5

    def test_empty_text_gives_defaults(self):
        assert parse_config("") == RunConfig()

    def test_errors_carry_line_numbers(self):
        with pytest.raises(ConfigError, match="line 2: expected key=value"):
            parse_config("m = 3\nnot a setting\n")
        with pytest.raises(ConfigError, match="line 1: unknown key 'mm'"):
            parse_config("mm = 3\n")
        with pytest.raises(ConfigError, match="line 3: duplicate key 'm'"):
            parse_config("m = 3\nseed = 1\nm = 4\n")
        with pytest.raises(ConfigError,
                           match="line 1: m: expected an integer"):
            parse_config("m = three\n")
        with pytest.raises(ConfigError, match="line 1: synth_residual_sd"):
            parse_config("synth_residual_sd = inf\n")
        with pytest.raises(ConfigError, match="line 1: enet_lambda"):
            parse_config("enet_lambda = ,\n")

    def test_parsed_bounds_still_apply(self):
        with pytest.raises(ConfigError, match="at least 1"):
            parse_config("m = 0\n")


class TestLoading:
    def test_no_path_means_defaults(self):
        assert load_config(None) == RunConfig()

    def test_file_contents_are_parsed(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("seed = 42\nthreads = 2\n")
        cfg = load_config(str(path))
        assert cfg.seed == 42
        assert cfg.threads == 2

    def test_missing_file_is_reported(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config"):
            load_config(str(tmp_path / "absent.cfg"))


class TestOverrides:
    def test_seed_override(self):
        base = RunConfig(seed=1)
        assert with_seed(base, None) is base
        assert with_seed(base, 9).seed == 9

    def test_thread_override(self):
        base = RunConfig(threads=2)
        assert with_threads(base, None) is base
        assert with_threads(base, 4).threads == 4
        assert with_threads(base, 0).threads == 0
        with pytest.raises(ConfigError, match="nonnegative"):
            with_threads(base, -1)
