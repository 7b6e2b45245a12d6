"""End-to-end develop, validate, and batch prediction behaviour."""

import dataclasses
import json
import os

import numpy as np
import pytest

from conftest import small_generator
from durastack import artifact, pipeline, synthdata
from durastack.errors import CsvError, StageFailure
from durastack.ingest import write_csv
from durastack.learners import KINDS
from durastack.metrics import REPORT_HEADER, MetricReport, report_csv_text
from durastack.schema import CSV_COLUMNS
from durastack.stack import Prediction, RecordFailure

PREDICT_HEADER = ("case_id,predicted_minutes,log_prediction_mean,"
                  "pipeline_spread,imputed_fields,error")


class TestDevelopOutputs:
    def test_artifact_and_audit_are_written(self, dev_result):
        assert os.path.isfile(dev_result.model_path)
        assert os.path.basename(dev_result.model_path) == "model.dsm"
        audit = json.load(open(dev_result.audit_path))
        assert len(audit["streams"]) == 2
        assert set(audit["streams"][0]) == set(KINDS)

    def test_report_file_family(self, dev_result):
        names = sorted(os.path.basename(p) for p in dev_result.report_paths)
        assert names == sorted([
            "iecv_report.csv", "iecv_report.json",
            "iecv_report_cluster_rmse.csv",
            "iecv_report_calibration_deciles.csv",
            "iecv_report_calibration_scatter.csv",
        ])
        for path in dev_result.report_paths:
            assert os.path.isfile(path)

    def test_cross_validation_report_layout(self, dev_result):
        csv_path = [p for p in dev_result.report_paths
                    if p.endswith("iecv_report.csv")][0]
        lines = open(csv_path).read().splitlines()
        assert lines[0] == REPORT_HEADER
        assert len(lines) == 1 + 3 + 1
        kept = len(dev_result.dataset.y)
        assert lines[-1].startswith(f"Overall,{kept},")

    def test_decile_file_has_ten_rows(self, dev_result):
        path = [p for p in dev_result.report_paths
                if p.endswith("deciles.csv")][0]
        lines = open(path).read().splitlines()
        assert lines[0] == "decile,n,mean_predicted,mean_observed"
        assert len(lines) == 11

    def test_report_json_rebuilds_the_csv(self, dev_result):
        json_path = [p for p in dev_result.report_paths
                     if p.endswith("iecv_report.json")][0]
        csv_path = json_path[:-5] + ".csv"
        rebuilt = MetricReport.from_json(json.load(open(json_path)))
        assert report_csv_text(rebuilt) == open(csv_path).read()

    def test_saved_artifact_matches_the_returned_model(
            self, dev_result, locked):
        loaded = artifact.load(dev_result.model_path)
        assert loaded.m == locked.m
        for a, b in zip(loaded.pipelines, locked.pipelines):
            np.testing.assert_array_equal(a.weights.w, b.weights.w)
        assert loaded.provenance == locked.provenance

    def test_provenance_records_the_run(self, locked):
        prov = locked.provenance
        assert prov["m"] == 2 and prov["iterations"] == 2
        assert len(prov["tune_digest"]) == 64
        assert isinstance(prov["exclusions"], list)
        assert prov["grids"]["gam"]["knots"] == 10


class TestDevelopDeterminism:
    def test_rerun_is_byte_identical(self, dev_result, small_csv,
                                     small_config, tmp_path):
        again = pipeline.develop(small_csv, small_config, str(tmp_path))
        assert open(again.model_path, "rb").read() \
            == open(dev_result.model_path, "rb").read()
        assert open(again.audit_path).read() \
            == open(dev_result.audit_path).read()
        first_csv = [p for p in dev_result.report_paths
                     if p.endswith("iecv_report.csv")][0]
        again_csv = [p for p in again.report_paths
                     if p.endswith("iecv_report.csv")][0]
        assert open(again_csv).read() == open(first_csv).read()

    def test_worker_count_changes_nothing(self, dev_result, small_csv,
                                          small_config, tmp_path):
        threaded = dataclasses.replace(small_config, threads=3)
        again = pipeline.develop(small_csv, threaded, str(tmp_path))
        assert open(again.model_path, "rb").read() \
            == open(dev_result.model_path, "rb").read()


class TestStageTagging:
    def test_missing_input_fails_in_ingest(self, small_config, tmp_path):
        with pytest.raises(StageFailure, match="cannot read") as info:
            pipeline.develop(str(tmp_path / "absent.csv"), small_config,
                             str(tmp_path / "out"))
        assert info.value.stage == "ingest"
        assert isinstance(info.value.original, CsvError)

    def test_bad_cell_fails_in_ingest(self, small_csv, small_config,
                                      tmp_path):
        lines = open(small_csv).read().splitlines()
        cells = lines[1].split(",")
        cells[CSV_COLUMNS.index("age_years")] = "banana"
        lines[1] = ",".join(cells)
        bad = tmp_path / "bad.csv"
        bad.write_text("\n".join(lines) + "\n")
        with pytest.raises(StageFailure, match="invalid rows") as info:
            pipeline.develop(str(bad), small_config, str(tmp_path / "out"))
        assert info.value.stage == "ingest"

    def test_single_cluster_fails_in_fold_construction(self, small_config,
                                                       tmp_path):
        gen = small_generator(cells=(("Alpha", 2021, 120),))
        records, _ = synthdata.generate(gen)
        path = tmp_path / "one.csv"
        write_csv(path, records)
        with pytest.raises(StageFailure, match="at least 2 distinct") as info:
            pipeline.develop(str(path), small_config, str(tmp_path / "out"))
        assert info.value.stage == "fold construction"


@pytest.fixture(scope="module")
def val_result(model_path, test_year_csv, small_config, tmp_path_factory):
    out = tmp_path_factory.mktemp("validate")
    return pipeline.validate(model_path, test_year_csv, small_config,
                             str(out))


class TestValidate:
    def test_summary_shape(self, val_result, test_year_csv):
        summary = val_result.summary
        assert set(summary) == {"context", "n", "intercept", "slope",
                                "rmse", "mae", "adjusted_r2"}
        assert summary["context"] == "temporal_test"
        kept, _ = pipeline.load_clean_cohort(test_year_csv)
        assert summary["n"] == len(kept)
        assert 480 <= summary["n"] <= 500

    def test_estimates_pool_across_imputations(self, val_result):
        for key in ("intercept", "slope", "rmse", "mae"):
            est = val_result.summary[key]
            assert est["method"] == "rubin"
            assert est["ci_low"] <= est["value"] <= est["ci_high"]
        r2 = val_result.summary["adjusted_r2"]
        assert len(r2["per_imputation"]) == 2
        assert r2["value"] == pytest.approx(
            np.mean(r2["per_imputation"]), abs=1e-12)

    def test_summary_file_round_trips(self, val_result):
        on_disk = json.load(open(val_result.summary_path))
        assert on_disk == val_result.summary

    def test_temporal_report_family(self, val_result):
        names = sorted(os.path.basename(p) for p in val_result.report_paths)
        assert names == sorted([
            "temporal_report.csv", "temporal_report.json",
            "temporal_report_cluster_rmse.csv",
            "temporal_report_calibration_deciles.csv",
            "temporal_report_calibration_scatter.csv",
        ])
        csv_path = val_result.report_paths[0]
        lines = open(csv_path).read().splitlines()
        assert lines[0] == REPORT_HEADER
        assert len(lines) == 1 + 2 + 1

    def test_model_object_and_path_agree(self, val_result, locked,
                                         test_year_csv, small_config,
                                         tmp_path):
        again = pipeline.validate(locked, test_year_csv, small_config,
                                  str(tmp_path))
        assert json.dumps(again.summary, sort_keys=True) \
            == json.dumps(val_result.summary, sort_keys=True)


@pytest.fixture(scope="module")
def cases_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cases") / "cases.csv"
    path.write_text(
        "case_id,scheduled_duration_min,sex,asa,bmi\n"
        "c1,120,female,2,\n"
        "c2,45,male,9,21.5\n"
        "c3,,,,\n"
    )
    return str(path)


class TestPredictBatch:
    def test_scores_partial_rows(self, model_path, cases_csv, tmp_path):
        out = str(tmp_path / "preds.csv")
        results = pipeline.predict_batch(model_path, cases_csv, out, seed=5)
        assert len(results) == 3
        assert isinstance(results[0], Prediction)
        assert isinstance(results[1], RecordFailure)
        assert isinstance(results[2], Prediction)
        lines = open(out).read().splitlines()
        assert lines[0] == PREDICT_HEADER
        assert lines[1].startswith("c1,")
        assert lines[3].startswith("c3,")
        assert "bmi" in lines[1].split(",")[4]
        assert float(lines[1].split(",")[1]) > 0

    def test_failed_rows_keep_their_slot(self, model_path, cases_csv,
                                         tmp_path):
        out = str(tmp_path / "preds.csv")
        results = pipeline.predict_batch(model_path, cases_csv, out, seed=5)
        failure = results[1]
        assert failure.errors[0]["field"] == "asa"
        line = open(out).read().splitlines()[2]
        assert line.startswith("c2,,,,,")
        assert "asa" in line

    def test_seeded_determinism(self, locked, cases_csv, tmp_path):
        out_a = str(tmp_path / "a.csv")
        out_b = str(tmp_path / "b.csv")
        out_c = str(tmp_path / "c.csv")
        pipeline.predict_batch(locked, cases_csv, out_a, seed=5)
        pipeline.predict_batch(locked, cases_csv, out_b, seed=5)
        pipeline.predict_batch(locked, cases_csv, out_c, seed=6)
        assert open(out_a).read() == open(out_b).read()
        assert open(out_a).read() != open(out_c).read()

    def test_unknown_column_is_rejected(self, model_path, tmp_path):
        path = tmp_path / "cases.csv"
        path.write_text("case_id,surgeon_id\nc1,77\n")
        with pytest.raises(CsvError, match="unknown prediction columns"):
            pipeline.predict_batch(model_path, str(path),
                                   str(tmp_path / "out.csv"), seed=0)

    def test_rows_without_ids_are_numbered(self, model_path, tmp_path):
        path = tmp_path / "cases.csv"
        path.write_text("scheduled_duration_min\n60\n90\n")
        out = str(tmp_path / "preds.csv")
        pipeline.predict_batch(model_path, str(path), out, seed=1)
        lines = open(out).read().splitlines()
        assert lines[1].startswith("row1,")
        assert lines[2].startswith("row2,")
