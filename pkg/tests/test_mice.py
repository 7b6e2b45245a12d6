"""Chained-equation imputation: recovery, donor sets, and frozen reuse."""

import dataclasses

import numpy as np
import pytest
from conftest import small_generator

from durastack import synthdata
from durastack.errors import ImputationError, SchemaMismatchError
from durastack.mice import apply_imputer, fit_imputer, impute_single
from durastack.schema import encode

CELLS = (("Alpha", 2021, 700), ("Beta", 2021, 700), ("Beta", 2022, 600))


def _complete_records(seed=23, cells=CELLS):
    records, _ = synthdata.generate(small_generator(seed=seed, cells=cells))
    return records


def _mask_field(records, field, rate, seed=40):
    rng = np.random.default_rng(seed)
    pick = rng.uniform(size=len(records)) < rate
    out = []
    originals = {}
    for flag, rec in zip(pick, records):
        if flag:
            originals[rec.case_id] = getattr(rec, field)
            rec = dataclasses.replace(rec, **{field: None})
        out.append(rec)
    return out, originals


@pytest.fixture(scope="module")
def masked_bmi():
    records = _complete_records()
    masked, originals = _mask_field(records, "bmi", 0.3)
    return encode(masked), originals


@pytest.fixture(scope="module")
def fitted(masked_bmi):
    data, _ = masked_bmi
    model_set, completed = fit_imputer(data, m=2, iterations=3, seed=5)
    return model_set, completed


class TestRecovery:
    def test_masked_mean_recovered(self, masked_bmi, fitted):
        data, originals = masked_bmi
        _, completed = fitted
        col = data.meta.column_index()["bmi"]
        rows = np.flatnonzero(data.missing_mask[:, col])
        truth = np.array([originals[data.case_ids[i]] for i in rows])
        for comp in completed:
            imputed = comp.X[rows, col]
            assert abs(imputed.mean() - truth.mean()) <= 0.5

    def test_imputed_values_come_from_observed_donors(self, masked_bmi, fitted):
        data, _ = masked_bmi
        _, completed = fitted
        col = data.meta.column_index()["bmi"]
        miss = data.missing_mask[:, col]
        donors = set(data.X[~miss, col].tolist())
        for comp in completed:
            assert set(comp.X[miss, col].tolist()) <= donors

    def test_observed_cells_bit_identical(self, masked_bmi, fitted):
        data, _ = masked_bmi
        _, completed = fitted
        keep = ~data.missing_mask
        for comp in completed:
            assert np.array_equal(comp.X[keep], data.X[keep])

    def test_completed_sets_have_no_gaps(self, fitted):
        _, completed = fitted
        for comp in completed:
            assert np.isfinite(comp.X).all()

    def test_streams_differ(self, masked_bmi, fitted):
        data, _ = masked_bmi
        _, completed = fitted
        col = data.meta.column_index()["bmi"]
        miss = data.missing_mask[:, col]
        assert not np.array_equal(completed[0].X[miss, col],
                                  completed[1].X[miss, col])


class TestDeterminism:
    def test_refit_is_byte_identical(self, masked_bmi, fitted):
        data, _ = masked_bmi
        model_set, completed = fitted
        again_set, again_completed = fit_imputer(data, m=2, iterations=3, seed=5)
        for a, b in zip(completed, again_completed):
            assert np.array_equal(a.X, b.X)
        for s1, s2 in zip(model_set.streams, again_set.streams):
            for name, model in s1.primary.items():
                assert np.array_equal(model.coef, s2.primary[name].coef)

    def test_seed_changes_draws(self, masked_bmi):
        data, _ = masked_bmi
        col = data.meta.column_index()["bmi"]
        miss = data.missing_mask[:, col]
        _, first = fit_imputer(data, m=1, iterations=2, seed=5)
        _, second = fit_imputer(data, m=1, iterations=2, seed=6)
        assert not np.array_equal(first[0].X[miss, col], second[0].X[miss, col])


class TestChainStructure:
    def test_visit_order_fills_sparsest_first(self):
        records = _complete_records(seed=29)
        masked, _ = _mask_field(records, "bmi", 0.3, seed=41)
        masked, _ = _mask_field(masked, "scheduled_duration_min", 0.1, seed=42)
        data = encode(masked)
        model_set, _ = fit_imputer(data, m=1, iterations=1, seed=0)
        order = list(model_set.visit_order)
        assert order.index("scheduled_duration_min") < order.index("bmi")

    def test_categorical_chain_yields_valid_indicator_rows(self):
        records = _complete_records(seed=31)
        masked, _ = _mask_field(records, "asa", 0.25, seed=43)
        data = encode(masked)
        _, completed = fit_imputer(data, m=1, iterations=2, seed=3)
        asa_cols = [i for i, name in enumerate(data.meta.column_names())
                    if name.startswith("asa_")]
        block = completed[0].X[:, asa_cols]
        assert set(np.unique(block).tolist()) <= {0.0, 1.0}
        assert set(block.sum(axis=1).tolist()) <= {0.0, 1.0}

    def test_partially_missing_block_is_rejected(self, masked_bmi):
        data, _ = masked_bmi
        mask = data.missing_mask.copy()
        asa_cols = [i for i, name in enumerate(data.meta.column_names())
                    if name.startswith("asa_")]
        mask[0, asa_cols[0]] = True
        broken = type(data)(
            case_ids=data.case_ids, X=data.X, y=data.y,
            clusters=data.clusters, missing_mask=mask, meta=data.meta,
        )
        with pytest.raises(ImputationError, match="partially missing"):
            fit_imputer(broken, m=1, iterations=1, seed=0)

    def test_rejects_degenerate_settings(self, masked_bmi):
        data, _ = masked_bmi
        with pytest.raises(ImputationError):
            fit_imputer(data, m=0, iterations=1, seed=0)
        with pytest.raises(ImputationError):
            fit_imputer(data, m=1, iterations=0, seed=0)


@pytest.fixture(scope="module")
def holdout(masked_bmi):
    data, _ = masked_bmi
    records = _complete_records(seed=37, cells=(("Alpha", 2021, 300),))
    masked, _ = _mask_field(records, "bmi", 0.3, seed=44)
    return encode(masked, meta=data.meta)


class TestFrozenReuse:
    def test_apply_completes_without_refitting(self, fitted, holdout):
        model_set, _ = fitted
        done = apply_imputer(model_set, model_set.streams[0], holdout,
                             use_outcome=True, seed=9)
        assert np.isfinite(done.X).all()
        keep = ~holdout.missing_mask
        assert np.array_equal(done.X[keep], holdout.X[keep])

    def test_apply_is_deterministic(self, fitted, holdout):
        model_set, _ = fitted
        a = apply_imputer(model_set, model_set.streams[0], holdout,
                          use_outcome=True, seed=9)
        b = apply_imputer(model_set, model_set.streams[0], holdout,
                          use_outcome=True, seed=9)
        assert np.array_equal(a.X, b.X)

    def test_companion_path_needs_no_outcome(self, fitted, holdout):
        model_set, _ = fitted
        done = apply_imputer(model_set, model_set.streams[1], holdout,
                             use_outcome=False, seed=9)
        assert np.isfinite(done.X).all()

    def test_apply_rejects_other_encoding(self, fitted):
        model_set, _ = fitted
        records = _complete_records(seed=39, cells=(("Alpha", 2019, 200),))
        other = encode(records)
        with pytest.raises(SchemaMismatchError):
            apply_imputer(model_set, model_set.streams[0], other,
                          use_outcome=True, seed=0)

    def test_single_row_completion(self, masked_bmi, fitted):
        data, _ = masked_bmi
        model_set, _ = fitted
        col = data.meta.column_index()["bmi"]
        row = data.X[np.flatnonzero(~data.missing_mask[:, col])[0]].copy()
        row[col] = np.nan
        done = impute_single(model_set, model_set.streams[0], row, seed=2)
        assert np.isfinite(done).all()
        untouched = np.arange(len(row)) != col
        assert np.array_equal(done[untouched], row[untouched])
        again = impute_single(model_set, model_set.streams[0], row, seed=2)
        assert np.array_equal(done, again)

    def test_single_row_varies_with_request_token(self, masked_bmi, fitted):
        data, _ = masked_bmi
        model_set, _ = fitted
        col = data.meta.column_index()["bmi"]
        row = data.X[0].copy()
        row[col] = np.nan
        values = {
            impute_single(model_set, model_set.streams[0], row, seed=2,
                          request_token=t)[col]
            for t in range(10)
        }
        assert len(values) > 1
