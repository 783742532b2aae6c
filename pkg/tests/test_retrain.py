# tests/test_retrain.py

import os

import numpy as np
import pandas as pd
import pytest

from src.common.errors import ConfigError, SchemaDriftError
from src.core.ops import bce_loss
from src.data.schema import EncodedDataset
from src.data.synthetic import SyntheticSpec, generate_synthetic
from src.metrics.metrics import auc
from src.model.recommender import ModelConfig, RecommendationModel
from src.retrain.ledger import (
    LEDGER_COLUMNS,
    ResultsLedger,
    fields_from_bitmask,
    merge_ledgers,
    scatter_data,
    subset_bitmask,
)
from src.retrain.retrain_engine import RetrainConfig, RetrainReport, evaluate, resolve_retrain_fields, run_retrain


def _base(splits, hidden=(8, 4)):
    return ModelConfig(num_fields=splits.num_fields, field_cardinalities=splits.cardinalities,
                       embedding_dim=4, hidden_sizes=hidden, dropout=0.2)


def _fast_retrain(**overrides):
    settings = dict(batch_size=128, max_epochs=4, patience=2, learning_rate=0.01, seed=0)
    settings.update(overrides)
    return RetrainConfig(**settings)


def _random_split(rows=4000, fields=3, seed=0):
    generator = np.random.default_rng(seed)
    indices = generator.integers(0, 5, size=(rows, fields))
    labels = np.tile([0.0, 1.0], rows // 2)
    return EncodedDataset(indices=indices, labels=labels, cardinalities=(5,) * fields, name="test")


def test_random_model_scores_auc_one_half():
    split = _random_split(rows=20000)
    model = RecommendationModel(ModelConfig(num_fields=3, field_cardinalities=(5, 5, 5), embedding_dim=4), seed=0)
    result = evaluate(model, split)
    assert result.auc == pytest.approx(0.5, abs=0.02)


def test_logloss_is_the_clamped_bce_of_the_predictions():
    split = _random_split(rows=300)
    model = RecommendationModel(ModelConfig(num_fields=3, field_cardinalities=(5, 5, 5), embedding_dim=4), seed=1)
    result = evaluate(model, split, batch_size=64)
    predictions = model.predict(split.indices)
    assert result.logloss == bce_loss(predictions, split.labels)[0]
    assert result.auc == auc(predictions, split.labels)


def test_evaluation_ignores_row_order_and_threading():
    split = _random_split(rows=500, seed=3)
    model = RecommendationModel(ModelConfig(num_fields=3, field_cardinalities=(5, 5, 5), embedding_dim=4), seed=2)
    baseline = evaluate(model, split, batch_size=50)
    order = np.random.default_rng(0).permutation(len(split))
    shuffled = evaluate(model, split.take(order), batch_size=50)
    threaded = evaluate(model, split, batch_size=50, workers=4)
    assert shuffled.auc == pytest.approx(baseline.auc, abs=1e-12)
    assert shuffled.logloss == pytest.approx(baseline.logloss, abs=1e-12)
    assert (threaded.auc, threaded.logloss) == (baseline.auc, baseline.logloss)


def test_schema_mismatch_is_a_config_error():
    model = RecommendationModel(ModelConfig(num_fields=3, field_cardinalities=(5, 5, 6), embedding_dim=4))
    with pytest.raises(ConfigError):
        evaluate(model, _random_split(rows=10))


def test_separable_data_reaches_perfect_auc():
    spec = SyntheticSpec(num_fields=2, informative_fields=[0], cardinalities=[2, 3], label_noise=0.0, num_rows=2000, seed=0)
    splits = generate_synthetic(spec)
    report, _ = run_retrain([0], _base(splits), _fast_retrain(max_epochs=10), splits)
    assert report.test_auc == 1.0


def test_retrain_uses_only_the_selected_fields(planted_splits):
    report, engine = run_retrain([1, 3], _base(planted_splits), _fast_retrain(), planted_splits)
    assert report.selected == [1, 3]
    assert sorted(n for n in engine.model.params if n.startswith("embedding.")) == ["embedding.1", "embedding.3"]
    assert engine.model.params["mlp.0.weight"].shape[0] == 8
    assert 0.0 <= report.test_auc <= 1.0 and report.test_logloss >= 0.0
    assert 1 <= report.epochs_trained <= 4
    assert len(report.validation_logloss) == report.epochs_trained


def test_all_fields_retrain_matches_an_explicit_full_selection(planted_splits):
    everything, _ = run_retrain(list(range(5)), _base(planted_splits), _fast_retrain(), planted_splits)
    again, _ = run_retrain([4, 3, 2, 1, 0], _base(planted_splits), _fast_retrain(), planted_splits)
    assert (everything.test_auc, everything.test_logloss) == (again.test_auc, again.test_logloss)


def test_resolve_retrain_fields(fast_config):
    assert resolve_retrain_fields(fast_config, 5, [3, 1]) == [3, 1]
    assert resolve_retrain_fields(fast_config.with_updates(["retrain.fields=all"]), 5, None) == [0, 1, 2, 3, 4]
    assert resolve_retrain_fields(fast_config.with_updates(["retrain.fields=[2]"]), 5, None) == [2]
    with pytest.raises(ConfigError):
        resolve_retrain_fields(fast_config, 5, None)


def test_report_invariants():
    with pytest.raises(ValueError):
        RetrainReport(selected=[0], test_auc=1.2, test_logloss=0.1, epochs_trained=1, best_epoch=0,
                      train_seconds=0.0, inference_ms_per_batch=0.0)


# --- ledger ---

def _row(config_hash, k=2, kind="selection", auc_value=0.7):
    fields = list(range(k))
    return {
        "config_hash": config_hash, "seed": 1, "mode": "gumbel", "kind": kind, "k": k,
        "bitmask": subset_bitmask(fields), "selected": " ".join(map(str, fields)), "num_fields": 5,
        "test_auc": auc_value, "test_logloss": 0.5, "epochs_trained": 3, "train_seconds": 1.0,
        "infer_ms_per_batch": 0.1,
    }


def test_bitmask_helpers():
    assert subset_bitmask([0, 2]) == 5
    assert fields_from_bitmask(5) == [0, 2]


def test_ledger_appends_rows(tmp_path):
    ledger = ResultsLedger(str(tmp_path / "report.csv"))
    ledger.append(_row("a"))
    ledger.append(_row("b", k=3))
    frame = ledger.load()
    assert list(frame.columns) == LEDGER_COLUMNS
    assert list(frame["config_hash"]) == ["a", "b"]
    assert list(frame["selected"]) == ["0 1", "0 1 2"]


def test_merge_deduplicates_runs(tmp_path, caplog):
    first, second = tmp_path / "one.csv", tmp_path / "two.csv"
    ResultsLedger(str(first)).append(_row("a"))
    ResultsLedger(str(first)).append(_row("b"))
    ResultsLedger(str(second)).append(_row("b"))
    ResultsLedger(str(second)).append(_row("c", kind="all"))
    merged = merge_ledgers([str(first), str(second)])
    assert list(merged["config_hash"]) == ["a", "b", "c"]
    assert "duplicate" in caplog.text


def test_merge_of_nothing_is_an_empty_frame_with_header():
    merged = merge_ledgers([])
    assert merged.empty and list(merged.columns) == LEDGER_COLUMNS


def test_schema_drift_names_the_file(tmp_path):
    path = tmp_path / "odd.csv"
    pd.DataFrame({"config_hash": ["a"], "auc": [0.5]}).to_csv(path, index=False)
    with pytest.raises(SchemaDriftError, match="odd.csv"):
        merge_ledgers([str(path)])


def test_scatter_flags_selection_rows(tmp_path):
    merged = pd.DataFrame([_row("a"), _row("b", kind="all", k=5)])
    subsets = pd.DataFrame({"bitmask": [1, 3], "k": [1, 2], "fields": ["0", "0 1"], "auc": [0.6, 0.7],
                            "logloss": [0.6, 0.5], "seed": [1, 1], "seconds": [0.1, 0.1]})
    scatter = scatter_data(merged, subsets)
    assert len(scatter) == 4
    assert list(scatter["is_selection"]) == [False, False, True, False]


# --- scaled-down retraining experiments ---

@pytest.mark.slow
def test_informative_fields_match_all_fields():
    spec = SyntheticSpec(num_fields=10, informative_fields=[0, 1, 2, 3], cardinalities=10, label_noise=0.1, num_rows=20000, seed=0)
    splits = generate_synthetic(spec)
    config = _fast_retrain(max_epochs=10, batch_size=256, patience=3)
    informative, _ = run_retrain([0, 1, 2, 3], _base(splits, hidden=(16, 8)), config, splits)
    everything, _ = run_retrain(list(range(10)), _base(splits, hidden=(16, 8)), config, splits)
    assert informative.test_auc >= everything.test_auc - 0.005


@pytest.mark.slow
def test_half_the_fields_retrain_faster():
    spec = SyntheticSpec(num_fields=16, informative_fields=[0, 1, 2, 3], cardinalities=50, label_noise=0.1, num_rows=40000, seed=0)
    splits = generate_synthetic(spec)
    base = ModelConfig(num_fields=16, field_cardinalities=splits.cardinalities, embedding_dim=16, hidden_sizes=(16, 8))
    # fixed epochs: patience larger than the budget
    config = _fast_retrain(max_epochs=3, batch_size=256, patience=10)
    half, _ = run_retrain(list(range(8)), base, config, splits)
    full, _ = run_retrain(list(range(16)), base, config, splits)
    assert half.epochs_trained == full.epochs_trained == 3
    assert half.train_seconds < full.train_seconds
