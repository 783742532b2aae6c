# src/pipeline/pipeline_service.py

import logging
import os
from functools import partial
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from src.common.artifacts import read_json, write_json
from src.common.errors import ConfigError
from src.common.settings import RunConfig
from src.data.dataset_file import load_dataset, save_dataset
from src.data.preprocessor import DatasetPreparer
from src.data.schema import DatasetSplits
from src.model.recommender import ModelConfig, RecommendationModel
from src.oracle.enumerator import SubsetReport, append_subset_row, enumerate_from_config, rank_selection
from src.retrain.ledger import ResultsLedger, fields_from_bitmask, make_ledger_row, merge_ledgers, scatter_data
from src.retrain.retrain_engine import RetrainConfig, RetrainReport, evaluate, resolve_retrain_fields, run_retrain
from src.search.search_engine import SearchResult, search_from_config

DATASET_FILE = "dataset.afd"
SELECTION_FILE = "selection.json"
MODEL_FILE = "model.ckpt"
RETRAIN_REPORT_FILE = "retrain_report.json"
LEDGER_FILE = "report.csv"
EVALUATION_FILE = "evaluation.json"
SUBSETS_FILE = "subsets.csv"
SUBSETS_SUMMARY_FILE = "subsets_summary.json"


class PipelineService:
    """
    Runs the stages of one experiment against a single output directory:
    prepare -> search -> retrain -> evaluate, plus the subset oracle.
    Later stages pick up what earlier ones wrote there.
    """

    def __init__(self, config: RunConfig, out_dir: Optional[str] = None):
        self.logger = logging.getLogger("PipelineService")
        self.config = config
        self.out_dir = out_dir or config.project.output_dir
        self.config_hash = config.config_hash()
        self._splits: Optional[DatasetSplits] = None
        os.makedirs(self.out_dir, exist_ok=True)

    def path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def _stamp(self) -> Dict[str, Any]:
        return {"config_hash": self.config_hash, "seed": self.config.seed}

    # --- data ---

    @property
    def splits(self) -> DatasetSplits:
        if self._splits is None:
            cached = self.path(DATASET_FILE)
            if self.config.data.source != "encoded" and os.path.exists(cached):
                self.logger.info(f"Reusing prepared dataset '{cached}'")
                self._splits = load_dataset(cached)
            else:
                self._splits = DatasetPreparer(self.config).load_splits()
            self.logger.info(
                f"Splits: {len(self._splits.train)} train / {len(self._splits.validation)} validation / "
                f"{len(self._splits.test)} test rows over {self._splits.num_fields} fields"
            )
        return self._splits

    def prepare(self) -> str:
        """Reads and encodes the configured source and writes dataset.afd."""
        splits = DatasetPreparer(self.config).load_splits()
        target = self.path(DATASET_FILE)
        save_dataset(target, splits, provenance={**self._stamp(), "source": self.config.data.source})
        self._splits = splits
        self.logger.info(f"Dataset written to {target}")
        return target

    # --- stages ---

    def search(self) -> SearchResult:
        return search_from_config(self.config, self.splits, self.out_dir)

    def load_selection(self) -> Optional[List[int]]:
        path = self.path(SELECTION_FILE)
        if not os.path.exists(path):
            return None
        return list(read_json(path)["selected"])

    def retrain(self, selection: Optional[Sequence[int]] = None) -> RetrainReport:
        """Retrains on the chosen fields, writes model.ckpt and the report, appends a ledger row."""
        splits = self.splits
        if selection is None:
            selection = self.load_selection()
        fields = resolve_retrain_fields(self.config, splits.num_fields, selection)
        if not fields:
            raise ConfigError("the selection is empty; there are no fields to retrain on")
        base = ModelConfig.for_dataset(splits.cardinalities, self.config.model)
        report, engine = run_retrain(fields, base, RetrainConfig.from_run_config(self.config), splits)

        names = splits.field_names()
        engine.model.save(
            self.path(MODEL_FILE),
            optimizer=engine.optimizer,
            metadata={**self._stamp(), "selected": fields, "selected_names": [names[n] for n in fields]},
            rng=engine.rng,
        )
        payload = {**report.to_dict(), **self._stamp(), "selected_names": [names[n] for n in fields]}
        write_json(self.path(RETRAIN_REPORT_FILE), payload)
        ResultsLedger(self.path(LEDGER_FILE)).append(
            make_ledger_row(
                payload,
                self.config_hash,
                self.config.seed,
                mode=self.config.controller.mode.value,
                kind=self._retrain_kind(),
                num_fields=splits.num_fields,
            )
        )
        return report

    def _retrain_kind(self) -> str:
        choice = self.config.retrain.fields
        return choice if isinstance(choice, str) else "custom"

    def evaluate(self, checkpoint: Optional[str] = None, split: str = "test") -> Dict[str, Any]:
        """Scores a saved model on one split; needs nothing but the checkpoint and the data."""
        checkpoint = checkpoint or self.path(MODEL_FILE)
        if not os.path.exists(checkpoint):
            raise ConfigError(f"model checkpoint '{checkpoint}' not found; run `retrain` first")
        model, metadata = RecommendationModel.load(checkpoint)
        data = getattr(self.splits, split)
        result = evaluate(model, data, self.config.retrain.batch_size, self.config.retrain.eval_workers)
        payload = {
            **self._stamp(),
            "checkpoint_config_hash": metadata.get("config_hash"),
            "split": split,
            "selected": list(model.config.active_fields),
            "auc": result.auc,
            "logloss": result.logloss,
            "rows": result.rows,
            "inference_ms_per_batch": result.ms_per_batch,
        }
        write_json(self.path(EVALUATION_FILE), payload)
        return payload

    def enumerate(self) -> Tuple[SubsetReport, Optional[float]]:
        """Runs the subset oracle; returns the report and the saved selection's percentile if any."""
        target = self.path(SUBSETS_FILE)
        if os.path.exists(target):
            os.remove(target)
        # rows land in completion order while running; the finished file is rewritten in subset order
        report = enumerate_from_config(self.config, self.splits, on_result=partial(append_subset_row, target))
        report.to_csv(target)
        percentile = None
        selection = self.load_selection()
        if selection and len(report.stratum(len(selection))):
            percentile = rank_selection(report, selection)
            self.logger.info(f"Selection {selection} percentile within K={len(selection)}: {percentile:.4f}")
        report.write_summary(self.path(SUBSETS_SUMMARY_FILE), {**self._stamp(), "selection_percentile": percentile})
        return report, percentile

    def record_empty_selection(self) -> None:
        """Ledger row for a run whose selection kept no field; metrics stay blank."""
        blank = {"selected": [], "test_auc": None, "test_logloss": None, "epochs_trained": 0,
                 "train_seconds": 0.0, "inference_ms_per_batch": None}
        ResultsLedger(self.path(LEDGER_FILE)).append(
            make_ledger_row(blank, self.config_hash, self.config.seed, mode=self.config.controller.mode.value,
                            kind=self._retrain_kind(), num_fields=self.splits.num_fields)
        )

    def run_pipeline(self) -> Dict[str, Any]:
        """
        search -> retrain -> evaluate in one go. A threshold selection that keeps
        no field ends the run after the search with a blank ledger row.
        """
        result = self.search()
        if not resolve_retrain_fields(self.config, self.splits.num_fields, result.selected):
            self.logger.warning("Degenerate selection: no field was kept; skipping retrain and evaluate")
            self.record_empty_selection()
            return {"selected": [], "retrain": None, "evaluation": None}
        report = self.retrain(result.selected)
        evaluation = self.evaluate()
        return {"selected": result.selected, "retrain": report.to_dict(), "evaluation": evaluation}


def build_report(ledgers: Sequence[str], subsets_path: Optional[str], out_dir: str) -> Tuple[pd.DataFrame, pd.DataFrame, List[Dict[str, Any]]]:
    """Merges ledgers into merged_report.csv, writes scatter.csv, and ranks every selection row."""
    merged = merge_ledgers(ledgers)
    subsets = SubsetReport.from_csv(subsets_path) if subsets_path else None
    scatter = scatter_data(merged, subsets.rows if subsets is not None else None)
    os.makedirs(out_dir, exist_ok=True)
    merged.to_csv(os.path.join(out_dir, "merged_report.csv"), index=False)
    scatter.to_csv(os.path.join(out_dir, "scatter.csv"), index=False)

    rankings = []
    if subsets is not None:
        for row in merged[merged["kind"] == "selection"].itertuples(index=False):
            fields = fields_from_bitmask(int(row.bitmask))
            if subsets.stratum(len(fields)).empty:
                continue
            try:
                percentile = rank_selection(subsets, fields)
            except ConfigError:
                percentile = rank_selection(subsets, fields, selection_auc=float(row.test_auc))
            rankings.append({"config_hash": row.config_hash, "k": len(fields), "fields": fields, "percentile": percentile})
    return merged, scatter, rankings
