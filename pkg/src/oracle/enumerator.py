# src/oracle/enumerator.py

"""
Exhaustive subset oracle: train and evaluate a reduced-budget model for every
field subset (or every K-subset), then locate a selection's AUC within its
K-stratum.
"""

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, replace
from itertools import combinations
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from src.common.artifacts import write_json
from src.common.errors import ConfigError
from src.common.settings import RunConfig
from src.data.schema import DatasetSplits
from src.model.recommender import ModelConfig
from src.retrain.ledger import fields_from_bitmask, format_fields, read_ledger, subset_bitmask
from src.retrain.retrain_engine import RetrainConfig, run_retrain

SUBSET_COLUMNS = ["bitmask", "k", "fields", "auc", "logloss", "seed", "seconds"]
QUANTILES = (0.1, 0.5, 0.9)


def candidate_subsets(num_fields: int, k_filter: Optional[int] = None) -> List[Tuple[int, ...]]:
    """All non-empty subsets ordered by (K, lexicographic), or only the K-subsets."""
    if k_filter is not None:
        if k_filter < 1:
            raise ConfigError("the empty subset has no fields to train on")
        if k_filter > num_fields:
            raise ConfigError(f"K filter {k_filter} exceeds the {num_fields} available fields")
        sizes = [k_filter]
    else:
        sizes = list(range(1, num_fields + 1))
    return [subset for k in sizes for subset in combinations(range(num_fields), k)]


@dataclass
class SubsetReport:
    rows: pd.DataFrame
    k_filter: Optional[int] = None

    def __len__(self) -> int:
        return len(self.rows)

    def stratum(self, k: int) -> pd.DataFrame:
        return self.rows[self.rows["k"] == k]

    def summary(self) -> Dict[str, Any]:
        """Per-K distribution of test AUC: count, min, quantiles, max."""
        strata = {}
        for k, group in self.rows.groupby("k"):
            aucs = group["auc"].to_numpy()
            best = group.loc[group["auc"].idxmax()]
            strata[str(int(k))] = {
                "count": int(len(group)),
                "min": float(aucs.min()),
                **{f"q{int(q * 100)}": float(np.quantile(aucs, q)) for q in QUANTILES},
                "max": float(aucs.max()),
                "best_fields": fields_from_bitmask(int(best["bitmask"])),
            }
        return {"k_filter": self.k_filter, "subsets": int(len(self.rows)), "strata": strata}

    def to_csv(self, path: str) -> None:
        self.rows.to_csv(path, index=False)

    def write_summary(self, path: str, extra: Optional[Dict[str, Any]] = None) -> None:
        write_json(path, {**self.summary(), **(extra or {})})

    @classmethod
    def from_csv(cls, path: str) -> "SubsetReport":
        rows = read_ledger(path, expected=SUBSET_COLUMNS)
        ks = sorted(set(rows["k"]))
        return cls(rows=rows, k_filter=ks[0] if len(ks) == 1 else None)


def append_subset_row(path: str, row: Dict[str, Any]) -> None:
    """Appends one finished subset to a CSV in completion order; the header goes in with the first row."""
    pd.DataFrame([row], columns=SUBSET_COLUMNS).to_csv(path, mode="a", header=not os.path.exists(path), index=False)


@dataclass(frozen=True)
class SubsetTask:
    base_config: ModelConfig
    retrain_config: RetrainConfig


# Per-process state set by the pool initializer, so the splits are pickled once per worker.
_worker_state: Dict[str, Any] = {}


def _init_worker(splits: DatasetSplits, task: SubsetTask) -> None:
    logging.getLogger().setLevel(logging.WARNING)
    _worker_state["splits"] = splits
    _worker_state["task"] = task


def _evaluate_subset(subset: Tuple[int, ...]) -> Dict[str, Any]:
    splits: DatasetSplits = _worker_state["splits"]
    task: SubsetTask = _worker_state["task"]
    return train_subset(subset, splits, task)


def train_subset(subset: Sequence[int], splits: DatasetSplits, task: SubsetTask) -> Dict[str, Any]:
    started = time.perf_counter()
    report, _ = run_retrain(subset, task.base_config, task.retrain_config, splits)
    return {
        "bitmask": subset_bitmask(subset),
        "k": len(subset),
        "fields": format_fields(subset),
        "auc": report.test_auc,
        "logloss": report.test_logloss,
        "seed": task.retrain_config.seed,
        "seconds": time.perf_counter() - started,
    }


def enumerate_subsets(
    splits: DatasetSplits,
    base_config: ModelConfig,
    retrain_config: RetrainConfig,
    k_filter: Optional[int] = None,
    max_fields: int = 16,
    allow_over_cap: bool = False,
    workers: int = 1,
    show_progress: bool = False,
    on_result: Optional[Callable[[Dict[str, Any]], None]] = None,
) -> SubsetReport:
    """
    Trains every requested subset with the same seed and budget. Rows are
    merged in subset order whatever order the workers finish in.
    """
    logger = logging.getLogger("SubsetEnumerator")
    n = splits.num_fields
    if n > max_fields and not allow_over_cap:
        raise ConfigError(
            f"{n} fields exceed the enumeration cap of {max_fields} "
            f"({2 ** n - 1} subsets); set oracle.allow_over_cap=true to run anyway"
        )
    subsets = candidate_subsets(n, k_filter)
    task = SubsetTask(base_config=base_config, retrain_config=retrain_config)
    logger.info(f"Enumerating {len(subsets)} subsets of {n} fields with {workers} worker(s)")

    results: Dict[Tuple[int, ...], Dict[str, Any]] = {}
    progress = tqdm(total=len(subsets), desc="Subsets", disable=not show_progress)
    if workers <= 1:
        for subset in subsets:
            results[subset] = train_subset(subset, splits, task)
            if on_result is not None:
                on_result(results[subset])
            progress.update(1)
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_init_worker, initargs=(splits, task)) as pool:
            futures = {pool.submit(_evaluate_subset, subset): subset for subset in subsets}
            for future in as_completed(futures):
                results[futures[future]] = future.result()
                if on_result is not None:
                    on_result(results[futures[future]])
                progress.update(1)
    progress.close()

    rows = pd.DataFrame([results[subset] for subset in subsets], columns=SUBSET_COLUMNS)
    return SubsetReport(rows=rows, k_filter=k_filter)


def enumerate_from_config(
    config: RunConfig,
    splits: DatasetSplits,
    on_result: Optional[Callable[[Dict[str, Any]], None]] = None,
) -> SubsetReport:
    oracle = config.oracle
    base = ModelConfig.for_dataset(splits.cardinalities, config.model)
    base = base.model_copy(update={"hidden_sizes": tuple(oracle.hidden_sizes)})
    retrain_config = replace(RetrainConfig.from_run_config(config), max_epochs=oracle.max_epochs, eval_workers=1)
    return enumerate_subsets(
        splits,
        ModelConfig.model_validate(base.model_dump()),
        retrain_config,
        k_filter=oracle.k_filter,
        max_fields=oracle.max_fields,
        allow_over_cap=oracle.allow_over_cap,
        workers=oracle.workers,
        show_progress=config.project.show_progress,
        on_result=on_result,
    )


def rank_selection(report: SubsetReport, selected: Sequence[int], selection_auc: Optional[float] = None) -> float:
    """
    Fraction of same-K subsets whose AUC is strictly higher than the selection's;
    0.0 means the selection is the best of its stratum. Without `selection_auc`
    the selection's own enumerated row is used.
    """
    k = len(selected)
    stratum = report.stratum(k)
    if stratum.empty:
        raise ConfigError(f"the subset report has no K={k} stratum")
    if selection_auc is None:
        row = stratum[stratum["bitmask"] == subset_bitmask(selected)]
        if row.empty:
            raise ConfigError(f"selection {list(selected)} is not in the subset report; pass its AUC explicitly")
        selection_auc = float(row["auc"].iloc[0])
    return float((stratum["auc"].to_numpy() > selection_auc).sum() / len(stratum))

