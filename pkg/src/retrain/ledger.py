# src/retrain/ledger.py

"""
CSV results ledger: one row per retrain run, appended across runs so K sweeps
and baselines can be compared and merged later.
"""

import logging
import os
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import pandas as pd

from src.common.errors import SchemaDriftError

LEDGER_COLUMNS = [
    "config_hash",
    "seed",
    "mode",
    "kind",
    "k",
    "bitmask",
    "selected",
    "num_fields",
    "test_auc",
    "test_logloss",
    "epochs_trained",
    "train_seconds",
    "infer_ms_per_batch",
]

SCATTER_COLUMNS = ["k", "auc", "logloss", "bitmask", "source", "is_selection", "config_hash"]


def subset_bitmask(fields: Iterable[int]) -> int:
    mask = 0
    for n in fields:
        mask |= 1 << int(n)
    return mask


def fields_from_bitmask(mask: int) -> List[int]:
    return [n for n in range(int(mask).bit_length()) if (int(mask) >> n) & 1]


def format_fields(fields: Sequence[int]) -> str:
    return " ".join(str(int(n)) for n in fields)


def make_ledger_row(
    report: Mapping[str, Any],
    config_hash: str,
    seed: int,
    mode: str,
    kind: str,
    num_fields: int,
) -> Dict[str, Any]:
    selected = list(report["selected"])
    return {
        "config_hash": config_hash,
        "seed": seed,
        "mode": mode,
        "kind": kind,
        "k": len(selected),
        "bitmask": subset_bitmask(selected),
        "selected": format_fields(selected),
        "num_fields": num_fields,
        "test_auc": report["test_auc"],
        "test_logloss": report["test_logloss"],
        "epochs_trained": report["epochs_trained"],
        "train_seconds": report["train_seconds"],
        "infer_ms_per_batch": report["inference_ms_per_batch"],
    }


def _check_columns(frame: pd.DataFrame, path: str, expected: Sequence[str]) -> None:
    missing = [c for c in expected if c not in frame.columns]
    extra = [c for c in frame.columns if c not in expected]
    if missing or extra:
        raise SchemaDriftError(path, f"missing columns {missing}, unexpected columns {extra}")


def read_ledger(path: str, expected: Sequence[str] = LEDGER_COLUMNS) -> pd.DataFrame:
    try:
        frame = pd.read_csv(path, dtype={"config_hash": str, "selected": str, "fields": str})
    except pd.errors.EmptyDataError:
        raise SchemaDriftError(path, "file is empty (no header)") from None
    except pd.errors.ParserError as e:
        raise SchemaDriftError(path, f"unreadable CSV: {e}") from e
    _check_columns(frame, path, expected)
    return frame[list(expected)]


class ResultsLedger:
    """Append-only CSV of retrain results."""

    def __init__(self, path: str):
        self.logger = logging.getLogger("ResultsLedger")
        self.path = path

    def append(self, row: Mapping[str, Any]) -> None:
        new = pd.DataFrame([{c: row[c] for c in LEDGER_COLUMNS}], columns=LEDGER_COLUMNS)
        directory = os.path.dirname(self.path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        if os.path.exists(self.path):
            read_ledger(self.path)
            new.to_csv(self.path, mode="a", header=False, index=False)
        else:
            new.to_csv(self.path, index=False)
        self.logger.info(f"Appended run {row['config_hash']} (K={row['k']}) to {self.path}")

    def load(self) -> pd.DataFrame:
        if not os.path.exists(self.path):
            return pd.DataFrame(columns=LEDGER_COLUMNS)
        return read_ledger(self.path)


def merge_ledgers(paths: Sequence[str]) -> pd.DataFrame:
    """
    One row per unique run across all ledgers. Rows sharing a config hash and
    seed are duplicates of the same run; the first one is kept.
    """
    logger = logging.getLogger("ResultsLedger")
    frames = [read_ledger(path) for path in paths]
    if not frames:
        return pd.DataFrame(columns=LEDGER_COLUMNS)
    merged = pd.concat(frames, ignore_index=True)
    duplicated = merged.duplicated(subset=["config_hash", "seed"], keep="first")
    if duplicated.any():
        hashes = sorted(set(merged.loc[duplicated, "config_hash"]))
        logger.warning(f"Dropping {int(duplicated.sum())} duplicate run row(s) for config hash(es) {hashes}")
    return merged.loc[~duplicated].reset_index(drop=True)


def scatter_data(merged: pd.DataFrame, subsets: Optional[pd.DataFrame] = None) -> pd.DataFrame:
    """K vs AUC points: every enumerated subset plus every ledger run, selection rows flagged."""
    parts = []
    if subsets is not None and len(subsets):
        parts.append(pd.DataFrame({
            "k": subsets["k"],
            "auc": subsets["auc"],
            "logloss": subsets["logloss"],
            "bitmask": subsets["bitmask"],
            "source": "subset",
            "is_selection": False,
            "config_hash": "",
        }))
    if len(merged):
        parts.append(pd.DataFrame({
            "k": merged["k"],
            "auc": merged["test_auc"],
            "logloss": merged["test_logloss"],
            "bitmask": merged["bitmask"],
            "source": merged["kind"],
            "is_selection": merged["kind"] == "selection",
            "config_hash": merged["config_hash"],
        }))
    if not parts:
        return pd.DataFrame(columns=SCATTER_COLUMNS)
    return pd.concat(parts, ignore_index=True)[SCATTER_COLUMNS]
