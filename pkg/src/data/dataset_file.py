# src/data/dataset_file.py

"""
Encoded dataset file (*.afd): the shared binary container with kind "dataset".

Header metadata:
    dataset_version  int, currently 1
    schema           [{"field_id", "name", "kind", "min_frequency"}, ...]
    vocabulary       per field, the retained tokens ordered by index (token i -> index i + 1)
    cardinalities    D_n per field (1 + retained tokens)
    seed             split seed
    config_hash, source   provenance of the run that wrote the file
Arrays:
    indices  int64 (rows, N)  hot coordinate per field
    labels   int8  (rows,)    0/1
    split    int8  (rows,)    0 train, 1 validation, 2 test
"""

from typing import Any, Dict, Optional

import numpy as np

from src.common.binary_format import read_container, write_container
from src.common.errors import ContractViolation
from src.data.schema import DatasetSplits, EncodedDataset, FieldSchema, Vocabulary
from src.data.splits import splits_from_assignment

DATASET_KIND = "dataset"
DATASET_VERSION = 1


def save_dataset(path: str, splits: DatasetSplits, provenance: Optional[Dict[str, Any]] = None) -> None:
    parts = [splits.train, splits.validation, splits.test]
    indices = np.concatenate([p.indices for p in parts], axis=0)
    labels = np.concatenate([p.labels for p in parts]).astype(np.int8)
    assignment = np.concatenate([np.full(len(p), i, dtype=np.int8) for i, p in enumerate(parts)])

    metadata = {
        "dataset_version": DATASET_VERSION,
        "schema": [f.model_dump(mode="json") for f in splits.schema],
        "vocabulary": splits.vocabulary.to_metadata() if splits.vocabulary is not None else None,
        "cardinalities": list(splits.cardinalities),
        "seed": splits.seed,
        **(provenance or {}),
    }
    write_container(path, DATASET_KIND, metadata, {"indices": indices, "labels": labels, "split": assignment})


def load_dataset(path: str) -> DatasetSplits:
    metadata, arrays = read_container(path, expected_kind=DATASET_KIND)
    if metadata.get("dataset_version") != DATASET_VERSION:
        raise ContractViolation(f"Unsupported dataset version {metadata.get('dataset_version')} in '{path}'")
    dataset = EncodedDataset(
        indices=arrays["indices"],
        labels=arrays["labels"].astype(np.float64),
        cardinalities=tuple(metadata["cardinalities"]),
    )
    schema = [FieldSchema(**f) for f in metadata.get("schema") or []]
    vocab_tokens = metadata.get("vocabulary")
    vocabulary = Vocabulary.from_metadata(vocab_tokens) if vocab_tokens is not None else None
    return splits_from_assignment(dataset, arrays["split"], metadata["seed"], schema, vocabulary)
