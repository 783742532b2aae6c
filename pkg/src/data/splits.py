# src/data/splits.py

from typing import Iterator, List, Optional, Sequence

import numpy as np

from src.common.errors import ConfigError, ContractViolation
from src.core.rng import derive_generator
from src.data.schema import Batch, DatasetSplits, EncodedDataset, FieldSchema, Vocabulary

SPLIT_NAMES = ("train", "validation", "test")


def split_sizes(total: int, ratios: Sequence[float]) -> List[int]:
    """Largest-remainder allocation: every size is within one row of ratio * total."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {list(ratios)}")
    exact = [r * total for r in ratios]
    sizes = [int(np.floor(x)) for x in exact]
    remainder = total - sum(sizes)
    order = sorted(range(3), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in order[:remainder]:
        sizes[i] += 1
    return sizes


def assign_splits(total: int, ratios: Sequence[float], seed: int) -> np.ndarray:
    """Split id (0 train, 1 validation, 2 test) per row, a pure function of (total, ratios, seed)."""
    sizes = split_sizes(total, ratios)
    permutation = derive_generator(seed, "split").permutation(total)
    assignment = np.empty(total, dtype=np.int8)
    start = 0
    for split_id, size in enumerate(sizes):
        assignment[permutation[start:start + size]] = split_id
        start += size
    return assignment


def splits_from_assignment(
    dataset: EncodedDataset,
    assignment: np.ndarray,
    seed: int,
    schema: Optional[List[FieldSchema]] = None,
    vocabulary: Optional[Vocabulary] = None,
) -> DatasetSplits:
    if assignment.shape != (len(dataset),):
        raise ContractViolation("split assignment must have one entry per row")
    parts = [dataset.take(np.flatnonzero(assignment == i), name=SPLIT_NAMES[i]) for i in range(3)]
    return DatasetSplits(*parts, seed=seed, schema=list(schema or []), vocabulary=vocabulary)


def split_dataset(
    dataset: EncodedDataset,
    ratios: Sequence[float] = (0.8, 0.1, 0.1),
    seed: int = 0,
    schema: Optional[List[FieldSchema]] = None,
    vocabulary: Optional[Vocabulary] = None,
) -> DatasetSplits:
    """Uniform random row assignment into disjoint train/validation/test splits."""
    assignment = assign_splits(len(dataset), ratios, seed)
    return splits_from_assignment(dataset, assignment, seed, schema, vocabulary)


def make_batches(
    split: EncodedDataset,
    batch_size: int = 2048,
    shuffle: bool = True,
    seed: int = 0,
    epoch: int = 0,
) -> Iterator[Batch]:
    """
    One pass over `split`. The shuffle order depends only on (seed, epoch), so two
    epochs differ while a rerun reproduces both. The last batch may be short.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    total = len(split)
    if total == 0:
        return
    order = derive_generator(seed, "shuffle", epoch).permutation(total) if shuffle else np.arange(total)
    for start in range(0, total, batch_size):
        rows = order[start:start + batch_size]
        yield Batch(indices=split.indices[rows], labels=split.labels[rows], split=split.name)


def cycle_batches(split: EncodedDataset, batch_size: int, seed: int) -> Iterator[Batch]:
    """Endless reshuffled batches, independent of any other iterator over the same split."""
    if len(split) == 0:
        raise ConfigError(f"split '{split.name}' is empty; cannot draw batches from it")
    epoch = 0
    while True:
        yield from make_batches(split, batch_size, shuffle=True, seed=seed, epoch=epoch)
        epoch += 1
