# src/data/schema.py

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.common.errors import ConfigError, ContractViolation

OOV_INDEX = 0


class FieldKind(str, Enum):
    CATEGORICAL = "categorical"
    NUMERIC = "numeric"


class FieldSchema(BaseModel):
    """One input feature field."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    field_id: int = Field(..., ge=0)
    name: str
    kind: FieldKind = FieldKind.CATEGORICAL
    min_frequency: Optional[int] = Field(None, ge=1, description="Overrides the global vocabulary cutoff.")


def validate_schema(schema: Sequence[FieldSchema]) -> None:
    """field_ids must be exactly 0..N-1, in order, with no duplicates."""
    if not schema:
        raise ConfigError("Schema must contain at least one field.")
    ids = [f.field_id for f in schema]
    if ids != list(range(len(schema))):
        raise ConfigError(f"Schema field_ids must be contiguous 0..{len(schema) - 1} in order, got {ids}")
    names = [f.name for f in schema]
    if len(set(names)) != len(names):
        raise ConfigError(f"Schema field names must be unique, got {names}")


def schema_from_names(names: Sequence[str], kinds: Optional[Sequence[str]] = None) -> List[FieldSchema]:
    kinds = kinds or ["categorical"] * len(names)
    return [FieldSchema(field_id=i, name=n, kind=FieldKind(k)) for i, (n, k) in enumerate(zip(names, kinds))]


class RawRow(NamedTuple):
    """One raw example: feature tokens in schema order plus its 0/1 label."""

    tokens: Tuple[str, ...]
    label: int = 0
    line_no: Optional[int] = None


@dataclass
class Vocabulary:
    """Per-field token -> index maps. Index 0 is the OOV bucket of every field."""

    token_maps: List[Dict[str, int]]

    @property
    def num_fields(self) -> int:
        return len(self.token_maps)

    @property
    def cardinalities(self) -> Tuple[int, ...]:
        return tuple(1 + len(m) for m in self.token_maps)

    def lookup(self, field_id: int, token: str) -> int:
        return self.token_maps[field_id].get(token, OOV_INDEX)

    def to_metadata(self) -> List[List[str]]:
        """Tokens per field ordered by index (position i holds the token of index i + 1)."""
        out = []
        for mapping in self.token_maps:
            ordered = [""] * len(mapping)
            for token, index in mapping.items():
                ordered[index - 1] = token
            out.append(ordered)
        return out

    @classmethod
    def from_metadata(cls, tokens_per_field: List[List[str]]) -> "Vocabulary":
        return cls([{tok: i + 1 for i, tok in enumerate(tokens)} for tokens in tokens_per_field])


@dataclass
class EncodedDataset:
    """
    Encoded rows: `indices[r, n]` is the hot coordinate of field n for row r.
    Arrays are made read-only so the dataset can be shared between readers.
    """

    indices: np.ndarray
    labels: np.ndarray
    cardinalities: Tuple[int, ...]
    name: str = "all"

    def __post_init__(self):
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.float64)
        if self.indices.ndim != 2 or self.indices.shape[1] != len(self.cardinalities):
            raise ContractViolation(
                f"indices must have shape (rows, {len(self.cardinalities)}), got {self.indices.shape}"
            )
        if self.labels.shape != (self.indices.shape[0],):
            raise ContractViolation(f"labels must have shape ({self.indices.shape[0]},), got {self.labels.shape}")
        if self.indices.size:
            bounds = np.asarray(self.cardinalities, dtype=np.int64)
            if np.any(self.indices < 0) or np.any(self.indices >= bounds):
                raise ContractViolation("encoded index outside [0, D_n) for some field")
        if self.labels.size and not np.all((self.labels == 0) | (self.labels == 1)):
            raise ContractViolation("labels must be exactly 0 or 1")
        self.indices.setflags(write=False)
        self.labels.setflags(write=False)

    def __len__(self) -> int:
        return int(self.indices.shape[0])

    @property
    def num_fields(self) -> int:
        return len(self.cardinalities)

    def take(self, rows: np.ndarray, name: Optional[str] = None) -> "EncodedDataset":
        return EncodedDataset(
            indices=self.indices[rows],
            labels=self.labels[rows],
            cardinalities=self.cardinalities,
            name=name or self.name,
        )


@dataclass(frozen=True)
class Batch:
    indices: np.ndarray
    labels: np.ndarray
    split: str

    def __len__(self) -> int:
        return int(self.indices.shape[0])


@dataclass
class DatasetSplits:
    train: EncodedDataset
    validation: EncodedDataset
    test: EncodedDataset
    seed: int
    schema: List[FieldSchema] = field(default_factory=list)
    vocabulary: Optional[Vocabulary] = None

    @property
    def cardinalities(self) -> Tuple[int, ...]:
        return self.train.cardinalities

    @property
    def num_fields(self) -> int:
        return self.train.num_fields

    def field_names(self) -> List[str]:
        if self.schema:
            return [f.name for f in self.schema]
        return [f"field_{n}" for n in range(self.num_fields)]
