# src/data/preprocessor.py

import logging
from typing import List, Sequence, Tuple

import numpy as np

from src.common.errors import ConfigError
from src.common.settings import RunConfig
from src.data.dataset_file import load_dataset
from src.data.readers import read_delimited, read_movielens
from src.data.schema import DatasetSplits, EncodedDataset, FieldSchema, RawRow, validate_schema
from src.data.splits import assign_splits, splits_from_assignment
from src.data.synthetic import SyntheticSpec, generate_synthetic
from src.data.vocabulary import build_vocabulary, encode_rows


class DatasetPreparer:
    """
    Turns the `data` section of a RunConfig into train/validation/test splits:
    read raw rows -> assign splits -> build the vocabulary on training rows ->
    encode every row.
    """

    def __init__(self, config: RunConfig):
        self.logger = logging.getLogger("DatasetPreparer")
        self.config = config
        self.data = config.data

    def synthetic_spec(self) -> SyntheticSpec:
        s = self.config.synthetic
        return SyntheticSpec(
            num_fields=s.num_fields,
            informative_fields=s.informative_fields,
            cardinalities=s.cardinality,
            label_noise=s.label_noise,
            num_rows=s.num_rows,
            seed=self.config.seed,
            split_ratios=self.data.split_ratios,
        )

    def delimited_schema(self) -> List[FieldSchema]:
        schema = [
            FieldSchema(field_id=i, name=f.name, kind=f.kind, min_frequency=f.min_frequency)
            for i, f in enumerate(self.data.fields)
        ]
        validate_schema(schema)
        return schema

    def read_raw(self) -> Tuple[List[FieldSchema], List[RawRow]]:
        if self.data.source == "delimited":
            schema = self.delimited_schema()
            rows = read_delimited(
                self.data.path,
                schema,
                label_column=self.data.label_column,
                delimiter=self.data.delimiter,
                has_header=self.data.has_header,
            )
            return schema, rows
        if self.data.source == "movielens":
            return read_movielens(self.data.path)
        raise ConfigError(f"data.source '{self.data.source}' has no raw rows to read")

    def encode(self, schema: Sequence[FieldSchema], rows: List[RawRow]) -> DatasetSplits:
        if not rows:
            raise ConfigError("Input contains no rows.")
        assignment = assign_splits(len(rows), self.data.split_ratios, self.config.seed)
        train_rows = [row for row, split_id in zip(rows, assignment) if split_id == 0]
        vocab = build_vocabulary(train_rows, schema, min_frequency=self.data.min_frequency)

        dataset = EncodedDataset(
            indices=encode_rows(rows, vocab, schema),
            labels=np.array([row.label for row in rows], dtype=np.float64),
            cardinalities=vocab.cardinalities,
        )
        self.logger.info(
            f"Encoded {len(rows)} rows over {len(schema)} fields "
            f"(positive rate {dataset.labels.mean():.4f})"
        )
        return splits_from_assignment(dataset, assignment, self.config.seed, list(schema), vocab)

    def load_splits(self) -> DatasetSplits:
        source = self.data.source
        self.logger.info(f"Loading dataset from source '{source}'...")
        if source == "synthetic":
            return generate_synthetic(self.synthetic_spec())
        if source == "encoded":
            return load_dataset(self.data.path)
        schema, rows = self.read_raw()
        return self.encode(schema, rows)
