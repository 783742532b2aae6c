# src/data/vocabulary.py

import logging
import math
from collections import Counter
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from src.common.errors import ContractViolation, ParseError
from src.data.schema import FieldKind, FieldSchema, RawRow, Vocabulary, validate_schema

MISSING_TOKEN = "NA"
NUMERIC_IDENTITY_LIMIT = 2  # values at or below this keep their own category

logger = logging.getLogger("Vocabulary")


def bucketize_numeric(value: Union[str, int, float, None], line_no: Optional[int] = None) -> str:
    """
    Maps a raw numeric value to a category token:
    missing -> "NA", v <= 2 -> str(v), v > 2 -> str(floor(ln(v)^2)).
    """
    if value is None:
        return MISSING_TOKEN
    if isinstance(value, str):
        text = value.strip()
        if text == "":
            return MISSING_TOKEN
        try:
            number: Union[int, float] = int(text)
        except ValueError:
            try:
                number = float(text)
            except ValueError:
                raise ParseError(f"numeric field holds non-numeric token '{value}'", line_no=line_no) from None
    else:
        number = value

    if isinstance(number, float):
        if math.isnan(number) or math.isinf(number):
            raise ParseError(f"numeric field holds non-finite value '{value}'", line_no=line_no)
        if number.is_integer():
            number = int(number)

    if number <= NUMERIC_IDENTITY_LIMIT:
        return str(number)
    return str(int(math.floor(math.log(number) ** 2)))


def prepare_tokens(tokens: Sequence[str], schema: Sequence[FieldSchema], line_no: Optional[int] = None) -> List[str]:
    """Applies the numeric bucketization to numeric fields; categorical tokens pass through."""
    if len(tokens) != len(schema):
        raise ParseError(f"expected {len(schema)} feature columns, found {len(tokens)}", line_no=line_no)
    return [
        bucketize_numeric(tok, line_no=line_no) if spec.kind == FieldKind.NUMERIC else tok
        for tok, spec in zip(tokens, schema)
    ]


def _row_tokens(row: Union[RawRow, Sequence[str]]) -> Sequence[str]:
    return row.tokens if isinstance(row, RawRow) else row


def build_vocabulary(
    rows: Iterable[Union[RawRow, Sequence[str]]],
    schema: Sequence[FieldSchema],
    min_frequency: int = 2,
) -> Vocabulary:
    """
    Counts tokens per field in one pass. Tokens seen at least `min_frequency` times
    (or the field's own cutoff) get indices 1.. ordered by descending count, then
    token; everything else shares the OOV index 0.
    """
    validate_schema(schema)
    if min_frequency < 1:
        raise ContractViolation(f"min_frequency must be >= 1, got {min_frequency}")

    counters = [Counter() for _ in schema]
    total = 0
    for position, row in enumerate(rows, start=1):
        line_no = row.line_no if isinstance(row, RawRow) and row.line_no is not None else position
        for counter, token in zip(counters, prepare_tokens(_row_tokens(row), schema, line_no=line_no)):
            counter[token] += 1
        total += 1

    token_maps = []
    for spec, counter in zip(schema, counters):
        cutoff = spec.min_frequency or min_frequency
        retained = sorted((tok for tok, c in counter.items() if c >= cutoff), key=lambda t: (-counter[t], t))
        token_maps.append({tok: i + 1 for i, tok in enumerate(retained)})

    vocab = Vocabulary(token_maps)
    logger.info(f"Built vocabulary over {total} rows; cardinalities {list(vocab.cardinalities)}")
    return vocab


def encode_row(
    tokens: Sequence[str],
    vocab: Vocabulary,
    schema: Optional[Sequence[FieldSchema]] = None,
    line_no: Optional[int] = None,
) -> np.ndarray:
    """Hot coordinate per field; unseen tokens map to 0. Pass `schema` to bucketize numeric fields."""
    if len(tokens) != vocab.num_fields:
        raise ParseError(f"expected {vocab.num_fields} feature columns, found {len(tokens)}", line_no=line_no)
    if schema is not None:
        tokens = prepare_tokens(tokens, schema, line_no=line_no)
    return np.array([vocab.lookup(n, tok) for n, tok in enumerate(tokens)], dtype=np.int64)


def encode_rows(rows: Sequence[RawRow], vocab: Vocabulary, schema: Sequence[FieldSchema]) -> np.ndarray:
    indices = np.zeros((len(rows), vocab.num_fields), dtype=np.int64)
    for r, row in enumerate(rows):
        indices[r] = encode_row(row.tokens, vocab, schema, line_no=row.line_no)
    return indices
