# src/data/readers.py

import logging
import os
from typing import Dict, List, Sequence, Tuple

from src.common.errors import ConfigError, ParseError
from src.data.schema import FieldSchema, RawRow, schema_from_names

logger = logging.getLogger("Readers")

MOVIELENS_SEPARATOR = "::"
MOVIELENS_ENCODING = "latin-1"
MOVIELENS_FIELDS = ["user_id", "movie_id", "gender", "age", "occupation", "zip_code", "title", "genres"]
MOVIELENS_LIKE_THRESHOLD = 3  # ratings above this are positive


def _parse_label(token: str, line_no: int, path: str) -> int:
    try:
        label = int(float(token.strip()))
    except (ValueError, OverflowError):
        raise ParseError(f"label '{token}' is not numeric", line_no=line_no, path=path) from None
    if label not in (0, 1) or float(token.strip()) != label:
        raise ParseError(f"label '{token}' must be 0 or 1", line_no=line_no, path=path)
    return label


def read_delimited(
    path: str,
    schema: Sequence[FieldSchema],
    label_column: int = 0,
    delimiter: str = "\t",
    has_header: bool = False,
) -> List[RawRow]:
    """
    Reads one example per line. The label sits in `label_column`; the remaining
    columns, in order, are the schema's feature fields.
    """
    expected = len(schema) + 1
    if not 0 <= label_column < expected:
        raise ConfigError(f"label_column {label_column} is outside the {expected} columns of '{path}'")

    rows: List[RawRow] = []
    try:
        with open(path, "rb") as f:
            for line_no, raw in enumerate(f, start=1):
                if has_header and line_no == 1:
                    continue
                try:
                    line = raw.decode("utf-8").rstrip("\r\n")
                except UnicodeDecodeError as e:
                    raise ParseError(f"invalid UTF-8 ({e.reason})", line_no=line_no, path=path) from None
                if not line:
                    continue
                columns = line.split(delimiter)
                if len(columns) != expected:
                    raise ParseError(
                        f"expected {expected} columns, found {len(columns)}", line_no=line_no, path=path
                    )
                label = _parse_label(columns[label_column], line_no, path)
                tokens = tuple(columns[:label_column] + columns[label_column + 1:])
                rows.append(RawRow(tokens=tokens, label=label, line_no=line_no))
    except FileNotFoundError:
        raise ConfigError(f"Input file not found: {path}") from None

    logger.info(f"Read {len(rows)} rows from '{path}'")
    return rows


def _read_dat(path: str, columns: int) -> List[Tuple[int, List[str]]]:
    out = []
    try:
        with open(path, "r", encoding=MOVIELENS_ENCODING) as f:
            for line_no, line in enumerate(f, start=1):
                line = line.rstrip("\r\n")
                if not line:
                    continue
                parts = line.split(MOVIELENS_SEPARATOR)
                if len(parts) != columns:
                    raise ParseError(f"expected {columns} '::' columns, found {len(parts)}", line_no=line_no, path=path)
                out.append((line_no, parts))
    except FileNotFoundError:
        raise ConfigError(f"MovieLens file not found: {path}") from None
    return out


def read_movielens(directory: str) -> Tuple[List[FieldSchema], List[RawRow]]:
    """
    Joins MovieLens-1M users.dat, movies.dat and ratings.dat into eight categorical
    fields. Label is 1 when the rating is above 3, else 0.
    """
    users: Dict[str, List[str]] = {}
    for _, (user_id, gender, age, occupation, zip_code) in _read_dat(os.path.join(directory, "users.dat"), 5):
        users[user_id] = [gender, age, occupation, zip_code]

    movies: Dict[str, List[str]] = {}
    for _, (movie_id, title, genres) in _read_dat(os.path.join(directory, "movies.dat"), 3):
        movies[movie_id] = [title, genres]

    ratings_path = os.path.join(directory, "ratings.dat")
    rows: List[RawRow] = []
    for line_no, (user_id, movie_id, rating, _timestamp) in _read_dat(ratings_path, 4):
        if user_id not in users or movie_id not in movies:
            raise ParseError(f"rating references unknown user '{user_id}' or movie '{movie_id}'",
                             line_no=line_no, path=ratings_path)
        try:
            score = int(rating)
        except ValueError:
            raise ParseError(f"rating '{rating}' is not an integer", line_no=line_no, path=ratings_path) from None
        tokens = tuple([user_id, movie_id] + users[user_id] + movies[movie_id])
        rows.append(RawRow(tokens=tokens, label=int(score > MOVIELENS_LIKE_THRESHOLD), line_no=line_no))

    logger.info(f"Read {len(rows)} MovieLens ratings from '{directory}'")
    return schema_from_names(MOVIELENS_FIELDS), rows
