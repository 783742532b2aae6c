# src/common/artifacts.py

import os
from typing import Any, Dict, Iterable, Mapping

import jsonlines
import orjson

JSON_OPTIONS = orjson.OPT_INDENT_2 | orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY


def _ensure_parent(path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)


def dumps_json(payload: Mapping[str, Any]) -> bytes:
    """Canonical JSON bytes: sorted keys, two-space indent, trailing newline."""
    return orjson.dumps(payload, option=JSON_OPTIONS) + b"\n"


def write_json(path: str, payload: Mapping[str, Any]) -> None:
    _ensure_parent(path)
    with open(path, "wb") as f:
        f.write(dumps_json(payload))


def read_json(path: str) -> Dict[str, Any]:
    with open(path, "rb") as f:
        return orjson.loads(f.read())


def _orjson_line(obj: Any) -> str:
    return orjson.dumps(obj, option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY).decode("utf-8")


class TraceWriter:
    """
    Appends one JSON object per line to a trace file.
    Every record is flushed as soon as it is written so a crash leaves a
    readable prefix of the run on disk.
    """

    def __init__(self, path: str, header: Mapping[str, Any]):
        _ensure_parent(path)
        self.path = path
        self._file = open(path, "w", encoding="utf-8")
        self._writer = jsonlines.Writer(self._file, dumps=_orjson_line)
        self.write({"type": "header", **header})

    def write(self, record: Mapping[str, Any]) -> None:
        self._writer.write(dict(record))
        self._file.flush()

    def close(self) -> None:
        if not self._file.closed:
            self._writer.close()
            self._file.close()

    def __enter__(self) -> "TraceWriter":
        return self

    def __exit__(self, exc_type, exc_val, exc_tb) -> None:
        self.close()


def read_trace(path: str) -> Iterable[Dict[str, Any]]:
    with jsonlines.open(path, mode="r", loads=orjson.loads) as reader:
        return list(reader)
