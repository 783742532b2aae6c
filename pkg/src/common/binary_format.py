# src/common/binary_format.py

"""
Versioned, self-describing binary container shared by model checkpoints (*.ckpt)
and encoded datasets (*.afd).

Layout (all integers little-endian):

    bytes 0..7    magic b"AUTOFLD\\0"
    bytes 8..11   uint32 container version
    bytes 12..19  uint64 header length H
    next H bytes  UTF-8 JSON header, keys sorted:
                  {"kind": str, "metadata": {...},
                   "arrays": [{"name", "dtype", "shape", "offset", "nbytes"}, ...]}
    rest          raw C-order little-endian array bytes; offsets are relative
                  to the first byte after the header

Nothing time- or host-dependent is written, so equal content gives equal bytes.
"""

import json
import os
import struct
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

from src.common.errors import ContractViolation

MAGIC = b"AUTOFLD\x00"
CONTAINER_VERSION = 1
_PREAMBLE = struct.Struct("<8sIQ")


def _little_endian(array: np.ndarray) -> np.ndarray:
    array = np.asarray(array)
    if array.dtype.hasobject:
        raise ContractViolation("Object arrays cannot be stored in a container.")
    if array.dtype.byteorder == ">":
        array = array.astype(array.dtype.newbyteorder("<"))
    return np.ascontiguousarray(array)


def encode_container(kind: str, metadata: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> bytes:
    """Serializes metadata and named arrays into container bytes."""
    table = []
    payloads = []
    offset = 0
    for name in arrays:
        data = _little_endian(arrays[name])
        raw = data.tobytes(order="C")
        table.append({
            "name": name,
            "dtype": data.dtype.str,
            "shape": list(data.shape),
            "offset": offset,
            "nbytes": len(raw),
        })
        payloads.append(raw)
        offset += len(raw)

    # stdlib json: PCG64 RNG state in the metadata holds 128-bit integers, which orjson rejects
    header = json.dumps(
        {"kind": kind, "metadata": metadata, "arrays": table},
        sort_keys=True,
        separators=(",", ":"),
    ).encode("utf-8")
    return _PREAMBLE.pack(MAGIC, CONTAINER_VERSION, len(header)) + header + b"".join(payloads)


def decode_container(blob: bytes, expected_kind: Optional[str] = None) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """Parses container bytes back into (metadata, arrays)."""
    if len(blob) < _PREAMBLE.size:
        raise ContractViolation("Truncated container: missing preamble.")
    magic, version, header_len = _PREAMBLE.unpack_from(blob, 0)
    if magic != MAGIC:
        raise ContractViolation("Not an AutoField container (bad magic bytes).")
    if version != CONTAINER_VERSION:
        raise ContractViolation(f"Unsupported container version {version} (expected {CONTAINER_VERSION}).")

    start = _PREAMBLE.size
    header = json.loads(blob[start:start + header_len].decode("utf-8"))
    if expected_kind is not None and header.get("kind") != expected_kind:
        raise ContractViolation(f"Expected a '{expected_kind}' container, found '{header.get('kind')}'.")

    data_start = start + header_len
    arrays = {}
    for entry in header["arrays"]:
        begin = data_start + entry["offset"]
        raw = blob[begin:begin + entry["nbytes"]]
        if len(raw) != entry["nbytes"]:
            raise ContractViolation(f"Truncated container: array '{entry['name']}' is incomplete.")
        array = np.frombuffer(raw, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        arrays[entry["name"]] = array.copy()
    return header["metadata"], arrays


def write_container(path: str, kind: str, metadata: Mapping[str, Any], arrays: Mapping[str, np.ndarray]) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_container(kind, metadata, arrays))


def read_container(path: str, expected_kind: Optional[str] = None) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        return decode_container(f.read(), expected_kind=expected_kind)
