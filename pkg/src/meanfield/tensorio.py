"""Self-describing binary tensor files, CSV helpers and content hashing.

Tensor layout (all little-endian)::

    b"MFT1" | uint32 header length | UTF-8 JSON header | float64 payload

The header always carries ``shape`` and ``dtype`` (``"<f8"``); any other
keys are free-form metadata.  The payload is the row-major array.
"""
from __future__ import annotations

import csv
import hashlib
import json
import struct

import numpy as np

from .errors import CorruptCheckpoint

MAGIC = b"MFT1"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def content_hash(obj) -> str:
    """sha256 of the canonical JSON serialisation."""
    return hashlib.sha256(canonical_json(obj).encode()).hexdigest()


def file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def encode_tensor(array, meta=None) -> bytes:
    arr = np.ascontiguousarray(array, dtype="<f8")
    header = dict(meta or {})
    header["shape"] = list(arr.shape)
    header["dtype"] = "<f8"
    head = canonical_json(header).encode()
    return MAGIC + struct.pack("<I", len(head)) + head + arr.tobytes(order="C")


def decode_tensor(blob: bytes):
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CorruptCheckpoint("bad magic bytes")
    (n,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + n:
        raise CorruptCheckpoint("truncated header")
    try:
        header = json.loads(blob[8:8 + n].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"unreadable header: {exc}") from exc
    shape = tuple(header["shape"])
    payload = blob[8 + n:]
    expected = 8 * int(np.prod(shape, dtype=np.int64))
    if len(payload) != expected:
        raise CorruptCheckpoint(f"payload has {len(payload)} bytes, expected {expected}")
    arr = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
    return arr, header


def write_tensor(path, array, meta=None):
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array, meta))


def read_tensor(path):
    with open(path, "rb") as fh:
        return decode_tensor(fh.read())


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]
