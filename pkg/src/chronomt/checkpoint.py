"""Self-describing binary checkpoint container.

Layout: 8-byte magic, uint32 format version, uint32 JSON header length,
the UTF-8 JSON header, then the raw little-endian array blobs
concatenated in header order.  The header carries array names, dtypes,
shapes and byte offsets plus a free-form metadata dict (config, step
count, vocab token lists), so a checkpoint can be reloaded without any
out-of-band information.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError

MAGIC = b"CHRMT\x00\x00\x01"
FORMAT_VERSION = 1


def config_digest(config_dict):
    """Stable sha256 of a JSON-serializable config tree."""
    blob = json.dumps(config_dict, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def save_checkpoint(path, arrays, meta):
    """Write named arrays plus a metadata dict to path."""
    path = Path(path)
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.str,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps(
        {"arrays": entries, "meta": meta}, sort_keys=True, ensure_ascii=False
    ).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path):
    """Read a checkpoint; returns (arrays dict, meta dict)."""
    path = Path(path)
    if not path.exists():
        raise DataFormatError(str(path), None, "checkpoint file does not exist")
    with open(path, "rb") as f:
        magic = f.read(len(MAGIC))
        if magic != MAGIC:
            raise DataFormatError(str(path), None, "bad magic, not a checkpoint")
        preamble = f.read(8)
        if len(preamble) != 8:
            raise DataFormatError(str(path), None, "truncated checkpoint header")
        version, header_len = struct.unpack("<II", preamble)
        if version != FORMAT_VERSION:
            raise DataFormatError(
                str(path), None, f"unsupported checkpoint version {version}"
            )
        raw_header = f.read(header_len)
        if len(raw_header) != header_len:
            raise DataFormatError(str(path), None, "truncated checkpoint header")
        try:
            header = json.loads(raw_header.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise DataFormatError(str(path), None, f"corrupt header: {e}") from None
        payload = f.read()
    arrays = {}
    for entry in header["arrays"]:
        start = entry["offset"]
        stop = start + entry["nbytes"]
        if stop > len(payload):
            raise DataFormatError(str(path), None, "truncated checkpoint payload")
        arr = np.frombuffer(payload[start:stop], dtype=np.dtype(entry["dtype"]))
        arrays[entry["name"]] = arr.reshape(entry["shape"]).copy()
    return arrays, header["meta"]
