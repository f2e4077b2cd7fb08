"""Named-tensor container used for checkpoints.

Layout::

    8 bytes   magic b"MLCKPT\\r\\n"
    4 bytes   header length n (uint32, little-endian)
    n bytes   UTF-8 JSON header (sorted keys)
    ...       tensor payload, concatenated little-endian raw arrays

The header carries user metadata plus a ``tensors`` table of
``{name, dtype, shape, offset, nbytes}`` and the SHA-256 of the payload, so
truncation or corruption is detected on load. Output bytes depend only on the
inputs.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import FormatError

MAGIC = b"MLCKPT\r\n"
FORMAT_VERSION = 1
_DTYPES = {"float64": "<f8", "float32": "<f4", "int64": "<i8", "uint8": "u1"}


def _as_numpy(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    return np.asarray(value)


def write_container(path, meta: dict, tensors: dict) -> None:
    table, chunks, offset = [], [], 0
    for name in sorted(tensors):
        arr = _as_numpy(tensors[name])
        if arr.dtype.name not in _DTYPES:
            raise TypeError(f"unsupported dtype {arr.dtype} for tensor {name!r}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[arr.dtype.name]).tobytes()
        table.append({"name": name, "dtype": arr.dtype.name, "shape": list(arr.shape),
                      "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)
    header = dict(meta, format_version=FORMAT_VERSION, tensors=table,
                  payload_sha256=hashlib.sha256(payload).hexdigest())
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    Path(path).write_bytes(MAGIC + struct.pack("<I", len(hbytes)) + hbytes + payload)


def read_container(path) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    if len(data) < 12:
        raise FormatError("truncated checkpoint", offset=len(data))
    if data[:8] != MAGIC:
        raise FormatError("bad checkpoint magic", offset=0)
    (n,) = struct.unpack_from("<I", data, 8)
    if len(data) < 12 + n:
        raise FormatError("truncated checkpoint header", offset=len(data))
    try:
        header = json.loads(data[12:12 + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise FormatError("corrupt checkpoint header", offset=12) from None
    if header.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {header.get('format_version')}", offset=12)
    payload = data[12 + n:]
    if hashlib.sha256(payload).hexdigest() != header.get("payload_sha256"):
        raise FormatError("checkpoint payload checksum mismatch (corrupt or truncated)", offset=12 + n)
    tensors = {}
    for entry in header["tensors"]:
        start, nbytes = entry["offset"], entry["nbytes"]
        if start + nbytes > len(payload):
            raise FormatError(f"tensor {entry['name']!r} runs past end of file", offset=12 + n + start)
        arr = np.frombuffer(payload, dtype=_DTYPES[entry["dtype"]], count=nbytes // np.dtype(_DTYPES[entry["dtype"]]).itemsize,
                            offset=start)
        tensors[entry["name"]] = arr.reshape(entry["shape"]).astype(entry["dtype"])
    return header, tensors


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
