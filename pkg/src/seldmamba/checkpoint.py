"""Array container file: text manifest followed by raw little-endian arrays.

Layout:

    SELDM-CONTAINER 1
    meta <key> <value>          (zero or more free-form metadata lines)
    array <name> <dtype> <dim0,dim1,...> <offset> <nbytes>
    ...
    END
    <raw bytes, offsets relative to the byte after the END line>

Round trips are bit-exact.  Used for checkpoints, feature caches, and clips.
"""

from __future__ import annotations

import io
import os

import numpy as np

_MAGIC = "SELDM-CONTAINER 1"
_DTYPES = {"f4": "<f4", "f8": "<f8", "i8": "<i8"}


class ContainerError(ValueError):
    """Malformed or incompatible container file."""


def _dtype_tag(arr):
    for tag, np_dtype in _DTYPES.items():
        if arr.dtype == np.dtype(np_dtype).newbyteorder("="):
            return tag
    raise ContainerError(f"unsupported dtype {arr.dtype}; use float32/float64/int64")


def save_container(path, arrays, meta=None):
    """Write named arrays with optional string metadata; atomic via temp file."""
    names = list(arrays)
    for name in names:
        if any(ch.isspace() for ch in name):
            raise ContainerError(f"array name {name!r} contains whitespace")
    lines = [_MAGIC]
    for key, value in (meta or {}).items():
        if "\n" in str(value):
            raise ContainerError(f"meta value for {key!r} contains a newline")
        lines.append(f"meta {key} {value}")
    offset = 0
    blobs = []
    for name in names:
        arr = np.ascontiguousarray(arrays[name])
        tag = _dtype_tag(arr)
        blob = arr.astype(_DTYPES[tag], copy=False).tobytes()
        dims = ",".join(str(d) for d in arr.shape) or "-"
        lines.append(f"array {name} {tag} {dims} {offset} {len(blob)}")
        blobs.append(blob)
        offset += len(blob)
    lines.append("END")
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for blob in blobs:
            fh.write(blob)
    os.replace(tmp, path)


def load_container(path):
    """Read a container file; returns (arrays: dict, meta: dict)."""
    with open(path, "rb") as fh:
        data = fh.read()
    head = io.BytesIO(data)
    first = head.readline().decode("utf-8").rstrip("\n")
    if first != _MAGIC:
        raise ContainerError(f"{path}: not a container file (bad magic {first!r})")
    meta = {}
    entries = []
    while True:
        raw = head.readline()
        if not raw:
            raise ContainerError(f"{path}: truncated manifest (no END line)")
        line = raw.decode("utf-8").rstrip("\n")
        if line == "END":
            break
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            key, _, value = rest.partition(" ")
            meta[key] = value
        elif kind == "array":
            name, tag, dims, offset, nbytes = rest.rsplit(" ", 4)[-5:]
            entries.append((name, tag, dims, int(offset), int(nbytes)))
        else:
            raise ContainerError(f"{path}: unknown manifest line {line!r}")
    base = head.tell()
    arrays = {}
    for name, tag, dims, offset, nbytes in entries:
        if tag not in _DTYPES:
            raise ContainerError(f"{path}: unknown dtype tag {tag!r} for {name}")
        shape = () if dims == "-" else tuple(int(d) for d in dims.split(","))
        start = base + offset
        if start + nbytes > len(data):
            raise ContainerError(f"{path}: array {name} extends past end of file")
        arr = np.frombuffer(data, dtype=_DTYPES[tag], count=nbytes // np.dtype(_DTYPES[tag]).itemsize,
                            offset=start)
        arrays[name] = arr.reshape(shape).copy()
    return arrays, meta
