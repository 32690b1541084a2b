"""Versioned binary container shared by the corpus, truth and model files.

Layout::

    <format version>\\n
    <JSON header, one line, sorted keys>\\n
    <raw little-endian array buffers, in header order>

The writer never embeds timestamps, so identical inputs give identical bytes.
"""

import hashlib
import json
from pathlib import Path

import numpy as np


def write_container(path, version, header, arrays):
    """Write ``header`` (JSON-serialisable dict) and named ``arrays`` to ``path``."""
    specs = []
    buffers = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dtype = arr.dtype.newbyteorder("<")
        arr = arr.astype(dtype, copy=False)
        specs.append({"name": name, "dtype": dtype.str, "shape": list(arr.shape)})
        buffers.append(arr.tobytes(order="C"))
    meta = dict(header)
    meta["arrays"] = specs
    line = json.dumps(meta, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(version.encode("ascii") + b"\n")
        fh.write(line.encode("utf-8") + b"\n")
        for buf in buffers:
            fh.write(buf)


def read_container(path, expected_version):
    """Read a container, checking its version tag.

    Returns ``(header, arrays)``. Raises ``ValueError`` naming both versions
    on mismatch.
    """
    path = Path(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    first = blob.find(b"\n")
    second = blob.find(b"\n", first + 1)
    if first < 0 or second < 0:
        raise ValueError(f"{path}: not a basketlda file (missing header)")
    found = blob[:first].decode("ascii", errors="replace")
    if found != expected_version:
        raise ValueError(
            f"{path}: format version mismatch: expected {expected_version!r}, found {found!r}"
        )
    header = json.loads(blob[first + 1:second].decode("utf-8"))
    offset = second + 1
    arrays = {}
    for spec in header.pop("arrays"):
        dtype = np.dtype(spec["dtype"])
        shape = tuple(spec["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(blob, dtype=dtype, count=count, offset=offset)
        arrays[spec["name"]] = arr.reshape(shape).copy()
        offset += nbytes
    if offset != len(blob):
        raise ValueError(f"{path}: trailing or truncated data")
    return header, arrays


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
