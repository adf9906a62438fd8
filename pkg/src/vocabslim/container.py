"""Self-describing tensor container: 8-byte little-endian header length,
a JSON header mapping tensor names to dtype/shape/data_offsets (plus a
"__metadata__" string map), then the raw payload. Offsets are relative to
the payload start; tensors tile it in ascending, non-overlapping order.

Writing is canonical (names sorted, compact JSON) so identical inputs
produce identical bytes. Reading can memory-map the payload so surgery
streams tensor-by-tensor instead of materializing whole checkpoints.
"""

from __future__ import annotations

import json
import mmap
import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from vocabslim.errors import ContainerFormatError

DTYPES = {"F32": np.dtype("<f4"), "I32": np.dtype("<i4")}
_DTYPE_NAMES = {v: k for k, v in DTYPES.items()}
_MAX_HEADER_BYTES = 100 * 1024 * 1024


def dtype_name(arr: np.ndarray) -> str:
    name = _DTYPE_NAMES.get(arr.dtype.newbyteorder("<"))
    if name is None:
        raise ContainerFormatError(f"unsupported dtype {arr.dtype}")
    return name


def save(path, tensors: Mapping[str, np.ndarray], metadata: Mapping[str, str] | None = None) -> None:
    """Write tensors atomically (temp file + rename)."""
    header: dict = {}
    if metadata:
        header["__metadata__"] = {str(k): str(v) for k, v in metadata.items()}
    offset = 0
    names = sorted(tensors)
    for name in names:
        arr = tensors[name]
        if name == "__metadata__":
            raise ContainerFormatError('"__metadata__" is reserved')
        nbytes = arr.size * arr.dtype.itemsize
        header[name] = {
            "dtype": dtype_name(arr),
            "shape": [int(d) for d in arr.shape],
            "data_offsets": [offset, offset + nbytes],
        }
        offset += nbytes
    blob = json.dumps(header, ensure_ascii=False, sort_keys=True, separators=(",", ":")).encode("utf-8")

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as f:
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        for name in names:
            arr = np.ascontiguousarray(tensors[name])
            if arr.dtype.byteorder == ">":
                arr = arr.astype(arr.dtype.newbyteorder("<"))
            arr.tofile(f)
    os.replace(tmp, path)


def read_header(path) -> tuple[dict, dict[str, str], int]:
    """Parse and validate the header; returns (tensor specs, metadata,
    payload start offset)."""
    path = Path(path)
    size = path.stat().st_size
    with open(path, "rb") as f:
        raw = f.read(8)
        if len(raw) < 8:
            raise ContainerFormatError(f"{path}: file shorter than the 8-byte length field")
        (n,) = struct.unpack("<Q", raw)
        if n > _MAX_HEADER_BYTES or 8 + n > size:
            raise ContainerFormatError(f"{path}: header length {n} exceeds file size")
        blob = f.read(n)
    try:
        def no_dupes(pairs):
            out = {}
            for k, v in pairs:
                if k in out:
                    raise ContainerFormatError(f"{path}: duplicate name {k!r} in header")
                out[k] = v
            return out

        header = json.loads(blob.decode("utf-8"), object_pairs_hook=no_dupes)
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ContainerFormatError(f"{path}: malformed header JSON: {e}") from e
    if not isinstance(header, dict):
        raise ContainerFormatError(f"{path}: header is not a JSON object")

    metadata = header.pop("__metadata__", {})
    if not isinstance(metadata, dict) or any(
        not isinstance(v, str) for v in metadata.values()
    ):
        raise ContainerFormatError(f"{path}: __metadata__ must be a string map")

    for name, spec in header.items():
        if not isinstance(spec, dict) or "data_offsets" not in spec:
            raise ContainerFormatError(f"{path}: tensor {name!r} spec is not a valid object")

    payload_start = 8 + n
    payload_size = size - payload_start
    prev_end = 0
    for name, spec in sorted(header.items(), key=lambda kv: kv[1]["data_offsets"]):
        try:
            dt = spec["dtype"]
            shape = spec["shape"]
            begin, end = spec["data_offsets"]
        except (KeyError, ValueError) as e:
            raise ContainerFormatError(f"{path}: tensor {name!r} spec incomplete: {e}") from e
        if dt not in DTYPES:
            raise ContainerFormatError(f"{path}: tensor {name!r} has unsupported dtype {dt!r}")
        if any(int(d) < 0 for d in shape):
            raise ContainerFormatError(f"{path}: tensor {name!r} has negative dimension")
        expected = int(np.prod([int(d) for d in shape], dtype=np.int64)) * DTYPES[dt].itemsize
        if end - begin != expected:
            raise ContainerFormatError(
                f"{path}: tensor {name!r} declares {end - begin} bytes but shape needs {expected}"
            )
        if begin != prev_end:
            raise ContainerFormatError(
                f"{path}: tensor {name!r} offsets not ascending/contiguous (begin {begin}, expected {prev_end})"
            )
        if end > payload_size:
            raise ContainerFormatError(
                f"{path}: payload truncated: tensor {name!r} ends at {end} but payload has {payload_size} bytes"
            )
        prev_end = end
    if prev_end != payload_size:
        raise ContainerFormatError(
            f"{path}: payload has {payload_size - prev_end} trailing bytes not claimed by any tensor"
        )
    return header, metadata, payload_start


def load(path, mmap_payload: bool = True) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Load all tensors. With ``mmap_payload`` the arrays are read-only
    views into a shared memory map; pass False for independent copies."""
    header, metadata, payload_start = read_header(path)
    tensors: dict[str, np.ndarray] = {}
    if mmap_payload:
        with open(path, "rb") as f:
            mm = mmap.mmap(f.fileno(), 0, access=mmap.ACCESS_READ)
        for name, spec in header.items():
            dt = DTYPES[spec["dtype"]]
            shape = [int(d) for d in spec["shape"]]
            begin, end = spec["data_offsets"]
            count = (end - begin) // dt.itemsize
            arr = np.frombuffer(mm, dtype=dt, count=count, offset=payload_start + begin)
            tensors[name] = arr.reshape(shape)
    else:
        with open(path, "rb") as f:
            f.seek(payload_start)
            for name, spec in sorted(header.items(), key=lambda kv: kv[1]["data_offsets"][0]):
                dt = DTYPES[spec["dtype"]]
                shape = [int(d) for d in spec["shape"]]
                begin, end = spec["data_offsets"]
                arr = np.fromfile(f, dtype=dt, count=(end - begin) // dt.itemsize)
                tensors[name] = arr.reshape(shape)
    return tensors, metadata
