"""Binary persistence for tensors and weight containers.

Tensor record (little-endian)::

    b"OCT4" | u32 version=1 | u8 dtype (0=f32, 1=f64) | 4 x u64 dims | row-major payload

Weight container::

    b"OCTW" | u32 version=1 | u32 header_len | header (UTF-8 JSON, sorted keys)
    | one tensor record per entry of header["tensors"], in order

Headers are serialized deterministically so save -> load -> save is byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ShapeError, WeightFileError

TENSOR_MAGIC = b"OCT4"
CONTAINER_MAGIC = b"OCTW"
VERSION = 1
_TENSOR_HEADER = struct.Struct("<4sIB4Q")
_CONTAINER_HEADER = struct.Struct("<4sII")
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


def _read_exact(fh, n, what):
    data = fh.read(n)
    if len(data) != n:
        raise WeightFileError(f"truncated file while reading {what}: wanted {n} bytes, got {len(data)}")
    return data


def write_tensor(fh, x):
    x = np.asarray(x)
    if x.ndim != 4 or min(x.shape) < 1:
        raise ShapeError(f"only non-empty rank-4 tensors can be stored, got shape {x.shape}")
    code = _CODES.get(x.dtype)
    if code is None:
        raise ShapeError(f"unsupported dtype {x.dtype}; use float32 or float64")
    fh.write(_TENSOR_HEADER.pack(TENSOR_MAGIC, VERSION, code, *x.shape))
    fh.write(np.ascontiguousarray(x, dtype=_DTYPES[code]).tobytes())


def read_tensor(fh):
    magic, version, code, *dims = _TENSOR_HEADER.unpack(_read_exact(fh, _TENSOR_HEADER.size, "tensor header"))
    if magic != TENSOR_MAGIC:
        raise WeightFileError(f"bad tensor magic {magic!r}")
    if version != VERSION:
        raise WeightFileError(f"unsupported tensor version {version}")
    if code not in _DTYPES:
        raise WeightFileError(f"unknown dtype code {code}")
    dt = _DTYPES[code]
    count = int(np.prod(dims))
    payload = _read_exact(fh, count * dt.itemsize, "tensor payload")
    return np.frombuffer(payload, dtype=dt).reshape(dims).astype(dt.newbyteorder("="))


def save_tensor(path, x):
    with open(path, "wb") as fh:
        write_tensor(fh, x)


def load_tensor(path):
    with open(path, "rb") as fh:
        return read_tensor(fh)


def write_container(fh, header, tensors):
    """Write ``header`` (JSON-able dict) and the ``(name, array)`` pairs in ``tensors``."""
    header = dict(header)
    header["tensors"] = [{"name": name, "dims": list(np.shape(arr))} for name, arr in tensors]
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    fh.write(_CONTAINER_HEADER.pack(CONTAINER_MAGIC, VERSION, len(blob)))
    fh.write(blob)
    for _, arr in tensors:
        write_tensor(fh, arr)


def read_container(fh):
    """Return ``(header, {name: array})``."""
    magic, version, size = _CONTAINER_HEADER.unpack(_read_exact(fh, _CONTAINER_HEADER.size, "container header"))
    if magic != CONTAINER_MAGIC:
        raise WeightFileError(f"bad container magic {magic!r}")
    if version != VERSION:
        raise WeightFileError(f"unsupported container version {version}")
    try:
        header = json.loads(_read_exact(fh, size, "container header").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise WeightFileError(f"corrupt container header: {exc}") from None
    arrays = {}
    for entry in header["tensors"]:
        arr = read_tensor(fh)
        if list(arr.shape) != entry["dims"]:
            raise WeightFileError(f"tensor {entry['name']}: dims {arr.shape} != header {entry['dims']}")
        arrays[entry["name"]] = arr
    if fh.read(1):
        raise WeightFileError("trailing bytes after last tensor")
    return header, arrays


def kernel_header(kernel):
    return {
        "c_in": kernel.c_in,
        "c_out": kernel.c_out,
        "k": kernel.k,
        "alpha_in": kernel.alpha_in,
        "alpha_out": kernel.alpha_out,
        "mode": kernel.mode,
        "groups": kernel.groups,
        "seed": kernel.seed,
    }


def save_oct_kernel(path, kernel):
    """Store one :class:`~octconv.octave.OctKernel`; empty blocks are recorded by shape only."""
    header = {"kind": "octkernel", "kernel": kernel_header(kernel)}
    tensors = [(name, w) for name, w in kernel.weights().items() if w.size]
    with open(Path(path), "wb") as fh:
        write_container(fh, header, tensors)


def load_oct_kernel(path):
    from .octave import make_oct_kernel

    with open(Path(path), "rb") as fh:
        header, arrays = read_container(fh)
    if header.get("kind") != "octkernel":
        raise WeightFileError(f"not an octave kernel file (kind={header.get('kind')!r})")
    meta = header["kernel"]
    template = make_oct_kernel(**meta)
    weights = {}
    for name, w in template.weights().items():
        if not w.size:
            weights[name] = w
        elif name in arrays:
            weights[name] = arrays[name]
        else:
            raise WeightFileError(f"kernel file lacks block {name!r}")
    return template.with_weights(weights)
