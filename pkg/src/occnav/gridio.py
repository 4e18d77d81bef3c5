"""OCCGRID v1 binary/JSON serialization and the flat float32 logits format.

Binary layout::

    OCCGRID v1 W H D cell_size slice_height z_limit origin_x origin_y\\n
    <packed bits: 8 voxels per byte, least significant bit first,
     x fastest, then y, then k>
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ._validation import StructuralError
from .grid import GridMeta, VoxelGrid

MAGIC = "OCCGRID"
VERSION = "v1"


def _header(meta: GridMeta) -> str:
    fields = [
        MAGIC,
        VERSION,
        meta.width,
        meta.height,
        meta.depth,
        repr(float(meta.cell_size)),
        repr(float(meta.slice_height)),
        repr(float(meta.z_limit)),
        repr(float(meta.origin[0])),
        repr(float(meta.origin[1])),
    ]
    return " ".join(str(f) for f in fields) + "\n"


def encode_occgrid(voxels: VoxelGrid) -> bytes:
    bits = np.packbits(voxels.cells.reshape(-1), bitorder="little")
    return _header(voxels.meta).encode("ascii") + bits.tobytes()


def decode_occgrid(data: bytes) -> VoxelGrid:
    nl = data.find(b"\n")
    if nl < 0:
        raise StructuralError("OCCGRID header missing newline")
    parts = data[:nl].decode("ascii").split()
    if len(parts) != 10 or parts[0] != MAGIC or parts[1] != VERSION:
        raise StructuralError(f"not an OCCGRID v1 header: {data[:nl]!r}")
    w, h, d = (int(p) for p in parts[2:5])
    cs, dz, zl, ox, oy = (float(p) for p in parts[5:10])
    meta = GridMeta(w, h, d, cs, dz, zl, (ox, oy))
    n = w * h * d
    payload = np.frombuffer(data, dtype=np.uint8, offset=nl + 1)
    if payload.size != (n + 7) // 8:
        raise StructuralError(f"OCCGRID payload has {payload.size} bytes, expected {(n + 7) // 8}")
    cells = np.unpackbits(payload, count=n, bitorder="little").reshape(d, h, w)
    return VoxelGrid(meta, cells)


def write_occgrid(path, voxels: VoxelGrid) -> Path:
    path = Path(path)
    path.write_bytes(encode_occgrid(voxels))
    return path


def read_occgrid(path) -> VoxelGrid:
    return decode_occgrid(Path(path).read_bytes())


def to_json_dict(voxels: VoxelGrid) -> dict:
    m = voxels.meta
    return {
        "format": MAGIC,
        "version": VERSION,
        "W": m.width,
        "H": m.height,
        "D": m.depth,
        "cell_size": m.cell_size,
        "slice_height": m.slice_height,
        "z_limit": m.z_limit,
        "origin_x": m.origin[0],
        "origin_y": m.origin[1],
        "cells": voxels.cells.reshape(-1).tolist(),
    }


def from_json_dict(obj: dict) -> VoxelGrid:
    if obj.get("format") != MAGIC or obj.get("version") != VERSION:
        raise StructuralError("not an OCCGRID v1 JSON document")
    meta = GridMeta(
        obj["W"], obj["H"], obj["D"], obj["cell_size"], obj["slice_height"], obj["z_limit"],
        (obj["origin_x"], obj["origin_y"]),
    )
    cells = np.asarray(obj["cells"], dtype=np.int64)
    if cells.size != meta.width * meta.height * meta.depth:
        raise StructuralError("OCCGRID JSON cell count does not match W*H*D")
    return VoxelGrid(meta, cells.reshape(meta.depth, meta.height, meta.width))


def write_logits(path, logits: np.ndarray) -> tuple:
    """Write ``path`` (float32 LE) and ``path + '.json'`` holding the shape."""
    path = Path(path)
    arr = np.ascontiguousarray(logits, dtype="<f4")
    path.write_bytes(arr.tobytes())
    sidecar = path.with_name(path.name + ".json")
    sidecar.write_text(json.dumps({"shape": list(arr.shape), "dtype": "float32", "byteorder": "little"}))
    return path, sidecar


def read_logits(path) -> np.ndarray:
    path = Path(path)
    sidecar = path.with_name(path.name + ".json")
    shape = tuple(json.loads(sidecar.read_text())["shape"])
    arr = np.frombuffer(path.read_bytes(), dtype="<f4")
    if arr.size != int(np.prod(shape)):
        raise StructuralError(f"logits file has {arr.size} values, sidecar shape {shape}")
    return arr.reshape(shape).astype(np.float64)
