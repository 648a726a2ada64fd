"""Binary containers: point clouds, rasters and named-tensor weights.

Every file starts with a 16-byte little-endian header::

    magic    4 bytes   b"A3NP" (points), b"A3NR" (raster), b"A3NW" (weights)
    version  u16
    extra    u16       reserved (points, weights) / dtype code (raster)
    count    u64       points, tensors, or (height << 32 | width) for rasters

Point clouds follow with ``count`` float32 xyz triples and carry a JSON
sidecar (``<file>.json``) holding the frame name and units. Rasters follow
with ``height * width * channels`` values of the coded dtype. Weights follow
with ``count`` records of ``name_len u16, name utf-8, ndim u8, dims u32[ndim],
float32 data`` and carry a JSON manifest sidecar.
"""
from __future__ import annotations

import json
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import PointCloud

VERSION = 1
_HEADER = struct.Struct("<4sHHQ")
POINTS_MAGIC = b"A3NP"
RASTER_MAGIC = b"A3NR"
WEIGHTS_MAGIC = b"A3NW"

# dtype code -> (numpy dtype, channels)
_RASTER_CODES = {
    1: (np.dtype("<u1"), 3),   # rgb
    2: (np.dtype("<f4"), 1),   # depth, metres
    3: (np.dtype("<u2"), 1),   # instance labels
}
_RASTER_KIND = {"rgb": 1, "depth": 2, "inst": 3}


def _read_header(buf: bytes, magic: bytes) -> tuple[int, int, int]:
    if len(buf) < _HEADER.size:
        raise FormatError("file shorter than header")
    got, version, extra, count = _HEADER.unpack_from(buf)
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    return version, extra, count


def write_points(path, cloud: PointCloud) -> None:
    path = Path(path)
    data = np.ascontiguousarray(cloud.points, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(POINTS_MAGIC, VERSION, 0, len(data)))
        f.write(data.tobytes())
    sidecar = {"frame": cloud.frame, "units": "m", "count": len(data)}
    Path(str(path) + ".json").write_text(json.dumps(sidecar, indent=2))


def read_points(path) -> PointCloud:
    path = Path(path)
    buf = path.read_bytes()
    _, _, count = _read_header(buf, POINTS_MAGIC)
    need = _HEADER.size + count * 12
    if len(buf) != need:
        raise FormatError(f"expected {need} bytes for {count} points, found {len(buf)}")
    pts = np.frombuffer(buf, dtype="<f4", offset=_HEADER.size).reshape(count, 3)
    frame = "camera"
    side = Path(str(path) + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
        frame = meta.get("frame", frame)
        if meta.get("units", "m") != "m":
            raise FormatError(f"unsupported units {meta['units']!r}")
    return PointCloud(pts.astype(np.float64), frame)


def write_raster(path, array: np.ndarray, kind: str) -> None:
    code = _RASTER_KIND[kind]
    dtype, channels = _RASTER_CODES[code]
    arr = np.asarray(array)
    h, w = arr.shape[:2]
    if (channels == 1 and arr.ndim != 2) or (channels > 1 and arr.shape != (h, w, channels)):
        raise FormatError(f"{kind} raster has shape {arr.shape}")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(RASTER_MAGIC, VERSION, code, (h << 32) | w))
        f.write(np.ascontiguousarray(arr, dtype=dtype).tobytes())


def read_raster(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    _, code, count = _read_header(buf, RASTER_MAGIC)
    if code not in _RASTER_CODES:
        raise FormatError(f"unknown raster dtype code {code}")
    dtype, channels = _RASTER_CODES[code]
    h, w = count >> 32, count & 0xFFFFFFFF
    need = _HEADER.size + h * w * channels * dtype.itemsize
    if len(buf) != need:
        raise FormatError(f"raster size mismatch: {len(buf)} != {need}")
    arr = np.frombuffer(buf, dtype=dtype, offset=_HEADER.size)
    shape = (h, w) if channels == 1 else (h, w, channels)
    return arr.reshape(shape).copy()


def write_weights(path, tensors: "OrderedDict[str, np.ndarray]", manifest: dict) -> None:
    path = Path(path)
    with open(path, "wb") as f:
        f.write(_HEADER.pack(WEIGHTS_MAGIC, VERSION, 0, len(tensors)))
        for name, arr in tensors.items():
            arr = np.array(arr, dtype="<f4", order="C")
            raw = name.encode("utf-8")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())
    manifest_path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True))


def read_weights(path) -> tuple["OrderedDict[str, np.ndarray]", dict]:
    path = Path(path)
    buf = path.read_bytes()
    _, _, count = _read_header(buf, WEIGHTS_MAGIC)
    off = _HEADER.size
    out: OrderedDict[str, np.ndarray] = OrderedDict()
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", buf, off)
            off += 2
            name = buf[off:off + n].decode("utf-8")
            off += n
            (ndim,) = struct.unpack_from("<B", buf, off)
            off += 1
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape).copy()
            off += 4 * size
    except struct.error as exc:
        raise FormatError(f"truncated weights file: {exc}") from exc
    if off != len(buf):
        raise FormatError("trailing bytes in weights file")
    mpath = manifest_path(path)
    manifest = json.loads(mpath.read_text()) if mpath.exists() else {}
    return out, manifest


def manifest_path(weights_path) -> Path:
    return Path(str(weights_path) + ".json")
