"""Binary containers: VGDS viewgrid datasets and SCPT checkpoints.

Both are little-endian. Writers are deterministic (JSON blobs use sorted keys
and fixed separators), so write -> read -> write reproduces the same bytes.

VGDS v1::

    b"VGDS" | u32 version
    u32 num_objects | u16 N | u16 M | u16 H | u16 W | i16[N] elevations (degrees)
    u8 num_split_tags | per tag: u8 length, UTF-8 name
    u32 length | UTF-8 JSON metadata (class names, render constants, seed, ...)
    per object: u16 class_id | u8 split | u8[N*M*H*W] pixels, round(255 v), row-major

SCPT v1::

    b"SCPT" | u32 version
    u32 length | UTF-8 JSON metadata
    u32 tensor_count | per tensor: u32 name length, UTF-8 name, u8 rank, u32[rank] dims, f32[...] values
"""
from __future__ import annotations

import hashlib
import io
import json
import struct
from typing import Dict, Tuple

import numpy as np

from .shapeforge import Dataset
from .viewgrid import ViewSphereSpec

VGDS_MAGIC = b"VGDS"
SCPT_MAGIC = b"SCPT"
VERSION = 1


class FormatError(ValueError):
    """File is truncated, has the wrong magic, or an unsupported version."""


def dump_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data, self.pos, self.what = data, 0, what

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(f"{self.what}: truncated at byte {self.pos}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def blob(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)


def _check_magic(r: _Reader, magic: bytes):
    if r.take(4) != magic:
        raise FormatError(f"{r.what}: bad magic, expected {magic!r}")
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise FormatError(f"{r.what}: unsupported version {version}")


# --------------------------------------------------------------------------
# datasets


def dataset_bytes(ds: Dataset) -> bytes:
    spec = ds.spec
    n_obj, n, m, h, w = ds.pixels.shape
    elev = np.asarray(spec.elevations)
    if not np.all(elev == np.round(elev)):
        raise FormatError("VGDS stores integer elevations only")
    buf = io.BytesIO()
    buf.write(VGDS_MAGIC)
    buf.write(struct.pack("<I", VERSION))
    buf.write(struct.pack("<IHHHH", n_obj, n, m, h, w))
    buf.write(struct.pack(f"<{n}h", *[int(e) for e in elev]))
    buf.write(struct.pack("<B", len(ds.split_names)))
    for tag in ds.split_names:
        raw = tag.encode("utf-8")
        buf.write(struct.pack("<B", len(raw)) + raw)
    meta = dict(ds.metadata)
    meta["class_names"] = list(ds.class_names)
    blob = dump_json(meta)
    buf.write(struct.pack("<I", len(blob)) + blob)
    per = n * m * h * w
    px = np.ascontiguousarray(ds.pixels, dtype=np.uint8).reshape(n_obj, per)
    for i in range(n_obj):
        buf.write(struct.pack("<HB", int(ds.class_ids[i]), int(ds.splits[i])))
        buf.write(px[i].tobytes())
    return buf.getvalue()


def write_dataset(path, ds: Dataset) -> str:
    """Write ``ds``; returns the SHA-256 of the bytes written."""
    data = dataset_bytes(ds)
    with open(path, "wb") as f:
        f.write(data)
    return hashlib.sha256(data).hexdigest()


def parse_dataset(data: bytes, what: str = "dataset") -> Dataset:
    r = _Reader(data, what)
    _check_magic(r, VGDS_MAGIC)
    n_obj, n, m, h, w = r.unpack("<IHHHH")
    elevations = r.unpack(f"<{n}h")
    (n_tags,) = r.unpack("<B")
    tags = []
    for _ in range(n_tags):
        (ln,) = r.unpack("<B")
        tags.append(r.take(ln).decode("utf-8"))
    meta = json.loads(r.blob().decode("utf-8"))
    class_names = tuple(meta.pop("class_names", ()))
    per = n * m * h * w
    rec = np.dtype([("cls", "<u2"), ("split", "u1"), ("px", "u1", (per,))])
    body = r.take(rec.itemsize * n_obj)
    if r.pos != len(data):
        raise FormatError(f"{what}: {len(data) - r.pos} trailing bytes")
    arr = np.frombuffer(body, dtype=rec, count=n_obj)
    if n_obj and int(arr["split"].max()) >= len(tags):
        raise FormatError(f"{what}: split index out of range")
    return Dataset(
        spec=ViewSphereSpec(m, tuple(float(e) for e in elevations)),
        pixels=arr["px"].reshape(n_obj, n, m, h, w).copy(),
        class_ids=arr["cls"].astype(np.uint16),
        splits=arr["split"].astype(np.uint8),
        split_names=tuple(tags),
        class_names=class_names,
        metadata=meta,
    )


def read_dataset(path) -> Dataset:
    with open(path, "rb") as f:
        return parse_dataset(f.read(), str(path))


# --------------------------------------------------------------------------
# checkpoints


def checkpoint_bytes(tensors: Dict[str, np.ndarray], metadata: Dict) -> bytes:
    buf = io.BytesIO()
    buf.write(SCPT_MAGIC)
    buf.write(struct.pack("<I", VERSION))
    blob = dump_json(metadata)
    buf.write(struct.pack("<I", len(blob)) + blob)
    buf.write(struct.pack("<I", len(tensors)))
    for name, t in tensors.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)) + raw)
        buf.write(struct.pack("<B", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(np.ascontiguousarray(t, dtype="<f4").tobytes())
    return buf.getvalue()


def write_checkpoint(path, tensors: Dict[str, np.ndarray], metadata: Dict) -> str:
    data = checkpoint_bytes(tensors, metadata)
    with open(path, "wb") as f:
        f.write(data)
    return hashlib.sha256(data).hexdigest()


def parse_checkpoint(data: bytes, what: str = "checkpoint") -> Tuple[Dict[str, np.ndarray], Dict]:
    r = _Reader(data, what)
    _check_magic(r, SCPT_MAGIC)
    meta = json.loads(r.blob().decode("utf-8"))
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        name = r.blob().decode("utf-8")
        (rank,) = r.unpack("<B")
        dims = r.unpack(f"<{rank}I")
        size = int(np.prod(dims)) if rank else 1
        vals = np.frombuffer(r.take(4 * size), dtype="<f4").astype(np.float32)
        tensors[name] = vals.reshape(dims)
    if r.pos != len(data):
        raise FormatError(f"{what}: {len(data) - r.pos} trailing bytes")
    return tensors, meta


def read_checkpoint(path) -> Tuple[Dict[str, np.ndarray], Dict]:
    with open(path, "rb") as f:
        return parse_checkpoint(f.read(), str(path))
