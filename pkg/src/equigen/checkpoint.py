"""Binary checkpoint container.

Layout (all integers little-endian):

    bytes 0..3    magic  b"EQGN"
    u32           format version (currently 1)
    u64           header length in bytes
    bytes         header: UTF-8 JSON with the architecture and diffusion
                  configs ({"net": {...}, "diffusion": {...}})
    u32           number of parameter segments
    per segment:  u16 name length | name UTF-8 | u8 ndim | u64 x ndim dims |
                  float64 little-endian data (C order)
    u32           CRC32 of every preceding byte

Loading verifies magic, version and checksum and reconstructs the segments in
their stored order, so a round-trip preserves the flat parameter layout.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import asdict

import numpy as np

from .diffusion import DiffusionConfig, Model
from .errors import CheckpointCorruptionError
from .network import EquiNetConfig, ParamStore

__all__ = ["save_checkpoint", "load_checkpoint", "inspect_checkpoint", "MAGIC", "VERSION"]

MAGIC = b"EQGN"
VERSION = 1


def _header_bytes(model: Model) -> bytes:
    header = {"net": asdict(model.net), "diffusion": asdict(model.diffusion),
              "extras": model.extras}
    return json.dumps(header, sort_keys=True).encode("utf-8")


def save_checkpoint(path, model: Model) -> None:
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", VERSION)
    header = _header_bytes(model)
    blob += struct.pack("<Q", len(header))
    blob += header
    segments = list(model.params.items())
    blob += struct.pack("<I", len(segments))
    for name, arr in segments:
        encoded = name.encode("utf-8")
        blob += struct.pack("<H", len(encoded))
        blob += encoded
        blob += struct.pack("<B", arr.ndim)
        for dim in arr.shape:
            blob += struct.pack("<Q", dim)
        blob += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.data):
            raise CheckpointCorruptionError("checkpoint truncated")
        out = self.data[self.offset:self.offset + n]
        self.offset += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]


def _read_all(path) -> tuple[dict, ParamStore]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < len(MAGIC) + 8 or data[:4] != MAGIC:
        raise CheckpointCorruptionError("bad magic bytes")
    stored_crc = struct.unpack("<I", data[-4:])[0]
    actual_crc = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored_crc != actual_crc:
        raise CheckpointCorruptionError("checksum mismatch")
    reader = _Reader(data[:-4])
    reader.take(4)
    version = reader.unpack("<I")
    if version != VERSION:
        raise CheckpointCorruptionError(f"unsupported format version {version}")
    header = json.loads(reader.take(reader.unpack("<Q")).decode("utf-8"))
    store = ParamStore()
    n_segments = reader.unpack("<I")
    for _ in range(n_segments):
        name = reader.take(reader.unpack("<H")).decode("utf-8")
        ndim = reader.unpack("<B")
        shape = tuple(reader.unpack("<Q") for _ in range(ndim))
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(reader.take(count * 8), dtype="<f8").reshape(shape)
        store.add(name, arr.astype(np.float64))
    if reader.offset != len(reader.data):
        raise CheckpointCorruptionError("trailing bytes after last segment")
    return header, store


def load_checkpoint(path) -> Model:
    header, store = _read_all(path)
    net_cfg = EquiNetConfig(**{k: tuple(v) if isinstance(v, list) else v
                               for k, v in header["net"].items()})
    diff_cfg = DiffusionConfig(**{k: tuple(v) if isinstance(v, list) else v
                                  for k, v in header["diffusion"].items()})
    return Model(net=net_cfg, diffusion=diff_cfg, params=store,
                 extras=header.get("extras", {}))


def inspect_checkpoint(path) -> str:
    """Human-readable summary; raises CheckpointCorruptionError on damage."""
    header, store = _read_all(path)
    lines = [f"format version: {VERSION}", "checksum: ok", ""]
    lines.append("[diffusion]")
    for k, v in sorted(header["diffusion"].items()):
        lines.append(f"  {k} = {v}")
    lines.append("[net]")
    for k, v in sorted(header["net"].items()):
        lines.append(f"  {k} = {v}")
    lines.append("")
    lines.append(f"parameter segments: {len(store)} ({store.size} scalars)")
    for name, shape in store.segments():
        lines.append(f"  {name}  {list(shape)}")
    return "\n".join(lines)
