"""Writers for the engine's binary interchange formats.

Independent implementation of the published FMAP/TEMB layout; the engine's
own reader validates every file this module emits (covered by the tests).

FMAP: magic "FMAP" | version u32=1 | height u32 | width u32 | dim u32 |
      dtype u8 (0=f32, 1=f16) | source_tag (u16 len + UTF-8) |
      row-major payload | CRC32(payload) u32. Little-endian throughout.
TEMB: magic "TEMB" | version u32=1 | dim u32 | label (u16 len + UTF-8) |
      f32 vector | CRC32(payload) u32.
"""
from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

VERSION = 1
DTYPES = {"f32": (0, "<f4"), "f16": (1, "<f2")}


def _tag(s: str) -> bytes:
    enc = s.encode("utf-8")
    return struct.pack("<H", len(enc)) + enc


def write_fmap(path, data: np.ndarray, source_tag: str, dtype: str = "f32") -> None:
    data = np.asarray(data)
    if data.ndim != 3:
        raise ValueError(f"feature map must be HxWxF, got {data.shape}")
    if not np.all(np.isfinite(data)):
        raise ValueError("feature map contains non-finite values")
    code, np_dtype = DTYPES[dtype]
    h, w, f = data.shape
    payload = np.ascontiguousarray(data, dtype=np_dtype).tobytes()
    blob = (b"FMAP" + struct.pack("<IIIIB", VERSION, h, w, f, code)
            + _tag(source_tag) + payload
            + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
    Path(path).write_bytes(blob)


def write_temb(path, vector: np.ndarray, label: str) -> None:
    vec = np.asarray(vector, dtype=np.float32).reshape(-1)
    norm = float(np.linalg.norm(vec.astype(np.float64)))
    if abs(norm - 1.0) > 1e-5:
        raise ValueError(f"embedding must be unit-norm, got {norm}")
    payload = np.ascontiguousarray(vec, dtype="<f4").tobytes()
    blob = (b"TEMB" + struct.pack("<II", VERSION, vec.shape[0])
            + _tag(label) + payload
            + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))
    Path(path).write_bytes(blob)


def parse_point_prompt(doc: str | bytes) -> dict:
    """Point-prompt document emitted by the engine's query pipeline."""
    d = json.loads(doc)
    for key in ("x", "y", "image_width", "image_height"):
        d[key] = int(d[key])
    return d
