"""Binary interchange for feature maps and text embeddings.

FMAP layout (little-endian):
    magic "FMAP" | version u32 | height u32 | width u32 | dim u32 |
    dtype u8 (0=f32, 1=f16) | source_tag (u16 length + UTF-8) |
    payload (H*W*dim values, row-major) | crc32 u32 over the payload bytes

TEMB layout (little-endian):
    magic "TEMB" | version u32 | dim u32 | label (u16 length + UTF-8) |
    vector (dim f32) | crc32 u32 over the vector bytes

Both formats are a fixed contract: any encoder implementation that emits
them interoperates with this engine.
"""
from __future__ import annotations

import struct
import warnings
import zlib
from dataclasses import dataclass
from io import BytesIO
from pathlib import Path

import numpy as np

from .errors import ChecksumMismatch, MalformedRecord, TruncatedFile, VersionUnsupported

FMAP_MAGIC = b"FMAP"
TEMB_MAGIC = b"TEMB"
FORMAT_VERSION = 1

_DTYPE_CODES = {0: np.float32, 1: np.float16}
_DTYPE_NAMES = {"f32": 0, "f16": 1}


@dataclass
class FeatureMap:
    data: np.ndarray  # (H, W, F)
    source_tag: str = "synthetic"

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise MalformedRecord(f"feature map must be HxWxF, got shape {self.data.shape}")
        if self.dim < 1:
            raise MalformedRecord("feature dim must be >= 1")
        if not np.all(np.isfinite(self.data)):
            raise MalformedRecord("feature map contains non-finite values")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]


@dataclass
class TextEmbedding:
    label: str
    vector: np.ndarray  # (F,)

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float32).reshape(-1)
        norm = float(np.linalg.norm(self.vector.astype(np.float64)))
        if abs(norm - 1.0) > 1e-5:
            warnings.warn(f"embedding {self.label!r} has norm {norm:.6f}, expected 1",
                          stacklevel=3)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


def _read_exact(buf: BytesIO, n: int, what: str) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise TruncatedFile(f"unexpected EOF while reading {what}")
    return data


def _write_tagged_string(s: str) -> bytes:
    enc = s.encode("utf-8")
    if len(enc) > 0xFFFF:
        raise MalformedRecord("tag/label longer than 65535 bytes")
    return struct.pack("<H", len(enc)) + enc


def _read_tagged_string(buf: BytesIO, what: str) -> str:
    (n,) = struct.unpack("<H", _read_exact(buf, 2, what))
    return _read_exact(buf, n, what).decode("utf-8")


# ---------------------------------------------------------------------------
# FMAP
# ---------------------------------------------------------------------------

def write_fmap(fmap: FeatureMap, path, dtype: str = "f32") -> None:
    if dtype not in _DTYPE_NAMES:
        raise ValueError(f"dtype must be 'f32' or 'f16', got {dtype!r}")
    code = _DTYPE_NAMES[dtype]
    payload = np.ascontiguousarray(fmap.data, dtype=_DTYPE_CODES[code])
    payload_bytes = payload.astype(payload.dtype.newbyteorder("<")).tobytes()
    header = (FMAP_MAGIC
              + struct.pack("<IIIIB", FORMAT_VERSION, fmap.height, fmap.width,
                            fmap.dim, code)
              + _write_tagged_string(fmap.source_tag))
    crc = zlib.crc32(payload_bytes) & 0xFFFFFFFF
    Path(path).write_bytes(header + payload_bytes + struct.pack("<I", crc))


def read_fmap(path) -> FeatureMap:
    buf = BytesIO(Path(path).read_bytes())
    magic = _read_exact(buf, 4, "magic")
    if magic != FMAP_MAGIC:
        raise MalformedRecord(f"bad magic {magic!r}, expected FMAP")
    version, height, width, dim, code = struct.unpack(
        "<IIIIB", _read_exact(buf, 17, "header"))
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"FMAP version {version}")
    if code not in _DTYPE_CODES:
        raise VersionUnsupported(f"FMAP dtype code {code}")
    if dim < 1 or height < 1 or width < 1:
        raise MalformedRecord(f"FMAP header declares degenerate shape {height}x{width}x{dim}")
    tag = _read_tagged_string(buf, "source tag")
    np_dtype = np.dtype(_DTYPE_CODES[code]).newbyteorder("<")
    nbytes = height * width * dim * np_dtype.itemsize
    payload_bytes = _read_exact(buf, nbytes, "payload")
    (crc,) = struct.unpack("<I", _read_exact(buf, 4, "crc"))
    if zlib.crc32(payload_bytes) & 0xFFFFFFFF != crc:
        raise ChecksumMismatch(f"{path}: payload CRC mismatch")
    data = np.frombuffer(payload_bytes, dtype=np_dtype).reshape(height, width, dim)
    return FeatureMap(data=np.ascontiguousarray(data, dtype=_DTYPE_CODES[code]),
                      source_tag=tag)


# ---------------------------------------------------------------------------
# TEMB
# ---------------------------------------------------------------------------

def write_temb(emb: TextEmbedding, path) -> None:
    payload = np.ascontiguousarray(emb.vector, dtype="<f4").tobytes()
    header = (TEMB_MAGIC + struct.pack("<II", FORMAT_VERSION, emb.dim)
              + _write_tagged_string(emb.label))
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    Path(path).write_bytes(header + payload + struct.pack("<I", crc))


def read_temb(path) -> TextEmbedding:
    buf = BytesIO(Path(path).read_bytes())
    magic = _read_exact(buf, 4, "magic")
    if magic != TEMB_MAGIC:
        raise MalformedRecord(f"bad magic {magic!r}, expected TEMB")
    version, dim = struct.unpack("<II", _read_exact(buf, 8, "header"))
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"TEMB version {version}")
    if dim < 1:
        raise MalformedRecord("TEMB header declares dim=0")
    label = _read_tagged_string(buf, "label")
    payload = _read_exact(buf, 4 * dim, "vector")
    (crc,) = struct.unpack("<I", _read_exact(buf, 4, "crc"))
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumMismatch(f"{path}: payload CRC mismatch")
    vector = np.frombuffer(payload, dtype="<f4").copy()
    return TextEmbedding(label=label, vector=vector)


# ---------------------------------------------------------------------------
# resizing
# ---------------------------------------------------------------------------

def resize_bilinear(fmap: FeatureMap, new_h: int, new_w: int) -> FeatureMap:
    """Channel-independent bilinear resize, align-corners=false, edge-clamped."""
    if new_h < 1 or new_w < 1:
        raise ValueError("target size must be >= 1")
    h, w = fmap.height, fmap.width
    if (new_h, new_w) == (h, w):
        return FeatureMap(data=fmap.data.copy(), source_tag=fmap.source_tag)

    src = fmap.data.astype(np.float64, copy=False)
    ys = (np.arange(new_h) + 0.5) * (h / new_h) - 0.5
    xs = (np.arange(new_w) + 0.5) * (w / new_w) - 0.5
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]

    top = src[y0[:, None], x0[None, :]] * (1 - wx) + src[y0[:, None], x1[None, :]] * wx
    bot = src[y1[:, None], x0[None, :]] * (1 - wx) + src[y1[:, None], x1[None, :]] * wx
    out = top * (1 - wy) + bot * wy
    return FeatureMap(data=out.astype(fmap.data.dtype, copy=False),
                      source_tag=fmap.source_tag)


# ---------------------------------------------------------------------------
# synthetic encoder stand-in
# ---------------------------------------------------------------------------

def synth_features(rgb_image: np.ndarray,
                   palette: list[tuple[np.ndarray, np.ndarray]],
                   source_tag: str = "synthetic") -> FeatureMap:
    """Assign each pixel the embedding of its nearest palette color (L2 in RGB).

    Ties go to the lowest palette index. Palette embeddings must be unit-norm.
    """
    if not palette:
        raise ValueError("palette must be nonempty")
    rgb = np.asarray(rgb_image, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"rgb image must be HxWx3, got {rgb.shape}")
    colors = np.stack([np.asarray(c, dtype=np.float64).reshape(3) for c, _ in palette])
    embeds = np.stack([np.asarray(e, dtype=np.float64).reshape(-1) for _, e in palette])
    norms = np.linalg.norm(embeds, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-5):
        raise ValueError("palette embeddings must be unit-norm")

    # (H, W, P) squared distances; argmin picks the first (lowest) index on ties
    d2 = ((rgb[:, :, None, :] - colors[None, None, :, :]) ** 2).sum(axis=-1)
    idx = np.argmin(d2, axis=-1)
    data = embeds[idx].astype(np.float32)
    return FeatureMap(data=data, source_tag=source_tag)


def orthonormal_embeddings(count: int, dim: int) -> np.ndarray:
    """First `count` canonical basis vectors of R^dim (pairwise orthonormal)."""
    if count > dim:
        raise ValueError(f"cannot build {count} orthonormal vectors in dim {dim}")
    out = np.zeros((count, dim), dtype=np.float32)
    out[np.arange(count), np.arange(count)] = 1.0
    return out
