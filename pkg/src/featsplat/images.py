"""PNG load/save helpers. All in-memory images are float arrays in [0, 1]."""
from __future__ import annotations

import numpy as np
from PIL import Image

from .errors import ShapeMismatch


def load_rgb(path) -> np.ndarray:
    """Read a PNG as (H, W, 3) float32 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def save_rgb(path, rgb: np.ndarray) -> None:
    """Write (H, W, 3) floats as 8-bit PNG, clamping to [0, 1]."""
    arr = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(path)


def encode_rgb_png(rgb: np.ndarray) -> bytes:
    from io import BytesIO
    arr = np.clip(np.asarray(rgb, dtype=np.float64), 0.0, 1.0)
    buf = BytesIO()
    Image.fromarray((arr * 255.0 + 0.5).astype(np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def load_mask(path, expect_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Read an 8-bit single-channel mask PNG (0=background, 255=foreground)."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    bits = arr >= 128
    if expect_shape is not None and bits.shape != tuple(expect_shape):
        raise ShapeMismatch(f"mask shape {bits.shape} != expected {tuple(expect_shape)}")
    return bits


def save_mask(path, bits: np.ndarray) -> None:
    arr = np.where(np.asarray(bits, dtype=bool), 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def decode_mask_png(data: bytes, expect_shape: tuple[int, int] | None = None) -> np.ndarray:
    from io import BytesIO
    with Image.open(BytesIO(data)) as im:
        if im.mode != "L":
            raise ShapeMismatch(f"mask PNG must be single-channel 8-bit, got mode {im.mode}")
        arr = np.asarray(im)
    bits = arr >= 128
    if expect_shape is not None and bits.shape != tuple(expect_shape):
        raise ShapeMismatch(f"mask shape {bits.shape} != expected {tuple(expect_shape)}")
    return bits
