"""Bridge operations: feature extraction, text embedding, mask refinement."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
from PIL import Image

from .encoders import BackboneSpec, PointOutOfBounds, get_encoder
from .formats import parse_point_prompt, write_fmap, write_temb

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


class ImageUnreadable(Exception):
    pass


def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except Exception as e:
        raise ImageUnreadable(f"{path}: {e}") from e


def _resize_bilinear(data: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    h, w = data.shape[:2]
    if (h, w) == (new_h, new_w):
        return data
    ys = np.clip((np.arange(new_h) + 0.5) * (h / new_h) - 0.5, 0, h - 1)
    xs = np.clip((np.arange(new_w) + 0.5) * (w / new_w) - 0.5, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = data[y0[:, None], x0[None, :]] * (1 - wx) + data[y0[:, None], x1[None, :]] * wx
    bot = data[y1[:, None], x0[None, :]] * (1 - wx) + data[y1[:, None], x1[None, :]] * wx
    return top * (1 - wy) + bot * wy


def extract_features(image_dir, spec: BackboneSpec, out_dir) -> dict:
    """Dense per-image feature maps in FMAP format plus a run manifest."""
    image_dir = Path(image_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    encoder = get_encoder(spec)

    images = sorted(p for p in image_dir.iterdir()
                    if p.suffix.lower() in IMAGE_SUFFIXES)
    written = []
    for img_path in images:
        rgb = load_image(img_path)
        feats = encoder.embed_image(rgb)
        if spec.target_resolution is not None:
            feats = _resize_bilinear(feats.astype(np.float64),
                                     *spec.target_resolution).astype(np.float32)
        out_path = out_dir / f"{img_path.stem}.fmap"
        write_fmap(out_path, feats, source_tag=spec.name)
        written.append({"image": img_path.name, "fmap": out_path.name,
                        "height": int(feats.shape[0]), "width": int(feats.shape[1])})

    manifest = {
        "backbone": spec.name,
        "checkpoint_hash": _checkpoint_hash(encoder, spec),
        "output_dim": spec.output_dim,
        "target_resolution": list(spec.target_resolution)
        if spec.target_resolution else None,
        "images": written,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, sort_keys=True,
                                                      indent=2) + "\n")
    return manifest


def _checkpoint_hash(encoder, spec: BackboneSpec) -> str:
    if hasattr(encoder, "checkpoint_hash"):
        return encoder.checkpoint_hash()
    blob = Path(spec.checkpoint_path).read_bytes()
    return "sha256:" + hashlib.sha256(blob).hexdigest()


def embed_text(prompt: str, spec: BackboneSpec, out_path) -> np.ndarray:
    """Unit-norm prompt embedding written as a TEMB file; label is verbatim."""
    if not prompt:
        raise ValueError("prompt must be nonempty")
    encoder = get_encoder(spec)
    vec = encoder.embed_text(prompt)
    write_temb(out_path, vec, label=prompt)
    return vec


def refine_mask(image_path, point_doc: str, spec: BackboneSpec, out_path) -> np.ndarray:
    """Point-prompted segmentation; the returned mask contains the prompt pixel."""
    rgb = load_image(image_path)
    return refine_mask_array(rgb, point_doc, spec, out_path)


def refine_mask_array(rgb: np.ndarray, point_doc: str, spec: BackboneSpec,
                      out_path=None) -> np.ndarray:
    point = parse_point_prompt(point_doc)
    h, w = rgb.shape[:2]
    x, y = point["x"], point["y"]
    if not (0 <= x < w and 0 <= y < h):
        raise PointOutOfBounds(f"point ({x}, {y}) outside {w}x{h} image")
    encoder = get_encoder(spec)
    mask = encoder.point_mask(rgb, x, y)
    if out_path is not None:
        save_mask_png(out_path, mask)
    return mask


def save_mask_png(path, mask: np.ndarray) -> None:
    arr = np.where(mask, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


def encode_mask_png(mask: np.ndarray) -> bytes:
    from io import BytesIO
    buf = BytesIO()
    arr = np.where(mask, 255, 0).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(buf, format="PNG")
    return buf.getvalue()
