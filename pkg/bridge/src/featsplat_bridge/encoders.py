"""Encoder backbones behind a common interface.

Real foundation models (LSeg/CLIP, SAM, SAM2) are consumed as external
checkpoints; their adapters register here. This sandbox ships with `mock`,
a deterministic checkpoint-free encoder that honors every contract (dense
per-pixel features, unit-norm text embeddings, point-seeded masks) so the
pipeline and wire formats can be exercised end to end without model weights.
"""
from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass

import numpy as np


class ModelUnavailable(Exception):
    pass


class CheckpointMissing(Exception):
    pass


class PointOutOfBounds(Exception):
    pass


@dataclass
class BackboneSpec:
    name: str                      # lseg | sam | sam2 | mock
    checkpoint_path: str = ""
    output_dim: int = 16
    target_resolution: tuple[int, int] | None = None  # (h, w); None keeps input size


class MockEncoder:
    """Deterministic stand-in encoder.

    Image features: a fixed seeded projection of per-pixel color+position
    descriptors, L2-normalized. Text embeddings: unit vectors seeded from the
    SHA-256 of the prompt. Masks: color-similarity region growing from the
    prompt point (the returned mask always contains it).
    """

    name = "mock"
    color_threshold = 0.12

    def __init__(self, output_dim: int = 16):
        self.output_dim = output_dim
        rng = np.random.default_rng(20240915)
        self._proj = rng.normal(size=(6, output_dim))

    def checkpoint_hash(self) -> str:
        return "builtin:mock"

    def embed_image(self, rgb: np.ndarray) -> np.ndarray:
        h, w, _ = rgb.shape
        ys, xs = np.mgrid[0:h, 0:w]
        desc = np.stack([rgb[..., 0], rgb[..., 1], rgb[..., 2],
                         xs / max(w - 1, 1), ys / max(h - 1, 1),
                         np.ones((h, w))], axis=-1)
        feats = desc @ self._proj
        norms = np.linalg.norm(feats, axis=-1, keepdims=True)
        return (feats / np.maximum(norms, 1e-12)).astype(np.float32)

    def embed_text(self, prompt: str) -> np.ndarray:
        digest = hashlib.sha256(prompt.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.default_rng(seed)
        v = rng.normal(size=self.output_dim)
        return (v / np.linalg.norm(v)).astype(np.float32)

    def point_mask(self, rgb: np.ndarray, x: int, y: int) -> np.ndarray:
        h, w, _ = rgb.shape
        seed_color = rgb[y, x]
        mask = np.zeros((h, w), dtype=bool)
        mask[y, x] = True
        queue = deque([(y, x)])
        thr2 = self.color_threshold ** 2
        while queue:
            cy, cx = queue.popleft()
            for ny, nx in ((cy - 1, cx), (cy + 1, cx), (cy, cx - 1), (cy, cx + 1)):
                if 0 <= ny < h and 0 <= nx < w and not mask[ny, nx]:
                    d2 = float(np.sum((rgb[ny, nx] - seed_color) ** 2))
                    if d2 <= thr2:
                        mask[ny, nx] = True
                        queue.append((ny, nx))
        return mask


def _unavailable(name: str, hint: str):
    def factory(spec: BackboneSpec):
        raise ModelUnavailable(
            f"backbone {name!r} needs an external checkpoint and runtime ({hint}); "
            "none is bundled. Use --backbone mock for a deterministic stand-in.")
    return factory


_REGISTRY = {
    "mock": lambda spec: MockEncoder(output_dim=spec.output_dim),
    "lseg": _unavailable("lseg", "LSeg repo + CLIP weights"),
    "sam": _unavailable("sam", "segment-anything weights"),
    "sam2": _unavailable("sam2", "sam2 package + weights"),
}


def register_backbone(name: str, factory) -> None:
    _REGISTRY[name] = factory


def get_encoder(spec: BackboneSpec):
    if spec.name not in _REGISTRY:
        raise ModelUnavailable(f"unknown backbone {spec.name!r}; "
                               f"known: {sorted(_REGISTRY)}")
    return _REGISTRY[spec.name](spec)
