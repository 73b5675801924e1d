"""Language-guided querying over rendered feature maps.

Pipeline: cosine heatmap against a text embedding -> threshold to a rough
binary mask -> argmax pixel as a point prompt for an external mask refiner.
Also provides label-set segmentation and PCA visualization of feature maps.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateInput, DimMismatch, ShapeMismatch
from .feature_store import FeatureMap, TextEmbedding

# Heatmap colormap: piecewise-linear dark-blue -> blue -> cyan -> yellow -> red
# over the normalized value in [0, 1].
COLORMAP_STOPS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
COLORMAP_COLORS = np.array([
    [0.0, 0.0, 0.35],
    [0.0, 0.0, 1.0],
    [0.0, 1.0, 1.0],
    [1.0, 1.0, 0.0],
    [1.0, 0.0, 0.0],
])


@dataclass
class QueryHeatmap:
    raw: np.ndarray         # (H, W) cosine values in [-1, 1]
    normalized: np.ndarray  # (H, W) = (raw + 1) / 2
    prompt_label: str

    @property
    def height(self) -> int:
        return self.raw.shape[0]

    @property
    def width(self) -> int:
        return self.raw.shape[1]


@dataclass
class BinaryMask:
    bits: np.ndarray  # (H, W) bool
    threshold_used: float

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]


@dataclass
class PointPrompt:
    x: int  # column, origin top-left
    y: int  # row
    score: float
    prompt_label: str
    view_id: str = ""

    def document(self, image_width: int, image_height: int) -> str:
        """Serialized form consumed by external mask refiners and the viewer."""
        return json.dumps({
            "view_id": self.view_id,
            "prompt_label": self.prompt_label,
            "x": self.x,
            "y": self.y,
            "score": self.score,
            "image_width": image_width,
            "image_height": image_height,
            "source": "lseg_argmax",
        }, sort_keys=True)


def parse_point_prompt(doc: str) -> PointPrompt:
    d = json.loads(doc)
    return PointPrompt(x=int(d["x"]), y=int(d["y"]), score=float(d["score"]),
                       prompt_label=str(d["prompt_label"]),
                       view_id=str(d.get("view_id", "")))


def cosine_heatmap(feature: FeatureMap, t: TextEmbedding, eps: float = 1e-8
                   ) -> QueryHeatmap:
    """Per-pixel cosine similarity; pixels with near-zero feature norm get 0."""
    if feature.dim != t.dim:
        raise DimMismatch(f"feature dim {feature.dim} != embedding dim {t.dim}")
    f = feature.data.astype(np.float64)
    v = t.vector.astype(np.float64)
    fnorm = np.linalg.norm(f, axis=2)
    dots = f @ v
    raw = dots / (fnorm * np.linalg.norm(v) + eps)
    raw = np.where(fnorm < eps, 0.0, raw)
    raw = np.clip(raw, -1.0, 1.0)
    return QueryHeatmap(raw=raw, normalized=(raw + 1.0) / 2.0, prompt_label=t.label)


def threshold_mask(h: QueryHeatmap, tau: float) -> BinaryMask:
    if not (0.0 <= tau <= 1.0):
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    return BinaryMask(bits=h.normalized >= tau, threshold_used=float(tau))


def argmax_point(h: QueryHeatmap, view_id: str = "") -> PointPrompt:
    """Global maximum of the normalized heatmap; ties break to smallest
    (y, x) in row-major order."""
    if h.raw.size == 0:
        raise DegenerateInput("empty heatmap")
    flat = int(np.argmax(h.normalized))
    y, x = divmod(flat, h.width)
    return PointPrompt(x=x, y=y, score=float(h.normalized[y, x]),
                       prompt_label=h.prompt_label, view_id=view_id)


def label_segmentation(feature: FeatureMap, labels: list[TextEmbedding],
                       eps: float = 1e-8) -> np.ndarray:
    """Per-pixel argmax of raw cosine across labels; ties to the lowest index."""
    if not labels:
        raise ValueError("labels must be nonempty")
    stacked = np.stack([cosine_heatmap(feature, t, eps).raw for t in labels])
    return np.argmax(stacked, axis=0).astype(np.int32)


def pca_visualize(feature: FeatureMap) -> np.ndarray:
    """Project pixel features onto the top-3 principal components as RGB.

    Deterministic: eigendecomposition of the F x F covariance, each component
    sign-flipped so its largest-magnitude loading is positive, channels
    min-max normalized. Constant channels (including the all-identical-pixels
    case) map to 0.5.
    """
    h, w = feature.height, feature.width
    if h * w < 3:
        raise DegenerateInput("need at least 3 pixels for PCA visualization")
    X = feature.data.reshape(-1, feature.dim).astype(np.float64)
    Xc = X - X.mean(axis=0, keepdims=True)
    cov = (Xc.T @ Xc) / X.shape[0]
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    n_comp = min(3, feature.dim)
    out = np.full((h * w, 3), 0.5)
    for ch in range(n_comp):
        v = eigvecs[:, order[ch]]
        lead = int(np.argmax(np.abs(v)))
        if v[lead] < 0:
            v = -v
        proj = Xc @ v
        lo, hi = float(proj.min()), float(proj.max())
        if hi - lo <= 1e-12 * max(1.0, abs(hi), abs(lo)):
            continue  # constant channel stays at 0.5
        out[:, ch] = (proj - lo) / (hi - lo)
    return out.reshape(h, w, 3)


def heatmap_colors(normalized: np.ndarray) -> np.ndarray:
    """Map normalized heatmap values through the documented colormap."""
    vals = np.clip(np.asarray(normalized, dtype=np.float64), 0.0, 1.0)
    out = np.empty(vals.shape + (3,))
    for c in range(3):
        out[..., c] = np.interp(vals, COLORMAP_STOPS, COLORMAP_COLORS[:, c])
    return out


def overlay(base_rgb: np.ndarray, layer, style: str = "auto") -> np.ndarray:
    """Blend a heatmap or mask over a base image at 50% alpha.

    Heatmaps blend through the colormap; masks tint foreground pixels red.
    """
    base = np.asarray(base_rgb, dtype=np.float64)
    if style == "auto":
        style = "heatmap" if isinstance(layer, QueryHeatmap) else "mask"
    if style == "heatmap":
        if not isinstance(layer, QueryHeatmap):
            raise ValueError("heatmap style requires a QueryHeatmap")
        if base.shape[:2] != layer.raw.shape:
            raise ShapeMismatch(f"base {base.shape[:2]} vs heatmap {layer.raw.shape}")
        return 0.5 * base + 0.5 * heatmap_colors(layer.normalized)
    if style == "mask":
        bits = layer.bits if isinstance(layer, BinaryMask) else np.asarray(layer, dtype=bool)
        if base.shape[:2] != bits.shape:
            raise ShapeMismatch(f"base {base.shape[:2]} vs mask {bits.shape}")
        red = np.array([1.0, 0.0, 0.0])
        out = base.copy()
        out[bits] = 0.5 * base[bits] + 0.5 * red
        return out
    raise ValueError(f"unknown overlay style {style!r}")
