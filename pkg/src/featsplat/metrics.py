"""PSNR and SSIM image-quality metrics plus test-split evaluation.

SSIM follows the standard configuration: 11x11 gaussian window (sigma 1.5),
K1=0.01, K2=0.03, dynamic range 1.0, covariances normalized by the window
weights. The map is computed same-size with edge-symmetric padding and the
scalar averages the valid interior (positions whose window needs no padding),
which is where reference implementations agree exactly.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from .errors import MissingGroundTruth, ShapeMismatch, TooSmall
from .images import load_rgb

PSNR_CAP_DB = 100.0

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
_PAD = (SSIM_WIN - 1) // 2


def _window() -> np.ndarray:
    x = np.arange(SSIM_WIN) - _PAD
    w = np.exp(-0.5 * (x / SSIM_SIGMA) ** 2)
    return w / w.sum()


_W = _window()


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """10*log10(1/MSE) for images in [0, 1], capped at +100 dB."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"psnr: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return float(min(PSNR_CAP_DB, 10.0 * np.log10(1.0 / mse)))


def _blur(img: np.ndarray) -> np.ndarray:
    out = correlate1d(img, _W, axis=0, mode="reflect")
    return correlate1d(out, _W, axis=1, mode="reflect")


def _ssim_channel(x: np.ndarray, y: np.ndarray, with_grad: bool):
    C1 = SSIM_K1 ** 2
    C2 = SSIM_K2 ** 2
    mx = _blur(x)
    my = _blur(y)
    x2 = _blur(x * x)
    y2 = _blur(y * y)
    xy = _blur(x * y)
    vx = x2 - mx * mx
    vy = y2 - my * my
    cxy = xy - mx * my

    A1 = 2 * mx * my + C1
    A2 = 2 * cxy + C2
    B1 = mx * mx + my * my + C1
    B2 = vx + vy + C2
    S = (A1 * A2) / (B1 * B2)

    h, w = x.shape
    interior = S[_PAD:h - _PAD, _PAD:w - _PAD]
    value = float(interior.mean())
    if not with_grad:
        return value, None

    # d mean(S)/dx restricted to the interior positions that form the mean
    M = np.zeros_like(S)
    M[_PAD:h - _PAD, _PAD:w - _PAD] = 1.0 / interior.size
    g1 = (2.0 / (B1 * B2)) * my * (A2 - A1) + 2.0 * mx * S * (1.0 / B2 - 1.0 / B1)
    g2 = -S / B2
    g3 = 2.0 * A1 / (B1 * B2)
    grad = _blur(M * g1) + 2.0 * x * _blur(M * g2) + y * _blur(M * g3)
    return value, grad


def _check_ssim_inputs(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeMismatch(f"ssim: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[..., None]
        b = b[..., None]
    if a.ndim != 3:
        raise ShapeMismatch(f"ssim expects HxW or HxWxC, got {a.shape}")
    if min(a.shape[0], a.shape[1]) < SSIM_WIN:
        raise TooSmall(f"ssim needs min(H, W) >= {SSIM_WIN}, got {a.shape[:2]}")
    return a, b


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean SSIM, computed per channel and averaged."""
    a, b = _check_ssim_inputs(np.asarray(a, dtype=np.float64),
                              np.asarray(b, dtype=np.float64))
    vals = [_ssim_channel(a[..., c], b[..., c], with_grad=False)[0]
            for c in range(a.shape[2])]
    return float(np.mean(vals))


def ssim_with_grad(a: np.ndarray, b: np.ndarray) -> tuple[float, np.ndarray]:
    """SSIM value and its analytic gradient with respect to `a`."""
    a64, b64 = _check_ssim_inputs(np.asarray(a, dtype=np.float64),
                                  np.asarray(b, dtype=np.float64))
    vals = []
    grads = np.empty_like(a64)
    for c in range(a64.shape[2]):
        v, g = _ssim_channel(a64[..., c], b64[..., c], with_grad=True)
        vals.append(v)
        grads[..., c] = g / a64.shape[2]
    value = float(np.mean(vals))
    if np.asarray(a).ndim == 2:
        return value, grads[..., 0]
    return value, grads


# ---------------------------------------------------------------------------
# test-split evaluation
# ---------------------------------------------------------------------------

@dataclass
class ViewMetrics:
    view_id: str
    psnr_db: float
    ssim: float


@dataclass
class MetricReport:
    per_view: list[ViewMetrics] = field(default_factory=list)

    @property
    def mean_psnr_db(self) -> float:
        return float(np.mean([v.psnr_db for v in self.per_view]))

    @property
    def mean_ssim(self) -> float:
        return float(np.mean([v.ssim for v in self.per_view]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["view_id", "psnr_db", "ssim"])
        for v in self.per_view:
            w.writerow([v.view_id, repr(v.psnr_db), repr(v.ssim)])
        w.writerow(["mean", repr(self.mean_psnr_db), repr(self.mean_ssim)])
        return buf.getvalue()


def quantize8(rgb: np.ndarray) -> np.ndarray:
    """Clamp and round exactly as the 8-bit PNG exporter does."""
    return np.floor(np.clip(rgb, 0.0, 1.0) * 255.0 + 0.5) / 255.0


def evaluate(gset, views, cfg=None) -> MetricReport:
    """Render each test view and compare to its photograph.

    Ground truth comes from 8-bit PNGs, so the render is quantized to the
    same 8-bit domain first; a scene evaluated against its own exported
    renders therefore reports exactly the PSNR cap and SSIM 1.
    """
    from .rasterizer import RenderConfig, render

    if not views:
        raise MissingGroundTruth("empty test split")
    cfg = cfg or RenderConfig()
    report = MetricReport()
    for view in views:
        if view.image_path is None:
            raise MissingGroundTruth(view.view_id)
        try:
            gt = load_rgb(view.image_path)
        except FileNotFoundError as e:
            raise MissingGroundTruth(view.view_id) from e
        out = render(gset, view, cfg)
        rgb = quantize8(out.rgb)
        report.per_view.append(ViewMetrics(view.view_id, psnr(rgb, gt), ssim(rgb, gt)))
    return report
