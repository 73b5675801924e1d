"""Dual-branch optimization: photometric loss on RGB plus an L1 distillation
loss between rendered feature maps and encoder targets.

The optimizer is Adam over six parameter groups (positions, log scales,
rotations, opacity logits, SH colors, features). The position learning rate
decays exponentially from 1.6e-4 x scene_extent to 1.6e-6 x scene_extent;
all other rates are fixed. Adaptive density control (clone/split/prune) is
off by default and driven by accumulated screen-space positional gradients.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .cameras import CameraView
from .colmap_ingest import SceneInputs
from .errors import (
    MissingFeatureMap,
    MissingGroundTruth,
    NonFiniteLoss,
    ShapeMismatch,
)
from .feature_store import FeatureMap, read_fmap, resize_bilinear
from .images import load_rgb
from .metrics import ssim_with_grad
from .rasterizer import RenderConfig, RenderOutput, UpstreamGrads, render, render_backward
from .scene_model import GaussianSet, InitConfig, init_from_sparse, save_gsplat, sigmoid

PARAM_GROUPS = ("positions", "log_scales", "rotations", "opacity_logits",
                "colors_sh", "features")


@dataclass
class LossWeights:
    lambda_ssim: float = 0.2
    gamma_feature: float = 1.0

    def validate(self) -> "LossWeights":
        if not (0.0 <= self.lambda_ssim < 1.0):
            raise ValueError("lambda_ssim must be in [0, 1)")
        if self.gamma_feature < 0.0:
            raise ValueError("gamma_feature must be >= 0")
        return self


@dataclass
class DensifyConfig:
    start_iter: int = 500
    interval: int = 100
    stop_iter: int | None = None              # None -> 0.5 * iterations
    grad_threshold: float = 2e-4
    split_scale_threshold: float | None = None  # None -> 0.01 * scene_extent
    prune_opacity: float = 0.005
    split_children: int = 2
    split_scale_shrink: float = 1.6


@dataclass
class TrainConfig:
    iterations: int = 7000
    lr_position_init: float = 1.6e-4   # x scene_extent
    lr_position_final: float = 1.6e-6  # x scene_extent, reached at the last step
    lr_feature: float = 2.5e-3
    lr_color: float = 2.5e-3
    lr_opacity: float = 5e-2
    lr_scale: float = 5e-3
    lr_rotation: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-15
    densify: DensifyConfig | None = None
    seed: int = 0
    loss: LossWeights = field(default_factory=LossWeights)
    scene_extent: float = 1.0
    checkpoint_interval: int = 0  # 0 -> final checkpoint only
    background_rgb: tuple = (0.0, 0.0, 0.0)
    background_feature: list | None = None
    feature_dim: int = 16  # used when feature maps are absent at init time

    def validate(self) -> "TrainConfig":
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        for name in ("lr_position_init", "lr_position_final", "lr_feature",
                     "lr_color", "lr_opacity", "lr_scale", "lr_rotation"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        self.loss.validate()
        return self

    def render_config(self) -> RenderConfig:
        bgf = None if self.background_feature is None else \
            np.asarray(self.background_feature, dtype=np.float32)
        return RenderConfig(background_rgb=tuple(self.background_rgb),
                            background_feature=bgf)

    def position_lr(self, step: int) -> float:
        """0-based step index; the final step uses exactly lr_position_final."""
        lr0 = self.lr_position_init * self.scene_extent
        lr1 = self.lr_position_final * self.scene_extent
        if self.iterations <= 1 or lr0 == 0.0:
            return lr0
        t = min(step, self.iterations - 1) / (self.iterations - 1)
        return float(lr0 * (lr1 / lr0) ** t)

    def group_lr(self, group: str, step: int) -> float:
        return {
            "positions": self.position_lr(step),
            "log_scales": self.lr_scale,
            "rotations": self.lr_rotation,
            "opacity_logits": self.lr_opacity,
            "colors_sh": self.lr_color,
            "features": self.lr_feature,
        }[group]


def config_from_dict(d: dict) -> TrainConfig:
    """Build a TrainConfig from a parsed declarative config file."""
    d = dict(d or {})
    known = {f.name for f in fields(TrainConfig)}
    unknown = set(d) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    if "densify" in d and d["densify"] is not None:
        dv = d["densify"]
        d["densify"] = None if dv in ("off", "OFF", False) else DensifyConfig(**dv)
    if "loss" in d and d["loss"] is not None:
        d["loss"] = LossWeights(**d["loss"])
    return TrainConfig(**d).validate()


@dataclass
class LossBreakdown:
    l1_rgb: float
    dssim: float
    l1_feature: float
    total: float


@dataclass
class OptimizerState:
    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def zeros(cls, gset: GaussianSet) -> "OptimizerState":
        return cls(step=0,
                   m={k: np.zeros_like(a) for k, a in gset.param_arrays().items()},
                   v={k: np.zeros_like(a) for k, a in gset.param_arrays().items()})


@dataclass
class DensifyStats:
    grad_accum: np.ndarray  # (N,) summed screen-gradient norms
    count: np.ndarray       # (N,) visibility counts

    @classmethod
    def zeros(cls, n: int) -> "DensifyStats":
        return cls(np.zeros(n, dtype=np.float64), np.zeros(n, dtype=np.int64))

    def mean(self) -> np.ndarray:
        return self.grad_accum / np.maximum(self.count, 1)


@dataclass
class TrainView:
    view: CameraView
    gt_rgb: np.ndarray          # (H, W, 3) float32
    target_feature: np.ndarray  # (H, W, F) float32, resized to view resolution


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def _target_array(target_feature) -> np.ndarray:
    if isinstance(target_feature, FeatureMap):
        return target_feature.data
    return np.asarray(target_feature)


def compute_loss(out: RenderOutput, gt_rgb: np.ndarray, target_feature,
                 w: LossWeights) -> LossBreakdown:
    target = _target_array(target_feature)
    if out.rgb.shape != np.asarray(gt_rgb).shape:
        raise ShapeMismatch(f"rgb {out.rgb.shape} vs gt {np.asarray(gt_rgb).shape}")
    if out.feature.shape != target.shape:
        raise ShapeMismatch(f"feature {out.feature.shape} vs target {target.shape}")
    l1_rgb = float(np.mean(np.abs(out.rgb - gt_rgb)))
    dssim, _ = _dssim(out.rgb, gt_rgb, with_grad=False)
    l1_feature = float(np.mean(np.abs(out.feature - target)))
    total = ((1.0 - w.lambda_ssim) * l1_rgb + w.lambda_ssim * dssim
             + w.gamma_feature * l1_feature)
    return LossBreakdown(l1_rgb=l1_rgb, dssim=dssim, l1_feature=l1_feature, total=total)


def _dssim(rgb, gt, with_grad: bool):
    if with_grad:
        value, grad = ssim_with_grad(rgb, gt)
        return 1.0 - value, -grad
    from .metrics import ssim
    return 1.0 - ssim(rgb, gt), None


def loss_gradients(out: RenderOutput, gt_rgb: np.ndarray, target_feature,
                   w: LossWeights) -> tuple[LossBreakdown, UpstreamGrads]:
    """Loss breakdown plus upstream gradients for render_backward."""
    target = _target_array(target_feature)
    diff_rgb = out.rgb - gt_rgb
    l1_rgb = float(np.mean(np.abs(diff_rgb)))
    dssim, dssim_grad = _dssim(out.rgb, gt_rgb, with_grad=True)
    diff_f = out.feature - target
    l1_feature = float(np.mean(np.abs(diff_f)))
    total = ((1.0 - w.lambda_ssim) * l1_rgb + w.lambda_ssim * dssim
             + w.gamma_feature * l1_feature)
    bd = LossBreakdown(l1_rgb=l1_rgb, dssim=dssim, l1_feature=l1_feature, total=total)

    g_rgb = ((1.0 - w.lambda_ssim) * np.sign(diff_rgb) / diff_rgb.size
             + w.lambda_ssim * dssim_grad)
    g_feat = w.gamma_feature * np.sign(diff_f) / diff_f.size
    return bd, UpstreamGrads(rgb=g_rgb, feature=g_feat, alpha=None)


def _check_finite_loss(bd: LossBreakdown) -> None:
    for term in ("l1_rgb", "dssim", "l1_feature", "total"):
        if not np.isfinite(getattr(bd, term)):
            raise NonFiniteLoss(f"loss term {term} is {getattr(bd, term)}")


# ---------------------------------------------------------------------------
# optimization step
# ---------------------------------------------------------------------------

def adam_update(gset: GaussianSet, grads, cfg: TrainConfig,
                state: OptimizerState) -> OptimizerState:
    state.step += 1
    t = state.step
    b1, b2, eps = cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
    params = gset.param_arrays()
    for group in PARAM_GROUPS:
        g = getattr(grads, group)
        lr = cfg.group_lr(group, t - 1)
        m = state.m[group]
        v = state.v[group]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        params[group] -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(params[group].dtype)
    return state


def train_step(gset: GaussianSet, tview: TrainView, cfg: TrainConfig,
               state: OptimizerState, stats: DensifyStats | None = None,
               render_cfg: RenderConfig | None = None
               ) -> tuple[LossBreakdown, OptimizerState]:
    """One forward render, loss, backward, and Adam update (in place)."""
    render_cfg = render_cfg or cfg.render_config()
    out = render(gset, tview.view, render_cfg)
    bd, upstream = loss_gradients(out, tview.gt_rgb, tview.target_feature, cfg.loss)
    _check_finite_loss(bd)
    grads = render_backward(gset, tview.view, render_cfg, upstream)
    if stats is not None:
        stats.grad_accum += grads.screen_grad_norm
        stats.count += grads.visible
    state = adam_update(gset, grads, cfg, state)
    return bd, state


# ---------------------------------------------------------------------------
# densification
# ---------------------------------------------------------------------------

def densify_and_prune(gset: GaussianSet, stats: DensifyStats, cfg: DensifyConfig,
                      opt_state: OptimizerState | None = None,
                      rng: np.random.Generator | None = None,
                      split_scale_threshold: float | None = None
                      ) -> tuple[GaussianSet, DensifyStats, OptimizerState | None]:
    """Clone small / split large high-gradient Gaussians, prune transparent ones.

    Split parents are replaced by `split_children` samples drawn from the
    parent distribution with scales divided by `split_scale_shrink`. Optimizer
    moments for new Gaussians are zero-initialized; stats reset afterward.
    """
    rng = rng or np.random.default_rng(0)
    thresh = split_scale_threshold if split_scale_threshold is not None \
        else (cfg.split_scale_threshold if cfg.split_scale_threshold is not None else 0.01)

    means = stats.mean()
    scales = np.exp(gset.log_scales)
    max_scale = scales.max(axis=1)
    candidates = means >= cfg.grad_threshold
    clone_mask = candidates & (max_scale < thresh)
    split_mask = candidates & (max_scale >= thresh)
    keep_mask = ~split_mask

    params = gset.param_arrays()
    keep_idx = np.nonzero(keep_mask)[0]
    clone_idx = np.nonzero(clone_mask)[0]
    split_idx = np.nonzero(split_mask)[0]

    new_rows = {k: [a[keep_idx], a[clone_idx]] for k, a in params.items()}

    from .scene_model import normalize_quaternions, quat_to_rotmats
    for i in split_idx:
        qn = normalize_quaternions(gset.rotations[i:i + 1].astype(np.float64))
        R = quat_to_rotmats(qn)[0]
        s = scales[i].astype(np.float64)
        for _ in range(cfg.split_children):
            z = rng.standard_normal(3)
            pos = gset.positions[i].astype(np.float64) + R @ (s * z)
            new_rows["positions"].append(pos.astype(gset.positions.dtype)[None])
            child_scale = np.log(s / cfg.split_scale_shrink)
            new_rows["log_scales"].append(child_scale.astype(gset.log_scales.dtype)[None])
            for k in ("rotations", "opacity_logits", "colors_sh", "features"):
                new_rows[k].append(params[k][i:i + 1])

    merged = {k: np.concatenate(v, axis=0) for k, v in new_rows.items()}

    # prune on the assembled set
    opac = sigmoid(merged["opacity_logits"])
    prune_keep = opac >= cfg.prune_opacity
    merged = {k: a[prune_keep] for k, a in merged.items()}

    new_set = GaussianSet(**merged, sh_degree=gset.sh_degree)

    if opt_state is not None:
        n_added = clone_idx.size + split_idx.size * cfg.split_children
        for k in PARAM_GROUPS:
            for mom in (opt_state.m, opt_state.v):
                old = mom[k]
                # survivors keep their moments; every added gaussian starts at zero
                full = np.concatenate(
                    [old[keep_idx],
                     np.zeros((n_added,) + old.shape[1:], dtype=old.dtype)], axis=0)
                mom[k] = full[prune_keep]

    return new_set, DensifyStats.zeros(new_set.count), opt_state


# ---------------------------------------------------------------------------
# full training loop
# ---------------------------------------------------------------------------

@dataclass
class LogRow:
    iteration: int
    l1_rgb: float
    dssim: float
    l1_feature: float
    total: float
    num_gaussians: int
    lr_position: float


LOG_COLUMNS = ("iteration", "l1_rgb", "dssim", "l1_feature", "total",
               "num_gaussians", "lr_position")


def log_to_csv(rows: list[LogRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_COLUMNS)
    for r in rows:
        w.writerow([r.iteration, repr(r.l1_rgb), repr(r.dssim), repr(r.l1_feature),
                    repr(r.total), r.num_gaussians, repr(r.lr_position)])
    return buf.getvalue()


def build_views(scene: SceneInputs, images_dir, split: str = "train") -> list[CameraView]:
    """CameraViews for one split; view_id is the image name without extension."""
    images_dir = Path(images_dir)
    poses = scene.train_views if split == "train" else scene.test_views
    views = []
    for pose in poses:
        intr = scene.intrinsics[pose.camera_id]
        vid = Path(pose.image_name).stem
        views.append(CameraView(view_id=vid, intrinsics=intr, pose=pose,
                                image_path=images_dir / pose.image_name, split=split))
    return views


def load_train_views(scene: SceneInputs, images_dir, feature_dir) -> list[TrainView]:
    """Load GT images and feature targets (resized to view resolution) upfront.

    Raises MissingFeatureMap / MissingGroundTruth before any training happens.
    """
    feature_dir = Path(feature_dir)
    views = build_views(scene, images_dir, "train")
    for v in views:
        if not (feature_dir / f"{v.view_id}.fmap").exists():
            raise MissingFeatureMap(v.view_id)
        if not Path(v.image_path).exists():
            raise MissingGroundTruth(v.view_id)

    tviews = []
    fdim = None
    for v in views:
        fmap = read_fmap(feature_dir / f"{v.view_id}.fmap")
        if fdim is None:
            fdim = fmap.dim
        elif fmap.dim != fdim:
            raise ShapeMismatch(
                f"feature dim {fmap.dim} of {v.view_id} differs from {fdim}")
        if (fmap.height, fmap.width) != (v.height, v.width):
            fmap = resize_bilinear(fmap, v.height, v.width)
        tviews.append(TrainView(view=v, gt_rgb=load_rgb(v.image_path),
                                target_feature=fmap.data.astype(np.float32)))
    return tviews


def train(scene: SceneInputs, images_dir, feature_dir, cfg: TrainConfig,
          checkpoint_path=None, init_cfg: InitConfig | None = None,
          ) -> tuple[GaussianSet, list[LogRow]]:
    """Optimize a fresh GaussianSet against the training split.

    Views are visited in a seeded random permutation, reshuffled per epoch.
    Checkpoints (if a path is given) are written atomically at
    `checkpoint_interval` and at the end.
    """
    cfg.validate()
    cfg.scene_extent = scene.scene_extent
    tviews = load_train_views(scene, images_dir, feature_dir)
    fdim = tviews[0].target_feature.shape[2] if tviews else cfg.feature_dim

    init_cfg = init_cfg or InitConfig(feature_dim=fdim, seed=cfg.seed)
    gset = init_from_sparse(scene.points, init_cfg)

    state = OptimizerState.zeros(gset)
    stats = DensifyStats.zeros(gset.count)
    rng = np.random.default_rng(cfg.seed)
    render_cfg = cfg.render_config()

    dcfg = cfg.densify
    stop_iter = None
    if dcfg is not None:
        stop_iter = dcfg.stop_iter if dcfg.stop_iter is not None \
            else cfg.iterations // 2
        split_thresh = dcfg.split_scale_threshold if dcfg.split_scale_threshold \
            is not None else 0.01 * cfg.scene_extent

    log: list[LogRow] = []
    order = rng.permutation(len(tviews)) if tviews else np.array([], dtype=int)
    cursor = 0
    for it in range(1, cfg.iterations + 1):
        if cursor >= len(order):
            order = rng.permutation(len(tviews))
            cursor = 0
        tv = tviews[order[cursor]]
        cursor += 1

        bd, state = train_step(gset, tv, cfg, state, stats=stats,
                               render_cfg=render_cfg)
        log.append(LogRow(iteration=it, l1_rgb=bd.l1_rgb, dssim=bd.dssim,
                          l1_feature=bd.l1_feature, total=bd.total,
                          num_gaussians=gset.count,
                          lr_position=cfg.position_lr(it - 1)))

        if (dcfg is not None and it >= dcfg.start_iter and it <= stop_iter
                and (it - dcfg.start_iter) % dcfg.interval == 0):
            gset, stats, state = densify_and_prune(
                gset, stats, dcfg, opt_state=state, rng=rng,
                split_scale_threshold=split_thresh)

        if (checkpoint_path is not None and cfg.checkpoint_interval > 0
                and it % cfg.checkpoint_interval == 0):
            p = Path(checkpoint_path)
            save_gsplat(gset, p.with_name(f"{p.stem}_{it:06d}{p.suffix}"))

    if checkpoint_path is not None:
        save_gsplat(gset, checkpoint_path)
    return gset, log
