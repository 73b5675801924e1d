"""Differentiable tile-based splatting of Gaussians carrying color and features.

Forward: project each 3D Gaussian to a 2D splat (EWA-style perspective
linearization), bin splats into tiles, and alpha-composite front to back.
Color and feature channels share the same compositing weights, so rendered
feature maps are exact semantic analogues of the RGB image.

Backward: analytic gradients for all six parameter groups, computed per tile
by replaying the forward compositing and walking it in reverse with suffix
accumulators.

Compositing semantics (shared with the brute-force oracle in the tests):
  * a splat covers pixel (x, y) iff |x - mean_x| <= radius and
    |y - mean_y| <= radius; pixel (x, y) samples at continuous (x, y);
  * per pixel, covered splats composite in (depth, gaussian_index) order;
  * alpha_i = min(alpha_clamp, o_i * exp(-q/2)), q the Mahalanobis form of
    the dilated 2D covariance; contributions with alpha_i < alpha_skip are
    skipped entirely (no transmittance update);
  * a splat contributes only while the pixel's transmittance is at least
    transmittance_stop.

Floating point follows the input GaussianSet dtype: float32 in production,
float64 for gradient verification.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .cameras import CameraView
from .errors import NonFiniteParameter, ShapeMismatch
from .scene_model import (
    ActivatedGaussians,
    GaussianSet,
    activated_view,
    covariance3d_batch,
    quat_to_rotmats,
    sh_basis,
    sh_basis_jacobian,
)


@dataclass
class RenderConfig:
    tile_size: int = 16
    alpha_clamp: float = 0.99
    alpha_skip: float = 1.0 / 255.0
    dilation: float = 0.3            # added to cov2d diagonal (pixel^2)
    background_rgb: tuple = (0.0, 0.0, 0.0)
    background_feature: np.ndarray | None = None  # None -> zeros(F)
    near_plane: float = 0.01
    transmittance_stop: float = 1e-4
    workers: int = 1

    def __post_init__(self):
        if not (0.0 <= self.alpha_skip < self.alpha_clamp < 1.0):
            raise ValueError("need 0 <= alpha_skip < alpha_clamp < 1")


@dataclass
class Splat2D:
    mean2d: np.ndarray   # (2,) pixel coordinates
    cov2d: np.ndarray    # (2, 2) dilated screen-space covariance
    depth: float         # camera-space z
    radius: int          # 3-sigma pixel bound, >= 1
    gaussian_index: int


@dataclass
class RenderOutput:
    rgb: np.ndarray      # (H, W, 3), pre-clamp
    feature: np.ndarray  # (H, W, F)
    alpha: np.ndarray    # (H, W) in [0, 1]
    depth: np.ndarray    # (H, W) alpha-normalized expected depth
    per_pixel_contributor_count: np.ndarray  # (H, W) int32


@dataclass
class GaussianGradients:
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    colors_sh: np.ndarray
    features: np.ndarray
    screen_grad_norm: np.ndarray  # (N,) NDC-convention positional gradient norm
    visible: np.ndarray           # (N,) bool, splat survived culling


@dataclass
class UpstreamGrads:
    rgb: np.ndarray | None = None      # dL/d rgb     (H, W, 3)
    feature: np.ndarray | None = None  # dL/d feature (H, W, F)
    alpha: np.ndarray | None = None    # dL/d alpha   (H, W)


def _check_finite(act: ActivatedGaussians) -> None:
    if act.positions.shape[0] == 0:
        return
    for name, arr in (("positions", act.positions), ("scales", act.scales),
                      ("rotations", act.rotations), ("opacities", act.opacities),
                      ("colors_sh", act.colors_sh), ("features", act.features)):
        flat = arr.reshape(arr.shape[0], -1) if arr.ndim > 1 else arr[:, None]
        bad = ~np.all(np.isfinite(flat), axis=1)
        if bad.any():
            raise NonFiniteParameter(int(np.argmax(bad)), name)


def _eval_colors(act: ActivatedGaussians, sh_degree: int, cam_center: np.ndarray):
    """Per-gaussian RGB for this view: clamp(coeffs . basis(dir) + 0.5, 0)."""
    if sh_degree == 0:
        raw = act.colors_sh[:, :, 0] * np.asarray(0.28209479177387814,
                                                  dtype=act.colors_sh.dtype) + 0.5
        return np.maximum(raw, 0.0), None, None
    v = act.positions - cam_center[None, :].astype(act.positions.dtype)
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    dirs = v / norms
    basis = sh_basis(dirs, sh_degree)
    raw = np.einsum("ncb,nb->nc", act.colors_sh, basis) + 0.5
    return np.maximum(raw, 0.0), dirs, norms[:, 0]


class _Projection:
    """Vectorized projection state shared by forward and backward."""

    def __init__(self, act: ActivatedGaussians, camera: CameraView, cfg: RenderConfig,
                 sh_degree: int):
        dtype = act.positions.dtype
        intr = camera.intrinsics
        self.opacity = act.opacities
        self.fx, self.fy = dtype.type(intr.fx), dtype.type(intr.fy)
        self.cx, self.cy = dtype.type(intr.cx), dtype.type(intr.cy)
        self.width, self.height = intr.width, intr.height
        self.R = camera.pose.rotation().astype(dtype)
        self.tvec = camera.pose.tvec.astype(dtype)
        self.cam_center = camera.pose.camera_center()
        n = act.positions.shape[0]

        self.t_cam = act.positions @ self.R.T + self.tvec
        tz = self.t_cam[:, 2]
        in_front = tz > cfg.near_plane

        self.colors, self.dirs, self.dir_norms = _eval_colors(act, sh_degree,
                                                              self.cam_center)
        self.cov3d = covariance3d_batch(act.scales, act.rotations)

        tz_safe = np.where(in_front, tz, 1.0)
        tx, ty = self.t_cam[:, 0], self.t_cam[:, 1]
        J = np.zeros((n, 2, 3), dtype=dtype)
        J[:, 0, 0] = self.fx / tz_safe
        J[:, 0, 2] = -self.fx * tx / tz_safe ** 2
        J[:, 1, 1] = self.fy / tz_safe
        J[:, 1, 2] = -self.fy * ty / tz_safe ** 2
        self.J = J
        self.M = J @ self.R[None]
        cov2d = self.M @ self.cov3d @ np.swapaxes(self.M, 1, 2)
        cov2d[:, 0, 0] += cfg.dilation
        cov2d[:, 1, 1] += cfg.dilation
        self.cov2d = cov2d

        self.mean2d = np.stack([self.fx * tx / tz_safe + self.cx,
                                self.fy * ty / tz_safe + self.cy], axis=1)

        a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
        det = a * c - b * b
        mid = 0.5 * (a + c)
        lam_max = mid + np.sqrt(np.maximum(mid * mid - det, 0.0))
        self.radius = np.maximum(np.ceil(3.0 * np.sqrt(np.maximum(lam_max, 0.0))),
                                 1.0).astype(np.int64)

        det_safe = np.where(det > 0, det, 1.0)
        self.conic = np.stack([c / det_safe, -b / det_safe, a / det_safe], axis=1)

        r = self.radius.astype(dtype)
        inside = ((self.mean2d[:, 0] + r >= 0) & (self.mean2d[:, 0] - r <= self.width - 1)
                  & (self.mean2d[:, 1] + r >= 0) & (self.mean2d[:, 1] - r <= self.height - 1))
        self.valid = in_front & inside & (det > 0)
        self.depths = tz

    def composite_order(self) -> np.ndarray:
        """Valid splat indices sorted by (depth asc, gaussian_index asc)."""
        idx = np.nonzero(self.valid)[0]
        order = np.lexsort((idx, self.depths[idx]))
        return idx[order]


def project_gaussian(mu, cov3d, camera: CameraView, cfg: RenderConfig,
                     gaussian_index: int = 0) -> Splat2D | None:
    """Project one Gaussian; returns None when culled (behind the near plane
    or farther than `radius` outside the image)."""
    mu = np.asarray(mu, dtype=np.float64).reshape(3)
    cov3d = np.asarray(cov3d, dtype=np.float64).reshape(3, 3)
    intr = camera.intrinsics
    R = camera.pose.rotation()
    t = R @ mu + camera.pose.tvec
    if t[2] <= cfg.near_plane:
        return None
    tx, ty, tz = t
    J = np.array([[intr.fx / tz, 0.0, -intr.fx * tx / tz ** 2],
                  [0.0, intr.fy / tz, -intr.fy * ty / tz ** 2]])
    M = J @ R
    cov2d = M @ cov3d @ M.T
    cov2d[0, 0] += cfg.dilation
    cov2d[1, 1] += cfg.dilation
    mean2d = np.array([intr.fx * tx / tz + intr.cx, intr.fy * ty / tz + intr.cy])
    det = cov2d[0, 0] * cov2d[1, 1] - cov2d[0, 1] ** 2
    mid = 0.5 * (cov2d[0, 0] + cov2d[1, 1])
    lam = mid + np.sqrt(max(mid * mid - det, 0.0))
    radius = int(max(np.ceil(3.0 * np.sqrt(max(lam, 0.0))), 1))
    if (mean2d[0] + radius < 0 or mean2d[0] - radius > intr.width - 1
            or mean2d[1] + radius < 0 or mean2d[1] - radius > intr.height - 1):
        return None
    return Splat2D(mean2d=mean2d, cov2d=cov2d, depth=float(tz), radius=radius,
                   gaussian_index=gaussian_index)


def _tile_lists(proj: _Projection, cfg: RenderConfig):
    ts = cfg.tile_size
    ntx = (proj.width + ts - 1) // ts
    nty = (proj.height + ts - 1) // ts
    tiles: list[list[int]] = [[] for _ in range(ntx * nty)]
    order = proj.composite_order()
    mx, my = proj.mean2d[:, 0], proj.mean2d[:, 1]
    r = proj.radius
    for i in order:
        tx0 = max(0, int(np.floor((mx[i] - r[i]) / ts)))
        tx1 = min(ntx - 1, int(np.floor((mx[i] + r[i]) / ts)))
        ty0 = max(0, int(np.floor((my[i] - r[i]) / ts)))
        ty1 = min(nty - 1, int(np.floor((my[i] + r[i]) / ts)))
        for tyi in range(ty0, ty1 + 1):
            for txi in range(tx0, tx1 + 1):
                tiles[tyi * ntx + txi].append(int(i))
    return tiles, ntx, nty


def _splat_alpha(proj, cfg, i, xs, ys, dtype):
    """Per-pixel (alpha, coverage mask, conic-gradient halves) for splat i."""
    dx = xs - proj.mean2d[i, 0]
    dy = ys - proj.mean2d[i, 1]
    a, b, c = proj.conic[i]
    q = (a * dx * dx)[None, :] + (2.0 * b) * dy[:, None] * dx[None, :] \
        + (c * dy * dy)[:, None]
    g = np.exp(-0.5 * np.maximum(q, 0.0))
    alpha = np.minimum(proj.opacity[i] * g, dtype.type(cfg.alpha_clamp))
    r = proj.radius[i]
    cover = ((np.abs(dx) <= r)[None, :] & (np.abs(dy) <= r)[:, None])
    return dx, dy, alpha, cover


def render(gset: GaussianSet, camera: CameraView, cfg: RenderConfig | None = None
           ) -> RenderOutput:
    cfg = cfg or RenderConfig()
    act = activated_view(gset)
    _check_finite(act)
    dtype = np.dtype(act.positions.dtype)
    H, W = camera.intrinsics.height, camera.intrinsics.width
    F = gset.feature_dim
    C = 3 + F

    bg = np.zeros(C, dtype=dtype)
    bg[:3] = np.asarray(cfg.background_rgb, dtype=dtype)
    if cfg.background_feature is not None:
        bgf = np.asarray(cfg.background_feature, dtype=dtype).reshape(-1)
        if bgf.shape[0] != F:
            raise ShapeMismatch(f"background_feature dim {bgf.shape[0]} != F={F}")
        bg[3:] = bgf

    out = np.zeros((C, H, W), dtype=dtype)
    alpha_img = np.zeros((H, W), dtype=dtype)
    depth_img = np.zeros((H, W), dtype=dtype)
    count_img = np.zeros((H, W), dtype=np.int32)

    if gset.count > 0:
        proj = _Projection(act, camera, cfg, gset.sh_degree)
        colfeat = np.concatenate([proj.colors, act.features], axis=1)  # (N, C)
        tiles, ntx, nty = _tile_lists(proj, cfg)
        ts = cfg.tile_size
        stop = dtype.type(cfg.transmittance_stop)
        skip = dtype.type(cfg.alpha_skip)

        def run_tile(ti):
            splats = tiles[ti]
            tyi, txi = divmod(ti, ntx)
            x0, y0 = txi * ts, tyi * ts
            x1, y1 = min(x0 + ts, W), min(y0 + ts, H)
            th, tw = y1 - y0, x1 - x0
            if not splats:
                return (x0, y0, None)
            xs = np.arange(x0, x1, dtype=dtype)
            ys = np.arange(y0, y1, dtype=dtype)
            T = np.ones((th, tw), dtype=dtype)
            acc = np.zeros((C, th, tw), dtype=dtype)
            dep = np.zeros((th, tw), dtype=dtype)
            cnt = np.zeros((th, tw), dtype=np.int32)
            for i in splats:
                _, _, alpha, cover = _splat_alpha(proj, cfg, i, xs, ys, dtype)
                m = cover & (alpha >= skip) & (T >= stop)
                w = np.where(m, alpha * T, dtype.type(0.0))
                acc += w[None, :, :] * colfeat[i][:, None, None]
                dep += w * proj.depths[i]
                cnt += m
                T = np.where(m, T * (1.0 - alpha), T)
            return (x0, y0, (acc, T, dep, cnt))

        tile_ids = range(len(tiles))
        if cfg.workers > 1:
            with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
                results = list(pool.map(run_tile, tile_ids))
        else:
            results = [run_tile(ti) for ti in tile_ids]

        for x0, y0, payload in results:
            if payload is None:
                continue
            acc, T, dep, cnt = payload
            th, tw = T.shape
            out[:, y0:y0 + th, x0:x0 + tw] = acc
            alpha_img[y0:y0 + th, x0:x0 + tw] = 1.0 - T
            depth_img[y0:y0 + th, x0:x0 + tw] = dep
            count_img[y0:y0 + th, x0:x0 + tw] = cnt

    # background fills the remaining transmittance
    out += (1.0 - alpha_img)[None, :, :] * bg[:, None, None]
    depth = depth_img / np.maximum(alpha_img, dtype.type(1e-8))
    return RenderOutput(
        rgb=np.moveaxis(out[:3], 0, -1).copy(),
        feature=np.moveaxis(out[3:], 0, -1).copy(),
        alpha=alpha_img,
        depth=depth,
        per_pixel_contributor_count=count_img,
    )


def render_backward(gset: GaussianSet, camera: CameraView, cfg: RenderConfig | None,
                    upstream: UpstreamGrads) -> GaussianGradients:
    """Analytic gradients of sum(upstream . output) for every stored parameter.

    Recomputes the forward state per tile rather than caching it from a prior
    render; culled Gaussians receive zero gradients.
    """
    cfg = cfg or RenderConfig()
    act = activated_view(gset)
    _check_finite(act)
    dtype = np.dtype(act.positions.dtype)
    H, W = camera.intrinsics.height, camera.intrinsics.width
    N, F = gset.count, gset.feature_dim
    C = 3 + F

    g_rgb = np.zeros((H, W, 3), dtype=dtype) if upstream.rgb is None \
        else np.asarray(upstream.rgb, dtype=dtype)
    g_feat = np.zeros((H, W, F), dtype=dtype) if upstream.feature is None \
        else np.asarray(upstream.feature, dtype=dtype)
    g_alpha = np.zeros((H, W), dtype=dtype) if upstream.alpha is None \
        else np.asarray(upstream.alpha, dtype=dtype)
    if g_rgb.shape != (H, W, 3) or g_feat.shape != (H, W, F) or g_alpha.shape != (H, W):
        raise ShapeMismatch("upstream gradient shapes do not match the view")

    grads = GaussianGradients(
        positions=np.zeros((N, 3), dtype=dtype),
        log_scales=np.zeros((N, 3), dtype=dtype),
        rotations=np.zeros((N, 4), dtype=dtype),
        opacity_logits=np.zeros(N, dtype=dtype),
        colors_sh=np.zeros_like(gset.colors_sh, dtype=dtype),
        features=np.zeros((N, F), dtype=dtype),
        screen_grad_norm=np.zeros(N, dtype=dtype),
        visible=np.zeros(N, dtype=bool),
    )
    if N == 0:
        return grads

    bg = np.zeros(C, dtype=dtype)
    bg[:3] = np.asarray(cfg.background_rgb, dtype=dtype)
    if cfg.background_feature is not None:
        bg[3:] = np.asarray(cfg.background_feature, dtype=dtype).reshape(-1)

    proj = _Projection(act, camera, cfg, gset.sh_degree)
    colfeat = np.concatenate([proj.colors, act.features], axis=1)
    tiles, ntx, nty = _tile_lists(proj, cfg)
    ts = cfg.tile_size
    stop = dtype.type(cfg.transmittance_stop)
    skip = dtype.type(cfg.alpha_skip)

    # upstream per composited channel, and on total alpha (output rgb/feature
    # carry a (1 - alpha) * background term, so background folds into d/d alpha)
    g_chan = np.concatenate([np.moveaxis(g_rgb, -1, 0),
                             np.moveaxis(g_feat, -1, 0)], axis=0)  # (C, H, W)
    g_A = g_alpha - np.einsum("chw,c->hw", g_chan, bg)

    # per-gaussian accumulators (pre-chain)
    d_colfeat = np.zeros((N, C), dtype=dtype)
    d_mean2d = np.zeros((N, 2), dtype=dtype)
    d_cov2d = np.zeros((N, 2, 2), dtype=dtype)
    d_opacity = np.zeros(N, dtype=dtype)

    def run_tile(ti):
        splats = tiles[ti]
        if not splats:
            return None
        tyi, txi = divmod(ti, ntx)
        x0, y0 = txi * ts, tyi * ts
        x1, y1 = min(x0 + ts, W), min(y0 + ts, H)
        xs = np.arange(x0, x1, dtype=dtype)
        ys = np.arange(y0, y1, dtype=dtype)
        th, tw = y1 - y0, x1 - x0

        # forward replay, keeping per-splat state
        T = np.ones((th, tw), dtype=dtype)
        records = []
        for i in splats:
            _, _, alpha, cover = _splat_alpha(proj, cfg, i, xs, ys, dtype)
            m = cover & (alpha >= skip) & (T >= stop)
            records.append((i, alpha, m, T))
            T = np.where(m, T * (1.0 - alpha), T)

        gc = g_chan[:, y0:y1, x0:x1]
        ga = g_A[y0:y1, x0:x1]
        n_loc = len(splats)
        loc_colfeat = np.zeros((n_loc, C), dtype=dtype)
        loc_mean = np.zeros((n_loc, 2), dtype=dtype)
        loc_cov = np.zeros((n_loc, 2, 2), dtype=dtype)
        loc_op = np.zeros(n_loc, dtype=dtype)

        suffix = np.zeros((C, th, tw), dtype=dtype)   # sum_{j>i} c_j w_j
        suffix_a = np.zeros((th, tw), dtype=dtype)    # sum_{j>i} w_j
        for k in range(n_loc - 1, -1, -1):
            i, alpha, m, T_bef = records[k]
            w = np.where(m, alpha * T_bef, dtype.type(0.0))
            loc_colfeat[k] = np.einsum("chw,hw->c", gc, w)

            one_minus = 1.0 - alpha
            dLda = (np.einsum("chw,c->hw", gc, colfeat[i]) * T_bef
                    - np.einsum("chw,chw->hw", gc, suffix) / one_minus
                    + ga * (T_bef - suffix_a / one_minus))
            dLda = np.where(m & (alpha < cfg.alpha_clamp), dLda, dtype.type(0.0))

            opac = proj.opacity[i]
            loc_op[k] = np.sum(dLda * (alpha / opac))
            dLdq = dLda * (-0.5 * alpha)

            dx = xs - proj.mean2d[i, 0]
            dy = ys - proj.mean2d[i, 1]
            a, b, c = proj.conic[i]
            u1 = a * dx[None, :] + b * dy[:, None]
            u2 = b * dx[None, :] + c * dy[:, None]
            loc_mean[k, 0] = np.sum(dLdq * (-2.0) * u1)
            loc_mean[k, 1] = np.sum(dLdq * (-2.0) * u2)
            loc_cov[k, 0, 0] = np.sum(dLdq * (-u1 * u1))
            loc_cov[k, 0, 1] = np.sum(dLdq * (-u1 * u2))
            loc_cov[k, 1, 1] = np.sum(dLdq * (-u2 * u2))
            loc_cov[k, 1, 0] = loc_cov[k, 0, 1]

            suffix += w[None] * colfeat[i][:, None, None]
            suffix_a += w

        return (np.asarray(splats), loc_colfeat, loc_mean, loc_cov, loc_op)

    tile_ids = range(len(tiles))
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run_tile, tile_ids))
    else:
        results = [run_tile(ti) for ti in tile_ids]

    for res in results:  # fixed tile order keeps accumulation deterministic
        if res is None:
            continue
        idxs, lc, lm, lcov, lop = res
        d_colfeat[idxs] += lc
        d_mean2d[idxs] += lm
        d_cov2d[idxs] += lcov
        d_opacity[idxs] += lop

    # ---- chain per-gaussian accumulators back to stored parameters ----
    valid = proj.valid
    grads.visible = valid.copy()
    v = np.nonzero(valid)[0]
    if v.size == 0:
        return grads

    # densification statistic: positional gradient in the NDC convention
    scale_ndc = np.array([W / 2.0, H / 2.0], dtype=dtype)
    grads.screen_grad_norm[v] = np.linalg.norm(d_mean2d[v] * scale_ndc[None, :], axis=1)

    # opacity logit
    o = act.opacities[v]
    grads.opacity_logits[v] = d_opacity[v] * o * (1.0 - o)

    # colors: clamp mask, SH coefficients, and (for degree > 0) view direction
    d_color = d_colfeat[v, :3]
    grads.features[v] = d_colfeat[v, 3:]
    if gset.sh_degree == 0:
        raw_pos = proj.colors[v] > 0.0
        d_raw = d_color * raw_pos
        grads.colors_sh[v, :, 0] = d_raw * dtype.type(0.28209479177387814)
        d_pos_sh = None
    else:
        basis = sh_basis(proj.dirs[v], gset.sh_degree)           # (nv, B)
        dbasis = sh_basis_jacobian(proj.dirs[v], gset.sh_degree)  # (nv, B, 3)
        raw_pos = proj.colors[v] > 0.0
        d_raw = d_color * raw_pos                                 # (nv, 3)
        grads.colors_sh[v] = d_raw[:, :, None] * basis[:, None, :]
        d_dir = np.einsum("nc,ncb,nbd->nd", d_raw, gset.colors_sh[v].astype(dtype), dbasis)
        dirs = proj.dirs[v]
        proj_mat = (np.eye(3, dtype=dtype)[None] - dirs[:, :, None] * dirs[:, None, :])
        d_pos_sh = np.einsum("nij,nj->ni", proj_mat, d_dir) / proj.dir_norms[v][:, None]

    # cov2d -> (cov3d, J); mean2d -> t_cam
    G2 = d_cov2d[v]                       # symmetric (nv, 2, 2)
    M = proj.M[v]                         # (nv, 2, 3)
    cov3d = proj.cov3d[v]
    d_cov3d = np.einsum("nij,nik,njl->nkl", G2, M, M)   # M^T G2 M
    d_M = 2.0 * np.einsum("nij,njk,nkl->nil", G2, M, cov3d)
    d_J = d_M @ proj.R.T[None]

    fx, fy = proj.fx, proj.fy
    tx, ty, tz = (proj.t_cam[v, 0], proj.t_cam[v, 1], proj.t_cam[v, 2])
    d_t = np.einsum("nij,ni->nj", proj.J[v], d_mean2d[v])   # J^T dL/dmean2d
    d_t[:, 0] += d_J[:, 0, 2] * (-fx / tz ** 2)
    d_t[:, 1] += d_J[:, 1, 2] * (-fy / tz ** 2)
    d_t[:, 2] += (d_J[:, 0, 0] * (-fx / tz ** 2)
                  + d_J[:, 1, 1] * (-fy / tz ** 2)
                  + d_J[:, 0, 2] * (2.0 * fx * tx / tz ** 3)
                  + d_J[:, 1, 2] * (2.0 * fy * ty / tz ** 3))

    grads.positions[v] = d_t @ proj.R
    if d_pos_sh is not None:
        grads.positions[v] += d_pos_sh

    # cov3d = (R_g S)(R_g S)^T -> scales and rotations
    quats = act.rotations[v]
    R_g = quat_to_rotmats(quats)
    s = act.scales[v]
    A = R_g * s[:, None, :]
    d_A = 2.0 * d_cov3d @ A
    d_s = np.einsum("nik,nik->nk", R_g, d_A)
    grads.log_scales[v] = d_s * s
    d_R = d_A * s[:, None, :]

    w_, x_, y_, z_ = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    zero = np.zeros_like(w_)
    dR_dq = np.empty((quats.shape[0], 4, 3, 3), dtype=dtype)
    dR_dq[:, 0] = 2.0 * np.stack([
        np.stack([zero, -z_, y_], -1),
        np.stack([z_, zero, -x_], -1),
        np.stack([-y_, x_, zero], -1)], -2)
    dR_dq[:, 1] = 2.0 * np.stack([
        np.stack([zero, y_, z_], -1),
        np.stack([y_, -2 * x_, -w_], -1),
        np.stack([z_, w_, -2 * x_], -1)], -2)
    dR_dq[:, 2] = 2.0 * np.stack([
        np.stack([-2 * y_, x_, w_], -1),
        np.stack([x_, zero, z_], -1),
        np.stack([-w_, z_, -2 * y_], -1)], -2)
    dR_dq[:, 3] = 2.0 * np.stack([
        np.stack([-2 * z_, -w_, x_], -1),
        np.stack([w_, -2 * z_, y_], -1),
        np.stack([x_, y_, zero], -1)], -2)
    d_qhat = np.einsum("nij,nqij->nq", d_R, dR_dq)

    # unit-normalization jacobian back to the stored quaternion
    q_raw = gset.rotations[v].astype(dtype)
    norms = np.linalg.norm(q_raw, axis=1, keepdims=True)
    qhat = q_raw / norms
    grads.rotations[v] = (d_qhat - qhat * np.sum(qhat * d_qhat, axis=1, keepdims=True)) / norms

    return grads
