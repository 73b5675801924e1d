"""Optimizable Gaussian scene state and its initialization from sparse points.

Storage uses unconstrained parameterizations (log scales, opacity logits,
raw quaternions); `activated_view` maps them to the rendering domain.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .colmap_ingest import SparsePoints
from .errors import ChecksumMismatch, EmptyPointCloud, MalformedRecord, TruncatedFile, VersionUnsupported

GSPLAT_MAGIC = b"GSPL"
GSPLAT_VERSION = 1

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
         -1.0925484305920792, 0.5462742152960396)
SH_C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
         0.3731763325901154, -0.4570457994644658, 1.445305721320277,
         -0.5900435899266435)

MIN_LOG_SCALE = float(np.log(1e-7))
FALLBACK_NN_DIST = 0.1  # mean-neighbor-distance stand-in when no neighbors exist


@dataclass
class GaussianSet:
    positions: np.ndarray       # (N, 3)
    log_scales: np.ndarray      # (N, 3)
    rotations: np.ndarray       # (N, 4) quaternions, normalized on use
    opacity_logits: np.ndarray  # (N,)
    colors_sh: np.ndarray       # (N, 3, B), B = (sh_degree + 1)^2
    features: np.ndarray        # (N, F)
    sh_degree: int = 0

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def copy(self) -> "GaussianSet":
        return GaussianSet(self.positions.copy(), self.log_scales.copy(),
                           self.rotations.copy(), self.opacity_logits.copy(),
                           self.colors_sh.copy(), self.features.copy(),
                           sh_degree=self.sh_degree)

    def astype(self, dtype) -> "GaussianSet":
        return GaussianSet(*(a.astype(dtype) for a in (
            self.positions, self.log_scales, self.rotations,
            self.opacity_logits, self.colors_sh, self.features)),
            sh_degree=self.sh_degree)

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {"positions": self.positions, "log_scales": self.log_scales,
                "rotations": self.rotations, "opacity_logits": self.opacity_logits,
                "colors_sh": self.colors_sh, "features": self.features}


@dataclass
class ActivatedGaussians:
    positions: np.ndarray  # (N, 3)
    scales: np.ndarray     # (N, 3), exp(log_scales) > 0
    rotations: np.ndarray  # (N, 4), unit quaternions
    opacities: np.ndarray  # (N,), sigmoid of logits in (0, 1)
    colors_sh: np.ndarray  # (N, 3, B)
    features: np.ndarray   # (N, F)


@dataclass
class InitConfig:
    knn_k: int = 3
    opacity_init: float = 0.1
    feature_init: str = "zeros"  # "zeros" | "noise" (gaussian, sigma 0.01)
    feature_noise_sigma: float = 0.01
    sh_degree: int = 0
    feature_dim: int = 16
    seed: int = 0

    def validate(self) -> "InitConfig":
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if not (0.0 < self.opacity_init < 1.0):
            raise ValueError("opacity_init must be in (0, 1)")
        if self.feature_init not in ("zeros", "noise"):
            raise ValueError(f"unknown feature_init {self.feature_init!r}")
        if not (0 <= self.sh_degree <= 3):
            raise ValueError("sh_degree must be in [0, 3]")
        return self


def sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


def normalize_quaternions(q: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(q, axis=-1, keepdims=True)
    return q / norms


def activated_view(gset: GaussianSet) -> ActivatedGaussians:
    """Map stored parameters to rendering-domain values. Read-only."""
    return ActivatedGaussians(
        positions=gset.positions,
        scales=np.exp(gset.log_scales),
        rotations=normalize_quaternions(gset.rotations),
        opacities=sigmoid(gset.opacity_logits),
        colors_sh=gset.colors_sh,
        features=gset.features,
    )


def quat_to_rotmats(q: np.ndarray) -> np.ndarray:
    """(N, 4) unit quaternions (w, x, y, z) -> (N, 3, 3) rotation matrices."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=q.dtype)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def covariance3d(scale, q) -> np.ndarray:
    """Sigma = R diag(s^2) R^T for one Gaussian; symmetric PSD by construction."""
    s = np.asarray(scale, dtype=np.float64).reshape(3)
    qn = np.asarray(q, dtype=np.float64).reshape(4)
    qn = qn / np.linalg.norm(qn)
    R = quat_to_rotmats(qn[None])[0]
    M = R * s[None, :]
    cov = M @ M.T
    return 0.5 * (cov + cov.T)


def covariance3d_batch(scales: np.ndarray, quats: np.ndarray) -> np.ndarray:
    """(N,3) scales and (N,4) unit quaternions -> (N,3,3) covariances."""
    R = quat_to_rotmats(quats)
    M = R * scales[:, None, :]
    return M @ np.swapaxes(M, 1, 2)


# ---------------------------------------------------------------------------
# spherical harmonics
# ---------------------------------------------------------------------------

def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Evaluate the real SH basis used for color: (N, 3) unit dirs -> (N, B).

    Signs are folded into the basis so color = coeffs . basis + 0.5.
    """
    dirs = np.asarray(dirs)
    n = dirs.shape[0]
    B = (degree + 1) ** 2
    out = np.empty((n, B), dtype=dirs.dtype)
    out[:, 0] = SH_C0
    if degree < 1:
        return out
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    out[:, 1] = -SH_C1 * y
    out[:, 2] = SH_C1 * z
    out[:, 3] = -SH_C1 * x
    if degree < 2:
        return out
    xx, yy, zz = x * x, y * y, z * z
    xy, yz, xz = x * y, y * z, x * z
    out[:, 4] = SH_C2[0] * xy
    out[:, 5] = SH_C2[1] * yz
    out[:, 6] = SH_C2[2] * (2 * zz - xx - yy)
    out[:, 7] = SH_C2[3] * xz
    out[:, 8] = SH_C2[4] * (xx - yy)
    if degree < 3:
        return out
    out[:, 9] = SH_C3[0] * y * (3 * xx - yy)
    out[:, 10] = SH_C3[1] * xy * z
    out[:, 11] = SH_C3[2] * y * (4 * zz - xx - yy)
    out[:, 12] = SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
    out[:, 13] = SH_C3[4] * x * (4 * zz - xx - yy)
    out[:, 14] = SH_C3[5] * z * (xx - yy)
    out[:, 15] = SH_C3[6] * x * (xx - yy)
    return out


def sh_basis_jacobian(dirs: np.ndarray, degree: int) -> np.ndarray:
    """d basis / d dir for `sh_basis`: (N, B, 3)."""
    dirs = np.asarray(dirs)
    n = dirs.shape[0]
    B = (degree + 1) ** 2
    J = np.zeros((n, B, 3), dtype=dirs.dtype)
    if degree < 1:
        return J
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    J[:, 1, 1] = -SH_C1
    J[:, 2, 2] = SH_C1
    J[:, 3, 0] = -SH_C1
    if degree < 2:
        return J
    xx, yy, zz = x * x, y * y, z * z
    J[:, 4, 0] = SH_C2[0] * y
    J[:, 4, 1] = SH_C2[0] * x
    J[:, 5, 1] = SH_C2[1] * z
    J[:, 5, 2] = SH_C2[1] * y
    J[:, 6, 0] = SH_C2[2] * (-2 * x)
    J[:, 6, 1] = SH_C2[2] * (-2 * y)
    J[:, 6, 2] = SH_C2[2] * (4 * z)
    J[:, 7, 0] = SH_C2[3] * z
    J[:, 7, 2] = SH_C2[3] * x
    J[:, 8, 0] = SH_C2[4] * (2 * x)
    J[:, 8, 1] = SH_C2[4] * (-2 * y)
    if degree < 3:
        return J
    J[:, 9, 0] = SH_C3[0] * 6 * x * y
    J[:, 9, 1] = SH_C3[0] * (3 * xx - 3 * yy)
    J[:, 10, 0] = SH_C3[1] * y * z
    J[:, 10, 1] = SH_C3[1] * x * z
    J[:, 10, 2] = SH_C3[1] * x * y
    J[:, 11, 0] = SH_C3[2] * (-2 * x * y)
    J[:, 11, 1] = SH_C3[2] * (4 * zz - xx - 3 * yy)
    J[:, 11, 2] = SH_C3[2] * (8 * y * z)
    J[:, 12, 0] = SH_C3[3] * (-6 * x * z)
    J[:, 12, 1] = SH_C3[3] * (-6 * y * z)
    J[:, 12, 2] = SH_C3[3] * (6 * zz - 3 * xx - 3 * yy)
    J[:, 13, 0] = SH_C3[4] * (4 * zz - 3 * xx - yy)
    J[:, 13, 1] = SH_C3[4] * (-2 * x * y)
    J[:, 13, 2] = SH_C3[4] * (8 * x * z)
    J[:, 14, 0] = SH_C3[5] * (2 * x * z)
    J[:, 14, 1] = SH_C3[5] * (-2 * y * z)
    J[:, 14, 2] = SH_C3[5] * (xx - yy)
    J[:, 15, 0] = SH_C3[6] * (3 * xx - yy)
    J[:, 15, 1] = SH_C3[6] * (-2 * x * y)
    return J


def rgb_to_sh0(rgb: np.ndarray) -> np.ndarray:
    """Degree-0 coefficient whose rendered base color equals `rgb`."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def sh0_to_rgb(sh0: np.ndarray) -> np.ndarray:
    return np.asarray(sh0, dtype=np.float64) * SH_C0 + 0.5


# ---------------------------------------------------------------------------
# initialization
# ---------------------------------------------------------------------------

def mean_knn_distances(positions: np.ndarray, k: int, chunk: int = 1024) -> np.ndarray:
    """Mean distance from each point to its k nearest neighbors (brute force)."""
    n = positions.shape[0]
    k_eff = min(k, n - 1)
    if k_eff < 1:
        return np.full(n, FALLBACK_NN_DIST, dtype=np.float64)
    pos = positions.astype(np.float64)
    out = np.empty(n, dtype=np.float64)
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        d2 = ((pos[start:stop, None, :] - pos[None, :, :]) ** 2).sum(axis=-1)
        rows = np.arange(stop - start)
        d2[rows, np.arange(start, stop)] = np.inf  # exclude self
        part = np.partition(d2, k_eff - 1, axis=1)[:, :k_eff]
        out[start:stop] = np.sqrt(part).mean(axis=1)
    return out


def init_from_sparse(points: SparsePoints, cfg: InitConfig | None = None) -> GaussianSet:
    """Standard 3DGS-style initialization from a sparse point cloud."""
    cfg = (cfg or InitConfig()).validate()
    n = len(points)
    if n < 1:
        raise EmptyPointCloud("cannot initialize from an empty point cloud")

    positions = points.positions.astype(np.float32)
    dists = mean_knn_distances(points.positions, cfg.knn_k)
    log_scales = np.log(np.maximum(dists, 1e-300))
    log_scales = np.maximum(log_scales, MIN_LOG_SCALE)
    log_scales = np.repeat(log_scales[:, None], 3, axis=1).astype(np.float32)

    rotations = np.zeros((n, 4), dtype=np.float32)
    rotations[:, 0] = 1.0

    opacity_logits = np.full(n, logit(cfg.opacity_init), dtype=np.float32)

    B = (cfg.sh_degree + 1) ** 2
    colors_sh = np.zeros((n, 3, B), dtype=np.float32)
    colors_sh[:, :, 0] = rgb_to_sh0(points.colors).astype(np.float32)

    if cfg.feature_init == "zeros":
        features = np.zeros((n, cfg.feature_dim), dtype=np.float32)
    else:
        rng = np.random.default_rng(cfg.seed)
        features = rng.normal(0.0, cfg.feature_noise_sigma,
                              size=(n, cfg.feature_dim)).astype(np.float32)

    return GaussianSet(positions, log_scales, rotations, opacity_logits,
                       colors_sh, features, sh_degree=cfg.sh_degree)


# ---------------------------------------------------------------------------
# checkpoint format (scene.gsplat)
# ---------------------------------------------------------------------------

def save_gsplat(gset: GaussianSet, path) -> None:
    """Write the little-endian checkpoint: header, f32 arrays, payload CRC32."""
    B = gset.colors_sh.shape[2]
    if B != (gset.sh_degree + 1) ** 2:
        raise MalformedRecord("colors_sh width inconsistent with sh_degree")
    header = GSPLAT_MAGIC + struct.pack("<IQII", GSPLAT_VERSION, gset.count,
                                        gset.feature_dim, gset.sh_degree)
    arrays = [gset.positions, gset.log_scales, gset.rotations,
              gset.opacity_logits, gset.colors_sh, gset.features]
    payload = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    tmp = Path(str(path) + ".tmp")
    tmp.write_bytes(header + payload + struct.pack("<I", crc))
    tmp.replace(path)


def load_gsplat(path) -> GaussianSet:
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise TruncatedFile(f"{path}: shorter than header")
    if raw[:4] != GSPLAT_MAGIC:
        raise MalformedRecord(f"{path}: bad magic {raw[:4]!r}")
    version, count, fdim, sh_degree = struct.unpack("<IQII", raw[4:24])
    if version != GSPLAT_VERSION:
        raise VersionUnsupported(f"gsplat version {version}")
    B = (sh_degree + 1) ** 2
    sizes = [count * 3, count * 3, count * 4, count, count * 3 * B, count * fdim]
    total = sum(sizes) * 4
    if len(raw) != 24 + total + 4:
        raise TruncatedFile(f"{path}: expected {24 + total + 4} bytes, got {len(raw)}")
    payload = raw[24:24 + total]
    (crc,) = struct.unpack("<I", raw[24 + total:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumMismatch(f"{path}: payload CRC mismatch")
    flat = np.frombuffer(payload, dtype="<f4")
    offsets = np.cumsum([0] + sizes)
    arrs = [flat[offsets[i]:offsets[i + 1]].copy() for i in range(6)]
    return GaussianSet(
        positions=arrs[0].reshape(count, 3),
        log_scales=arrs[1].reshape(count, 3),
        rotations=arrs[2].reshape(count, 4),
        opacity_logits=arrs[3].reshape(count),
        colors_sh=arrs[4].reshape(count, 3, B),
        features=arrs[5].reshape(count, fdim),
        sh_degree=int(sh_degree),
    )
