"""Camera intrinsics, poses, and quaternion/rotation helpers.

Conventions follow COLMAP: quaternions are (w, x, y, z) and rotate world
coordinates into the camera frame; the camera looks down +z with x right
and y down.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MalformedRecord

# Camera models supported by the rendering pipeline. Radial distortion is
# parsed but never applied; inputs are expected to be pre-undistorted.
SUPPORTED_MODELS = ("PINHOLE", "SIMPLE_PINHOLE", "SIMPLE_RADIAL")

MODEL_IDS = {"SIMPLE_PINHOLE": 0, "PINHOLE": 1, "SIMPLE_RADIAL": 2}
MODEL_NAMES = {v: k for k, v in MODEL_IDS.items()}
MODEL_NUM_PARAMS = {"SIMPLE_PINHOLE": 3, "PINHOLE": 4, "SIMPLE_RADIAL": 4}


@dataclass
class CameraIntrinsics:
    camera_id: int
    model: str
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    radial_k1: float = 0.0

    def validate(self) -> "CameraIntrinsics":
        if self.model not in SUPPORTED_MODELS:
            raise MalformedRecord(f"unsupported model {self.model}")
        if self.width <= 0 or self.height <= 0:
            raise MalformedRecord(f"camera {self.camera_id}: non-positive image size")
        if self.fx <= 0 or self.fy <= 0:
            raise MalformedRecord(f"camera {self.camera_id}: non-positive focal length")
        if not (0 <= self.cx <= self.width) or not (0 <= self.cy <= self.height):
            raise MalformedRecord(f"camera {self.camera_id}: principal point outside image")
        return self

    def params(self) -> list[float]:
        """COLMAP parameter list for this camera's model."""
        if self.model == "PINHOLE":
            return [self.fx, self.fy, self.cx, self.cy]
        if self.model == "SIMPLE_PINHOLE":
            return [self.fx, self.cx, self.cy]
        return [self.fx, self.cx, self.cy, self.radial_k1]


@dataclass
class CameraPose:
    image_id: int
    qw: float
    qx: float
    qy: float
    qz: float
    tx: float
    ty: float
    tz: float
    camera_id: int
    image_name: str

    @property
    def qvec(self) -> np.ndarray:
        return np.array([self.qw, self.qx, self.qy, self.qz], dtype=np.float64)

    @property
    def tvec(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.tz], dtype=np.float64)

    def rotation(self) -> np.ndarray:
        """World-to-camera rotation matrix."""
        return qvec_to_rotmat(self.qvec)

    def camera_center(self) -> np.ndarray:
        """Camera position in world coordinates: -R^T t."""
        return -self.rotation().T @ self.tvec

    def normalized(self) -> "CameraPose":
        q = self.qvec
        n = float(np.linalg.norm(q))
        if n == 0 or not np.isfinite(n):
            raise MalformedRecord(f"image {self.image_id}: zero/non-finite quaternion")
        q = q / n
        return CameraPose(self.image_id, *q.tolist(), self.tx, self.ty, self.tz,
                          camera_id=self.camera_id, image_name=self.image_name)


@dataclass
class CameraView:
    """One posed image: the unit of rendering and training."""
    view_id: str
    intrinsics: CameraIntrinsics
    pose: CameraPose
    image_path: Path | None = None
    split: str = "train"

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height


def qvec_to_rotmat(q) -> np.ndarray:
    w, x, y, z = (float(v) for v in q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ], dtype=np.float64)


def rotmat_to_qvec(R: np.ndarray) -> np.ndarray:
    Rxx, Ryx, Rzx, Rxy, Ryy, Rzy, Rxz, Ryz, Rzz = np.asarray(R, dtype=np.float64).flat
    K = np.array([
        [Rxx - Ryy - Rzz, 0, 0, 0],
        [Ryx + Rxy, Ryy - Rxx - Rzz, 0, 0],
        [Rzx + Rxz, Rzy + Ryz, Rzz - Rxx - Ryy, 0],
        [Ryz - Rzy, Rzx - Rxz, Rxy - Ryx, Rxx + Ryy + Rzz],
    ]) / 3.0
    eigvals, eigvecs = np.linalg.eigh(K)
    q = eigvecs[[3, 0, 1, 2], np.argmax(eigvals)]
    if q[0] < 0:
        q = -q
    return q


def look_at_pose(image_id: int, camera_id: int, image_name: str,
                 position, target, up=(0.0, 0.0, 1.0)) -> CameraPose:
    """Build a world-to-camera pose for a camera at `position` looking at `target`."""
    position = np.asarray(position, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - position
    fn = np.linalg.norm(forward)
    if fn == 0:
        raise ValueError("camera position equals look-at target")
    z = forward / fn
    x = np.cross(z, np.asarray(up, dtype=np.float64))
    xn = np.linalg.norm(x)
    if xn < 1e-12:
        # view direction parallel to up: pick an arbitrary horizontal right axis
        x = np.cross(z, np.array([1.0, 0.0, 0.0]))
        xn = np.linalg.norm(x)
    x = x / xn
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=0)
    t = -R @ position
    q = rotmat_to_qvec(R)
    return CameraPose(image_id, *q.tolist(), *t.tolist(),
                      camera_id=camera_id, image_name=image_name)
