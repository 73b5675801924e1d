"""COLMAP sparse-model ingestion.

Reads `cameras`, `images`, and `points3D` files in both the text and the
little-endian binary layout, validates them, and assembles SceneInputs with
a deterministic name-sorted train/test split. Writers for both encodings
are provided so models can be re-serialized (fixtures, synthetic scenes).

2D observations and 3D point tracks are parsed and discarded; only poses,
intrinsics, and point positions/colors feed the pipeline.
"""
from __future__ import annotations

import re
import struct
import warnings
from dataclasses import dataclass
from io import BytesIO
from pathlib import Path

import numpy as np

from .cameras import (
    MODEL_IDS,
    MODEL_NAMES,
    MODEL_NUM_PARAMS,
    SUPPORTED_MODELS,
    CameraIntrinsics,
    CameraPose,
)
from .errors import (
    DegenerateExtent,
    InconsistentReferences,
    MalformedRecord,
    MissingFile,
    NonFiniteValue,
    TruncatedFile,
    UnsupportedCameraModel,
)

TEXT = "text"
BINARY = "binary"


@dataclass
class SparsePoints:
    positions: np.ndarray  # (N, 3) float64, world coordinates
    colors: np.ndarray     # (N, 3) float64 in [0, 1]
    point_ids: np.ndarray  # (N,) int64

    def __len__(self) -> int:
        return self.positions.shape[0]


@dataclass
class SceneInputs:
    intrinsics: dict[int, CameraIntrinsics]
    train_views: list[CameraPose]
    test_views: list[CameraPose]
    points: SparsePoints
    scene_extent: float


def _check_format(fmt: str) -> str:
    if fmt not in (TEXT, BINARY):
        raise ValueError(f"format must be '{TEXT}' or '{BINARY}', got {fmt!r}")
    return fmt


def _read_exact(buf: BytesIO, n: int, what: str) -> bytes:
    data = buf.read(n)
    if len(data) != n:
        raise TruncatedFile(f"unexpected EOF while reading {what}")
    return data


def _unpack(buf: BytesIO, fmt: str, what: str) -> tuple:
    size = struct.calcsize("<" + fmt)
    return struct.unpack("<" + fmt, _read_exact(buf, size, what))


def _text_lines(data: bytes) -> list[str]:
    try:
        return data.decode("utf-8").splitlines()
    except UnicodeDecodeError as e:
        raise MalformedRecord(f"not valid UTF-8 text: {e}") from e


def _intrinsics_from_params(camera_id: int, model: str, width: int, height: int,
                            params: list[float]) -> CameraIntrinsics:
    if model not in SUPPORTED_MODELS:
        raise UnsupportedCameraModel(model)
    if len(params) != MODEL_NUM_PARAMS[model]:
        raise MalformedRecord(
            f"camera {camera_id}: {model} expects {MODEL_NUM_PARAMS[model]} params, "
            f"got {len(params)}")
    if model == "PINHOLE":
        fx, fy, cx, cy = params
        k1 = 0.0
    elif model == "SIMPLE_PINHOLE":
        fx, cx, cy = params
        fy = fx
        k1 = 0.0
    else:  # SIMPLE_RADIAL
        fx, cx, cy, k1 = params
        fy = fx
    if k1 != 0.0 and abs(k1) > 1e-6:
        warnings.warn(
            f"camera {camera_id}: radial k1={k1:g} ignored by the renderer; "
            "images are assumed pre-undistorted", stacklevel=3)
    cam = CameraIntrinsics(camera_id, model, int(width), int(height),
                           float(fx), float(fy), float(cx), float(cy), float(k1))
    return cam.validate()


# ---------------------------------------------------------------------------
# cameras
# ---------------------------------------------------------------------------

def parse_cameras(data: bytes, fmt: str = TEXT) -> list[CameraIntrinsics]:
    _check_format(fmt)
    if fmt == TEXT:
        cams = []
        for lineno, line in enumerate(_text_lines(data), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            if len(toks) < 4:
                raise MalformedRecord(f"cameras line {lineno}: too few fields")
            try:
                camera_id = int(toks[0])
                model = toks[1]
                width, height = int(toks[2]), int(toks[3])
                params = [float(t) for t in toks[4:]]
            except ValueError as e:
                raise MalformedRecord(f"cameras line {lineno}: {e}") from e
            cams.append(_intrinsics_from_params(camera_id, model, width, height, params))
        return cams

    buf = BytesIO(data)
    (count,) = _unpack(buf, "Q", "camera count")
    cams = []
    for _ in range(count):
        camera_id, model_id, width, height = _unpack(buf, "iiQQ", "camera record")
        if model_id not in MODEL_NAMES:
            raise UnsupportedCameraModel(f"model id {model_id}")
        model = MODEL_NAMES[model_id]
        n = MODEL_NUM_PARAMS[model]
        params = list(_unpack(buf, "d" * n, "camera params"))
        cams.append(_intrinsics_from_params(camera_id, model, width, height, params))
    return cams


def write_cameras_text(cams: list[CameraIntrinsics]) -> bytes:
    lines = ["# Camera list with one line of data per camera:",
             "#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]",
             f"# Number of cameras: {len(cams)}"]
    for c in cams:
        params = " ".join(repr(p) for p in c.params())
        lines.append(f"{c.camera_id} {c.model} {c.width} {c.height} {params}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def write_cameras_binary(cams: list[CameraIntrinsics]) -> bytes:
    out = [struct.pack("<Q", len(cams))]
    for c in cams:
        out.append(struct.pack("<iiQQ", c.camera_id, MODEL_IDS[c.model], c.width, c.height))
        out.append(struct.pack("<" + "d" * len(c.params()), *c.params()))
    return b"".join(out)


# ---------------------------------------------------------------------------
# images
# ---------------------------------------------------------------------------

def _finish_pose(pose: CameraPose) -> CameraPose:
    vals = [pose.qw, pose.qx, pose.qy, pose.qz, pose.tx, pose.ty, pose.tz]
    if not all(np.isfinite(v) for v in vals):
        raise NonFiniteValue(f"image {pose.image_id}: non-finite pose value")
    return pose.normalized()


def parse_images(data: bytes, fmt: str = TEXT) -> list[CameraPose]:
    _check_format(fmt)
    poses = []
    if fmt == TEXT:
        lines = _text_lines(data)
        i = 0
        while i < len(lines):
            line = lines[i].strip()
            i += 1
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            if len(toks) < 10:
                raise MalformedRecord(f"images record: expected 10 fields, got {len(toks)}")
            try:
                image_id = int(toks[0])
                q = [float(t) for t in toks[1:5]]
                t = [float(x) for x in toks[5:8]]
                camera_id = int(toks[8])
            except ValueError as e:
                raise MalformedRecord(f"images record {toks[0]}: {e}") from e
            name = " ".join(toks[9:])
            pose = CameraPose(image_id, *q, *t, camera_id=camera_id, image_name=name)
            poses.append(_finish_pose(pose))
            # next line holds 2D observations (possibly empty); read and discard
            if i < len(lines):
                i += 1
    else:
        buf = BytesIO(data)
        (count,) = _unpack(buf, "Q", "image count")
        for _ in range(count):
            rec = _unpack(buf, "idddddddi", "image record")
            image_id, qw, qx, qy, qz, tx, ty, tz, camera_id = rec
            name_bytes = bytearray()
            while True:
                ch = _read_exact(buf, 1, "image name")
                if ch == b"\x00":
                    break
                name_bytes += ch
            (num_points2d,) = _unpack(buf, "Q", "observation count")
            _read_exact(buf, 24 * num_points2d, "observations")  # x, y, point3D_id
            pose = CameraPose(image_id, qw, qx, qy, qz, tx, ty, tz,
                              camera_id=camera_id,
                              image_name=name_bytes.decode("utf-8"))
            poses.append(_finish_pose(pose))
    poses.sort(key=lambda p: p.image_id)
    return poses


def write_images_text(poses: list[CameraPose]) -> bytes:
    lines = ["# Image list with two lines of data per image:",
             "#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME",
             "#   POINTS2D[] as (X, Y, POINT3D_ID)"]
    for p in poses:
        vals = " ".join(repr(v) for v in (p.qw, p.qx, p.qy, p.qz, p.tx, p.ty, p.tz))
        lines.append(f"{p.image_id} {vals} {p.camera_id} {p.image_name}")
        lines.append("")  # no observations
    return ("\n".join(lines) + "\n").encode("utf-8")


def write_images_binary(poses: list[CameraPose]) -> bytes:
    out = [struct.pack("<Q", len(poses))]
    for p in poses:
        out.append(struct.pack("<idddddddi", p.image_id, p.qw, p.qx, p.qy, p.qz,
                               p.tx, p.ty, p.tz, p.camera_id))
        out.append(p.image_name.encode("utf-8") + b"\x00")
        out.append(struct.pack("<Q", 0))  # no observations
    return b"".join(out)


# ---------------------------------------------------------------------------
# points3D
# ---------------------------------------------------------------------------

def parse_points3d(data: bytes, fmt: str = TEXT) -> SparsePoints:
    _check_format(fmt)
    ids, positions, colors = [], [], []
    if fmt == TEXT:
        for lineno, line in enumerate(_text_lines(data), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            toks = line.split()
            if len(toks) < 8:
                raise MalformedRecord(f"points3D line {lineno}: too few fields")
            try:
                pid = int(toks[0])
                xyz = [float(t) for t in toks[1:4]]
                rgb = [int(t) for t in toks[4:7]]
            except ValueError as e:
                raise MalformedRecord(f"points3D line {lineno}: {e}") from e
            ids.append(pid)
            positions.append(xyz)
            colors.append(rgb)
    else:
        buf = BytesIO(data)
        (count,) = _unpack(buf, "Q", "point count")
        for _ in range(count):
            rec = _unpack(buf, "QdddBBBd", "point record")
            pid, x, y, z, r, g, b, _err = rec
            (track_len,) = _unpack(buf, "Q", "track length")
            _read_exact(buf, 8 * track_len, "track")  # image_id, point2D_idx pairs
            ids.append(pid)
            positions.append([x, y, z])
            colors.append([r, g, b])

    pos = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    col = np.asarray(colors, dtype=np.float64).reshape(-1, 3) / 255.0
    if pos.size and not np.all(np.isfinite(pos)):
        raise MalformedRecord("points3D: non-finite coordinate")
    return SparsePoints(positions=pos, colors=col,
                        point_ids=np.asarray(ids, dtype=np.int64))


def write_points3d_text(points: SparsePoints) -> bytes:
    lines = ["# 3D point list with one line of data per point:",
             "#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)"]
    rgb = np.clip(np.rint(points.colors * 255.0), 0, 255).astype(np.int64)
    for pid, p, c in zip(points.point_ids, points.positions, rgb):
        coords = " ".join(repr(float(v)) for v in p)
        lines.append(f"{int(pid)} {coords} {c[0]} {c[1]} {c[2]} 0.0")
    return ("\n".join(lines) + "\n").encode("utf-8")


def write_points3d_binary(points: SparsePoints) -> bytes:
    out = [struct.pack("<Q", len(points))]
    rgb = np.clip(np.rint(points.colors * 255.0), 0, 255).astype(np.uint8)
    for pid, p, c in zip(points.point_ids, points.positions, rgb):
        out.append(struct.pack("<QdddBBBd", int(pid), *map(float, p),
                               int(c[0]), int(c[1]), int(c[2]), 0.0))
        out.append(struct.pack("<Q", 0))  # empty track
    return b"".join(out)


# ---------------------------------------------------------------------------
# model loading and split
# ---------------------------------------------------------------------------

_SPLIT_RE = re.compile(r"^every_kth\((\d+)\)$")


def parse_split_rule(rule) -> int:
    """Return k for an `every_kth(k)` rule given as string or int."""
    if isinstance(rule, int):
        k = rule
    else:
        m = _SPLIT_RE.match(str(rule).strip())
        if not m:
            raise ValueError(f"unsupported split rule {rule!r}")
        k = int(m.group(1))
    if k < 1:
        raise ValueError("split k must be >= 1")
    return k


def detect_format(directory: Path) -> str:
    directory = Path(directory)
    if (directory / "cameras.bin").exists():
        return BINARY
    if (directory / "cameras.txt").exists():
        return TEXT
    raise MissingFile(f"cameras.(txt|bin) not found in {directory}")


def load_model(directory, split_rule="every_kth(8)") -> SceneInputs:
    """Load a COLMAP sparse model directory into validated SceneInputs."""
    directory = Path(directory)
    fmt = detect_format(directory)
    ext = ".bin" if fmt == BINARY else ".txt"
    blobs = {}
    for stem in ("cameras", "images", "points3D"):
        path = directory / (stem + ext)
        if not path.exists():
            raise MissingFile(str(path.name))
        blobs[stem] = path.read_bytes()

    cams = parse_cameras(blobs["cameras"], fmt)
    poses = parse_images(blobs["images"], fmt)
    points = parse_points3d(blobs["points3D"], fmt)

    intrinsics = {c.camera_id: c for c in cams}
    for p in poses:
        if p.camera_id not in intrinsics:
            raise InconsistentReferences(
                f"image {p.image_name!r} references camera {p.camera_id} "
                "absent from cameras file")

    k = parse_split_rule(split_rule)
    by_name = sorted(poses, key=lambda p: p.image_name)
    test = [p for i, p in enumerate(by_name) if i % k == 0]
    train = [p for i, p in enumerate(by_name) if i % k != 0]

    centers = np.stack([p.camera_center() for p in poses]) if poses else np.zeros((0, 3))
    if len(centers) == 0:
        raise MalformedRecord("model contains no images")
    centroid = centers.mean(axis=0)
    extent = float(np.max(np.linalg.norm(centers - centroid, axis=1)))
    if extent <= 0.0:
        raise DegenerateExtent("all camera centers coincide")

    return SceneInputs(intrinsics=intrinsics, train_views=train, test_views=test,
                       points=points, scene_extent=extent)
