import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from featsplat.cameras import CameraIntrinsics, CameraPose, CameraView, look_at_pose
from featsplat.scene_model import GaussianSet


def make_view(width=32, height=32, fx=30.0, fy=30.0, view_id="v0",
              position=None, target=(0.0, 0.0, 0.0)) -> CameraView:
    intr = CameraIntrinsics(1, "PINHOLE", width, height, fx, fy,
                            width / 2.0, height / 2.0).validate()
    if position is None:
        pose = CameraPose(1, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                          camera_id=1, image_name=f"{view_id}.png")
    else:
        pose = look_at_pose(1, 1, f"{view_id}.png", position, target)
    return CameraView(view_id, intr, pose)


def random_scene(rng: np.random.Generator, n=8, feature_dim=4, sh_degree=0,
                 dtype=np.float64, opacity_range=(0.15, 0.5),
                 scale_range=(0.3, 0.8), spread=0.25) -> GaussianSet:
    """Random scene in front of an identity-pose camera at z ~ 2.

    Opacities and scales default to ranges that keep every contribution away
    from the alpha-skip, alpha-clamp, and transmittance-stop boundaries so
    finite differences stay well-posed.
    """
    B = (sh_degree + 1) ** 2
    o = rng.uniform(*opacity_range, n)
    colors0 = rng.uniform(-0.8, 0.8, (n, 3, 1))
    rest = rng.normal(0.0, 0.1, (n, 3, B - 1)) if B > 1 else np.zeros((n, 3, 0))
    return GaussianSet(
        positions=np.column_stack([rng.uniform(-spread, spread, (n, 2)),
                                   rng.uniform(1.8, 2.6, n)]).astype(dtype),
        log_scales=np.log(rng.uniform(*scale_range, (n, 3))).astype(dtype),
        rotations=rng.normal(size=(n, 4)).astype(dtype),
        opacity_logits=np.log(o / (1 - o)).astype(dtype),
        colors_sh=np.concatenate([colors0, rest], axis=2).astype(dtype),
        features=rng.normal(size=(n, feature_dim)).astype(dtype),
        sh_degree=sh_degree,
    )


@pytest.fixture(scope="session")
def synth_project(tmp_path_factory):
    """Synthetic two-region project shared across test modules."""
    from featsplat.synthetic import emit_project

    root = tmp_path_factory.mktemp("synthproj")
    scene = emit_project(root, seed=0)
    return root, scene
