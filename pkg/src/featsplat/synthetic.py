"""Synthetic scene presets standing in for real capture data during testing.

The `two_regions` preset builds a seeded 50-Gaussian scene: two vertically
separated clusters with distinct flat colors and orthonormal feature
embeddings, viewed from a ring of 24 cameras. Emitting it as a project
produces everything the training and query pipeline consume: a COLMAP text
model, rendered ground-truth images, synthetic feature maps, per-view region
masks, prompt embeddings, and a training config.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .cameras import CameraIntrinsics, CameraPose, CameraView, look_at_pose
from .colmap_ingest import (
    SparsePoints,
    write_cameras_text,
    write_images_text,
    write_points3d_text,
)
from .feature_store import TextEmbedding, orthonormal_embeddings, synth_features, write_fmap, write_temb
from .images import save_mask, save_rgb
from .project import ProjectLayout, write_manifest
from .rasterizer import RenderConfig, render
from .scene_model import GaussianSet, logit, rgb_to_sh0, save_gsplat

FEATURE_DIM = 8
IMAGE_SIZE = 64
FOCAL = 70.0
RING_RADIUS = 5.0
NUM_VIEWS = 24
SPLIT_RULE = "every_kth(6)"  # 20 train / 4 test
REGION_COLORS = np.array([[0.85, 0.25, 0.20],   # upper cluster
                          [0.20, 0.35, 0.90]])  # lower cluster
BACKGROUND_COLOR = np.zeros(3)
PROMPT_LABELS = ("upper region", "lower region", "background")


@dataclass
class SyntheticScene:
    gaussians: GaussianSet
    points: SparsePoints
    intrinsics: CameraIntrinsics
    poses: list[CameraPose]
    embeddings: np.ndarray  # (3, F): region 0, region 1, background
    palette: list[tuple[np.ndarray, np.ndarray]]

    def views(self) -> list[CameraView]:
        return [CameraView(view_id=Path(p.image_name).stem,
                           intrinsics=self.intrinsics, pose=p)
                for p in self.poses]

    def render_config(self) -> RenderConfig:
        return RenderConfig(background_rgb=tuple(BACKGROUND_COLOR),
                            background_feature=self.embeddings[2])


def _cluster(rng: np.random.Generator, center, color, embedding, count: int
             ) -> dict[str, np.ndarray]:
    xy = np.clip(rng.normal(0.0, 0.5, (count, 2)), -1.0, 1.0)
    z = np.clip(rng.normal(0.0, 0.28, (count, 1)), -0.5, 0.5)
    positions = np.concatenate([xy, z], axis=1) + np.asarray(center)[None, :]
    scales = rng.uniform(0.10, 0.22, (count, 3))
    quats = rng.normal(size=(count, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    opac = rng.uniform(0.70, 0.95, count)
    return {
        "positions": positions.astype(np.float32),
        "log_scales": np.log(scales).astype(np.float32),
        "rotations": quats.astype(np.float32),
        "opacity_logits": logit(opac).astype(np.float32),
        "colors_sh": np.repeat(rgb_to_sh0(color)[None, :, None], count, axis=0
                               ).astype(np.float32),
        "features": np.repeat(embedding[None, :], count, axis=0).astype(np.float32),
    }


def build_two_regions(seed: int = 0) -> SyntheticScene:
    rng = np.random.default_rng(seed)
    embeds = orthonormal_embeddings(3, FEATURE_DIM)
    upper = _cluster(rng, (0.0, 0.0, 0.9), REGION_COLORS[0], embeds[0], 25)
    lower = _cluster(rng, (0.0, 0.0, -0.9), REGION_COLORS[1], embeds[1], 25)
    params = {k: np.concatenate([upper[k], lower[k]], axis=0) for k in upper}
    gaussians = GaussianSet(**params, sh_degree=0)

    colors = np.concatenate([np.repeat(REGION_COLORS[0][None], 25, axis=0),
                             np.repeat(REGION_COLORS[1][None], 25, axis=0)])
    points = SparsePoints(positions=params["positions"].astype(np.float64),
                          colors=colors,
                          point_ids=np.arange(1, 51, dtype=np.int64))

    intr = CameraIntrinsics(1, "PINHOLE", IMAGE_SIZE, IMAGE_SIZE, FOCAL, FOCAL,
                            IMAGE_SIZE / 2.0, IMAGE_SIZE / 2.0).validate()
    poses = []
    for i in range(NUM_VIEWS):
        theta = 2.0 * np.pi * i / NUM_VIEWS
        pos = (RING_RADIUS * np.cos(theta), RING_RADIUS * np.sin(theta), 0.0)
        poses.append(look_at_pose(i + 1, 1, f"view_{i:03d}.png",
                                  position=pos, target=(0.0, 0.0, 0.0)))

    palette = ([(REGION_COLORS[0], embeds[0]), (REGION_COLORS[1], embeds[1]),
                (BACKGROUND_COLOR, embeds[2])])
    return SyntheticScene(gaussians=gaussians, points=points, intrinsics=intr,
                          poses=poses, embeddings=embeds, palette=palette)


def region_masks(rgb: np.ndarray, palette) -> np.ndarray:
    """Nearest-palette-color assignment map: (H, W) integer indices."""
    colors = np.stack([np.asarray(c, dtype=np.float64) for c, _ in palette])
    d2 = ((rgb[:, :, None, :] - colors[None, None]) ** 2).sum(-1)
    return np.argmin(d2, axis=-1)


def default_train_config(scene: SyntheticScene) -> dict:
    """Declarative training config written into synthetic projects."""
    return {
        "iterations": 2000,
        "seed": 0,
        "densify": "off",
        "checkpoint_interval": 0,
        "feature_dim": FEATURE_DIM,
        "background_rgb": [float(v) for v in BACKGROUND_COLOR],
        "background_feature": [float(v) for v in scene.embeddings[2]],
    }


def emit_project(root, preset: str = "two_regions", seed: int = 0) -> SyntheticScene:
    """Write a complete synthetic project: COLMAP model, GT renders, feature
    maps, region masks, prompt embeddings, manifest, and train config."""
    if preset != "two_regions":
        raise ValueError(f"unknown preset {preset!r}")
    scene = build_two_regions(seed)
    layout = ProjectLayout(root).ensure(backbone="synthetic")
    (layout.masks_dir / "gt").mkdir(parents=True, exist_ok=True)

    (layout.colmap_dir / "cameras.txt").write_bytes(write_cameras_text([scene.intrinsics]))
    (layout.colmap_dir / "images.txt").write_bytes(write_images_text(scene.poses))
    (layout.colmap_dir / "points3D.txt").write_bytes(write_points3d_text(scene.points))

    cfg = scene.render_config()
    for view in scene.views():
        out = render(scene.gaussians, view, cfg)
        rgb = np.clip(out.rgb, 0.0, 1.0)
        save_rgb(layout.images_dir / f"{view.view_id}.png", rgb)
        fmap = synth_features(rgb, scene.palette)
        write_fmap(fmap, layout.features_dir("synthetic") / f"{view.view_id}.fmap")
        assign = region_masks(rgb, scene.palette)
        for r in (0, 1):
            save_mask(layout.masks_dir / "gt" / f"{view.view_id}_region{r}.png",
                      assign == r)

    for i, label in enumerate(PROMPT_LABELS):
        slug = ("region0", "region1", "background")[i]
        write_temb(TextEmbedding(label=label, vector=scene.embeddings[i]),
                   layout.prompts_dir / f"{slug}.temb")

    save_gsplat(scene.gaussians, layout.checkpoints_dir / "true.gsplat")

    from .colmap_ingest import load_model
    inputs = load_model(layout.colmap_dir, SPLIT_RULE)
    write_manifest(layout, inputs, SPLIT_RULE)

    layout.train_config_path.write_text(
        yaml.safe_dump(default_train_config(scene), sort_keys=True))
    return scene
