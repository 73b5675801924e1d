"""Project directory layout and manifest handling.

A project root holds colmap/, images/, features/<backbone>/, prompts/,
checkpoints/, renders/, masks/, and logs/. Commands create missing
subdirectories and never write outside the root.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .colmap_ingest import SceneInputs, load_model
from .errors import MissingFile


@dataclass
class ProjectLayout:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    @property
    def colmap_dir(self) -> Path:
        return self.root / "colmap"

    @property
    def images_dir(self) -> Path:
        return self.root / "images"

    def features_dir(self, backbone: str) -> Path:
        return self.root / "features" / backbone

    @property
    def prompts_dir(self) -> Path:
        return self.root / "prompts"

    @property
    def checkpoints_dir(self) -> Path:
        return self.root / "checkpoints"

    @property
    def renders_dir(self) -> Path:
        return self.root / "renders"

    @property
    def masks_dir(self) -> Path:
        return self.root / "masks"

    @property
    def logs_dir(self) -> Path:
        return self.root / "logs"

    @property
    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    @property
    def train_config_path(self) -> Path:
        return self.root / "train_config.yaml"

    def ensure(self, backbone: str | None = None) -> "ProjectLayout":
        dirs = [self.colmap_dir, self.images_dir, self.prompts_dir,
                self.checkpoints_dir, self.renders_dir, self.masks_dir,
                self.logs_dir]
        if backbone:
            dirs.append(self.features_dir(backbone))
        for d in dirs:
            d.mkdir(parents=True, exist_ok=True)
        return self


def manifest_dict(scene: SceneInputs, split_rule: str) -> dict:
    views = []
    for split, poses in (("train", scene.train_views), ("test", scene.test_views)):
        for p in poses:
            intr = scene.intrinsics[p.camera_id]
            views.append({
                "view_id": Path(p.image_name).stem,
                "image_name": p.image_name,
                "camera_id": p.camera_id,
                "split": split,
                "width": intr.width,
                "height": intr.height,
            })
    views.sort(key=lambda v: v["view_id"])
    return {
        "split_rule": str(split_rule),
        "scene_extent": scene.scene_extent,
        "num_train": len(scene.train_views),
        "num_test": len(scene.test_views),
        "views": views,
    }


def write_manifest(layout: ProjectLayout, scene: SceneInputs, split_rule: str) -> dict:
    d = manifest_dict(scene, split_rule)
    layout.manifest_path.write_text(json.dumps(d, sort_keys=True, indent=2) + "\n")
    return d


def read_manifest(layout: ProjectLayout) -> dict:
    if not layout.manifest_path.exists():
        raise MissingFile(f"{layout.manifest_path} (run ingest first)")
    return json.loads(layout.manifest_path.read_text())


def load_project_scene(layout: ProjectLayout) -> SceneInputs:
    """Reload SceneInputs using the split rule recorded in the manifest."""
    manifest = read_manifest(layout)
    return load_model(layout.colmap_dir, manifest["split_rule"])
