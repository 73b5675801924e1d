"""Command-line entry points for every pipeline stage.

Commands operate on a project directory (see project.ProjectLayout) and are
idempotent: identical inputs and seed produce byte-identical outputs.
"""
from __future__ import annotations

import re
import shutil
from pathlib import Path

import click
import numpy as np
import yaml

from . import __version__
from .colmap_ingest import load_model
from .errors import MissingFile
from .feature_store import FeatureMap, read_temb, write_fmap
from .images import save_rgb
from .metrics import evaluate
from .project import ProjectLayout, load_project_scene, write_manifest
from .query_engine import argmax_point, cosine_heatmap, overlay, pca_visualize, threshold_mask
from .rasterizer import RenderConfig, render
from .scene_model import load_gsplat
from .trainer import build_views, config_from_dict, log_to_csv, train


def slugify(label: str) -> str:
    return re.sub(r"[^a-z0-9]+", "_", label.lower()).strip("_") or "prompt"


def project_render_config(layout: ProjectLayout, feature_dim: int) -> RenderConfig:
    """Rendering background follows the project's training config so rendered
    feature fields match what the distillation loss trained against."""
    if layout.train_config_path.exists():
        cfg = config_from_dict(yaml.safe_load(layout.train_config_path.read_text()))
        rc = cfg.render_config()
        bgf = rc.background_feature
        if bgf is not None and bgf.shape[0] != feature_dim:
            rc.background_feature = None
        return rc
    return RenderConfig()


def find_view(layout: ProjectLayout, view_id: str):
    scene = load_project_scene(layout)
    for split in ("train", "test"):
        for v in build_views(scene, layout.images_dir, split):
            if v.view_id == view_id:
                return v
    raise click.ClickException(f"unknown view {view_id!r}")


@click.group()
@click.version_option(__version__)
def main():
    """Gaussian splatting with semantic feature fields."""


@main.command()
@click.option("--colmap", "colmap_dir", required=True, type=click.Path(exists=True))
@click.option("--project", "project_dir", required=True, type=click.Path())
@click.option("--split-k", default=8, show_default=True, type=int)
@click.option("--images", "images_dir", default=None, type=click.Path(exists=True),
              help="Copy ground-truth images into the project.")
def ingest(colmap_dir, project_dir, split_k, images_dir):
    """Parse a COLMAP sparse model into a project with a train/test manifest."""
    rule = f"every_kth({split_k})"
    try:
        scene = load_model(colmap_dir, rule)
    except MissingFile as e:
        raise click.ClickException(str(e))
    layout = ProjectLayout(project_dir).ensure()

    src = Path(colmap_dir).resolve()
    if src != layout.colmap_dir.resolve():
        for f in sorted(src.iterdir()):
            if f.suffix in (".txt", ".bin") and f.is_file():
                shutil.copy2(f, layout.colmap_dir / f.name)
    if images_dir:
        for f in sorted(Path(images_dir).iterdir()):
            if f.is_file():
                shutil.copy2(f, layout.images_dir / f.name)

    manifest = write_manifest(layout, scene, rule)
    click.echo(f"ingested {manifest['num_train']} train / {manifest['num_test']} test "
               f"views, extent {scene.scene_extent:.4g}")


@main.command()
@click.option("--project", "project_dir", required=True, type=click.Path())
@click.option("--preset", default="two_regions", show_default=True)
@click.option("--seed", default=0, show_default=True, type=int)
def synth(project_dir, preset, seed):
    """Generate a synthetic project (scene, GT images, features, masks)."""
    from .synthetic import emit_project
    emit_project(project_dir, preset=preset, seed=seed)
    click.echo(f"synthetic project written to {project_dir}")


@main.command("train")
@click.option("--project", "project_dir", required=True, type=click.Path(exists=True))
@click.option("--backbone", default="synthetic", show_default=True)
@click.option("--config", "config_file", default=None, type=click.Path(exists=True),
              help="Defaults to <project>/train_config.yaml when present.")
@click.option("--iterations", default=None, type=int, help="Override config iterations.")
def train_cmd(project_dir, backbone, config_file, iterations):
    """Optimize a Gaussian scene against images plus feature-map targets."""
    layout = ProjectLayout(project_dir).ensure(backbone=backbone)
    scene = load_project_scene(layout)

    cfg_path = Path(config_file) if config_file else layout.train_config_path
    raw = yaml.safe_load(cfg_path.read_text()) if cfg_path.exists() else {}
    cfg = config_from_dict(raw)
    if iterations is not None:
        cfg.iterations = iterations

    ckpt = layout.checkpoints_dir / f"{backbone}.gsplat"
    gset, log = train(scene, layout.images_dir, layout.features_dir(backbone),
                      cfg, checkpoint_path=ckpt)
    log_path = layout.logs_dir / f"train_{backbone}.csv"
    log_path.write_text(log_to_csv(log))
    final = log[-1].total if log else float("nan")
    click.echo(f"trained {cfg.iterations} iterations, {gset.count} gaussians, "
               f"final loss {final:.6f}")
    click.echo(f"checkpoint: {ckpt}")
    click.echo(f"log: {log_path}")


@main.command("render")
@click.option("--project", "project_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--view", "view_id", required=True)
@click.option("--mode", default="rgb", show_default=True,
              type=click.Choice(["rgb", "feature_pca", "depth", "alpha"]))
def render_cmd(project_dir, checkpoint, view_id, mode):
    """Render one view to renders/<view>_<mode>.png."""
    layout = ProjectLayout(project_dir).ensure()
    gset = load_gsplat(checkpoint)
    view = find_view(layout, view_id)
    rc = project_render_config(layout, gset.feature_dim)
    out = render(gset, view, rc)

    path = layout.renders_dir / f"{view_id}_{mode}.png"
    if mode == "rgb":
        save_rgb(path, out.rgb)
    elif mode == "alpha":
        save_rgb(path, np.repeat(out.alpha[:, :, None], 3, axis=2))
    elif mode == "depth":
        dmax = float(out.depth.max())
        save_rgb(path, np.repeat((out.depth / dmax if dmax > 0 else out.depth)
                                 [:, :, None], 3, axis=2))
    else:  # feature_pca
        fmap = FeatureMap(data=out.feature.astype(np.float32), source_tag="render")
        write_fmap(fmap, layout.renders_dir / f"{view_id}_feature.fmap")
        save_rgb(path, pca_visualize(fmap))
    click.echo(str(path))


@main.command("query")
@click.option("--project", "project_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--view", "view_id", required=True)
@click.option("--prompt", "prompt_file", required=True, type=click.Path(exists=True),
              help="TEMB file holding the text embedding.")
@click.option("--tau", default=0.75, show_default=True, type=float)
def query_cmd(project_dir, checkpoint, view_id, prompt_file, tau):
    """Heatmap -> threshold mask -> argmax point prompt for one view."""
    layout = ProjectLayout(project_dir).ensure()
    gset = load_gsplat(checkpoint)
    view = find_view(layout, view_id)
    temb = read_temb(prompt_file)
    if temb.dim != gset.feature_dim:
        raise click.ClickException(
            f"prompt dim {temb.dim} != scene feature dim {gset.feature_dim}")

    rc = project_render_config(layout, gset.feature_dim)
    out = render(gset, view, rc)
    rgb = np.clip(out.rgb, 0.0, 1.0)
    heat = cosine_heatmap(FeatureMap(data=out.feature, source_tag="render"), temb)
    mask = threshold_mask(heat, tau)
    point = argmax_point(heat, view_id)

    slug = slugify(temb.label)
    heat_path = layout.renders_dir / f"query_{view_id}_{slug}_heatmap.png"
    mask_path = layout.renders_dir / f"query_{view_id}_{slug}_mask.png"
    save_rgb(heat_path, overlay(rgb, heat))
    save_rgb(mask_path, overlay(rgb, mask))
    doc = point.document(view.width, view.height)
    point_path = layout.prompts_dir / f"{slug}__{view_id}.point.json"
    point_path.write_text(doc + "\n")
    click.echo(doc)
    click.echo(f"heatmap: {heat_path}")
    click.echo(f"mask: {mask_path}")
    click.echo(f"point: {point_path}")


@main.command("metrics")
@click.option("--project", "project_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
def metrics_cmd(project_dir, checkpoint):
    """PSNR/SSIM over the test split, written as CSV."""
    layout = ProjectLayout(project_dir).ensure()
    gset = load_gsplat(checkpoint)
    scene = load_project_scene(layout)
    views = build_views(scene, layout.images_dir, "test")
    rc = project_render_config(layout, gset.feature_dim)
    report = evaluate(gset, views, rc)
    path = layout.logs_dir / f"metrics_{Path(checkpoint).stem}.csv"
    path.write_text(report.to_csv())
    click.echo(f"mean PSNR {report.mean_psnr_db:.4f} dB, mean SSIM {report.mean_ssim:.4f}")
    click.echo(str(path))


@main.command("serve")
@click.option("--project", "project_dir", required=True, type=click.Path(exists=True))
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--bridge-url", default=None, envvar="FEATSPLAT_BRIDGE_URL",
              help="Encoder bridge base URL for text prompts and refinement.")
@click.option("--ui-dir", default=None, type=click.Path(exists=True),
              help="Static viewer assets to serve at /.")
def serve_cmd(project_dir, checkpoint, host, port, bridge_url, ui_dir):
    """Long-running HTTP service exposing render/query endpoints."""
    import uvicorn

    from .service import create_app
    app = create_app(project_dir, checkpoint, bridge_url=bridge_url, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
