"""Bridge CLI: extract, embed, refine, serve."""
from __future__ import annotations

from pathlib import Path

import click

from . import __version__
from .encoders import BackboneSpec, ModelUnavailable, PointOutOfBounds
from .ops import ImageUnreadable, embed_text, extract_features, refine_mask


def _spec(backbone, checkpoint, dim, resolution) -> BackboneSpec:
    res = None
    if resolution:
        h, w = resolution.lower().split("x")
        res = (int(h), int(w))
    return BackboneSpec(name=backbone, checkpoint_path=checkpoint or "",
                        output_dim=dim, target_resolution=res)


@click.group()
@click.version_option(__version__)
def main():
    """Encoder bridge for the splatting engine's FMAP/TEMB formats."""


@main.command()
@click.option("--images", "image_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--backbone", default="mock", show_default=True)
@click.option("--checkpoint", default=None, type=click.Path())
@click.option("--dim", default=16, show_default=True, type=int)
@click.option("--resolution", default=None, help="Target HxW, e.g. 64x64.")
def extract(image_dir, out_dir, backbone, checkpoint, dim, resolution):
    """Dense feature maps for every image in a directory."""
    try:
        manifest = extract_features(image_dir, _spec(backbone, checkpoint, dim,
                                                     resolution), out_dir)
    except (ModelUnavailable, ImageUnreadable) as e:
        raise click.ClickException(str(e))
    click.echo(f"wrote {len(manifest['images'])} feature maps to {out_dir} "
               f"({manifest['checkpoint_hash']})")


@main.command()
@click.option("--text", required=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--backbone", default="mock", show_default=True)
@click.option("--checkpoint", default=None, type=click.Path())
@click.option("--dim", default=16, show_default=True, type=int)
def embed(text, out_path, backbone, checkpoint, dim):
    """Embed a text prompt into a TEMB file."""
    try:
        vec = embed_text(text, _spec(backbone, checkpoint, dim, None), out_path)
    except ModelUnavailable as e:
        raise click.ClickException(str(e))
    click.echo(f"wrote {out_path} (dim {vec.shape[0]})")


@main.command()
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--point", "point_path", required=True, type=click.Path(exists=True),
              help="Point-prompt JSON document from the engine's query stage.")
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--model", default="mock", show_default=True)
@click.option("--checkpoint", default=None, type=click.Path())
def refine(image_path, point_path, out_path, model, checkpoint):
    """Point-prompted mask refinement; writes an 8-bit mask PNG."""
    doc = Path(point_path).read_text()
    try:
        mask = refine_mask(image_path, doc, _spec(model, checkpoint, 16, None),
                           out_path)
    except (ModelUnavailable, PointOutOfBounds, ImageUnreadable) as e:
        raise click.ClickException(str(e))
    click.echo(f"wrote {out_path} ({int(mask.sum())} foreground pixels)")


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8001, show_default=True, type=int)
@click.option("--backbone", default="mock", show_default=True)
@click.option("--checkpoint", default=None, type=click.Path())
@click.option("--dim", default=16, show_default=True, type=int)
def serve(host, port, backbone, checkpoint, dim):
    """Run the /embed + /refine microservice."""
    import uvicorn

    from .service import create_app
    spec = _spec(backbone, checkpoint, dim, None)
    app = create_app(spec, {backbone: spec, "mock": spec})
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
