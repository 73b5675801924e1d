"""HTTP service exposing rendering and query operations to the viewer.

The service never mutates the checkpoint; everything derived from it is
cached per (view, prompt, tau) key and invalidated only on restart. Renders
are deterministic, so duplicate cache fills are benign (last writer wins).
"""
from __future__ import annotations

import threading

import numpy as np
from fastapi import FastAPI, HTTPException, Query, Request, Response

from .errors import ShapeMismatch
from .feature_store import FeatureMap, TextEmbedding
from .images import decode_mask_png, encode_rgb_png
from .project import ProjectLayout, load_project_scene
from .query_engine import (
    BinaryMask,
    argmax_point,
    cosine_heatmap,
    overlay,
    pca_visualize,
    threshold_mask,
)
from .rasterizer import render
from .scene_model import load_gsplat
from .trainer import build_views


class _ServiceState:
    def __init__(self, project_dir, checkpoint_path, bridge_url=None):
        from .cli import project_render_config

        self.layout = ProjectLayout(project_dir)
        self.gset = load_gsplat(checkpoint_path)
        self.render_cfg = project_render_config(self.layout, self.gset.feature_dim)
        scene = load_project_scene(self.layout)
        self.views = {}
        for split in ("train", "test"):
            for v in build_views(scene, self.layout.images_dir, split):
                self.views[v.view_id] = v
        self.bridge_url = bridge_url.rstrip("/") if bridge_url else None

        self.lock = threading.Lock()
        self.prompts: dict[str, TextEmbedding] = {}
        self._prompt_counter = 0
        self._render_cache: dict[str, object] = {}
        self._png_cache: dict[tuple, bytes] = {}
        self.refined_masks: dict[tuple, np.ndarray] = {}

    def view(self, view_id: str):
        if view_id not in self.views:
            raise HTTPException(status_code=404, detail=f"unknown view {view_id!r}")
        return self.views[view_id]

    def prompt(self, prompt_id: str) -> TextEmbedding:
        if prompt_id not in self.prompts:
            raise HTTPException(status_code=404, detail=f"unknown prompt {prompt_id!r}")
        return self.prompts[prompt_id]

    def add_prompt(self, emb: TextEmbedding) -> str:
        with self.lock:
            self._prompt_counter += 1
            pid = f"p{self._prompt_counter}"
            self.prompts[pid] = emb
        return pid

    def render_output(self, view_id: str):
        with self.lock:
            if view_id in self._render_cache:
                return self._render_cache[view_id]
        out = render(self.gset, self.view(view_id), self.render_cfg)
        with self.lock:
            self._render_cache[view_id] = out
        return out

    def png(self, key: tuple, build) -> bytes:
        with self.lock:
            if key in self._png_cache:
                return self._png_cache[key]
        data = build()
        with self.lock:
            self._png_cache[key] = data
        return data


def create_app(project_dir, checkpoint_path, bridge_url=None, ui_dir=None) -> FastAPI:
    state = _ServiceState(project_dir, checkpoint_path, bridge_url)
    app = FastAPI(title="featsplat", version="1")
    app.state.engine = state

    @app.get("/api/views")
    def list_views():
        return [{"view_id": v.view_id, "split": v.split,
                 "width": v.width, "height": v.height}
                for v in sorted(state.views.values(), key=lambda v: v.view_id)]

    @app.get("/api/render")
    def render_view(view: str, mode: str = "rgb"):
        if mode not in ("rgb", "feature_pca"):
            raise HTTPException(status_code=422, detail=f"unsupported mode {mode!r}")
        state.view(view)

        def build():
            out = state.render_output(view)
            if mode == "rgb":
                return encode_rgb_png(out.rgb)
            fmap = FeatureMap(data=out.feature.astype(np.float32), source_tag="render")
            return encode_rgb_png(pca_visualize(fmap))

        return Response(content=state.png(("render", view, mode), build),
                        media_type="image/png")

    @app.post("/api/prompts")
    async def add_prompt(request: Request):
        body = await request.json()
        label = body.get("label", "")
        if "embedding" in body:
            vec = np.asarray(body["embedding"], dtype=np.float32)
            if vec.ndim != 1 or vec.shape[0] != state.gset.feature_dim:
                raise HTTPException(
                    status_code=422,
                    detail=f"embedding dim {vec.size} != scene feature dim "
                           f"{state.gset.feature_dim}")
            emb = TextEmbedding(label=label, vector=vec)
        elif "text" in body:
            if not state.bridge_url:
                raise HTTPException(status_code=503,
                                    detail="NoEmbedder: no encoder bridge configured")
            import httpx
            try:
                r = httpx.post(f"{state.bridge_url}/embed",
                               json={"text": body["text"]}, timeout=60.0)
                r.raise_for_status()
            except httpx.HTTPError as e:
                raise HTTPException(status_code=503, detail=f"bridge error: {e}")
            payload = r.json()
            vec = np.asarray(payload["embedding"], dtype=np.float32)
            if vec.shape[0] != state.gset.feature_dim:
                raise HTTPException(
                    status_code=422,
                    detail=f"bridge embedding dim {vec.size} != scene feature dim "
                           f"{state.gset.feature_dim}")
            emb = TextEmbedding(label=payload.get("label", body["text"]), vector=vec)
        else:
            raise HTTPException(status_code=422,
                                detail="body must carry 'embedding' or 'text'")
        pid = state.add_prompt(emb)
        return {"prompt_id": pid, "label": emb.label, "dim": emb.dim}

    def _heatmap_and_point(view_id: str, prompt_id: str):
        emb = state.prompt(prompt_id)
        out = state.render_output(view_id)
        heat = cosine_heatmap(FeatureMap(data=out.feature, source_tag="render"), emb)
        point = argmax_point(heat, view_id)
        return out, heat, point

    @app.get("/api/heatmap")
    def heatmap(view: str, prompt: str):
        state.view(view)
        out, heat, point = _heatmap_and_point(view, prompt)

        def build():
            return encode_rgb_png(overlay(np.clip(out.rgb, 0, 1), heat))

        headers = {"X-Argmax-X": str(point.x), "X-Argmax-Y": str(point.y),
                   "X-Argmax-Score": repr(point.score)}
        return Response(content=state.png(("heatmap", view, prompt), build),
                        media_type="image/png", headers=headers)

    @app.get("/api/mask")
    def mask(view: str, prompt: str, tau: float = Query(default=0.75)):
        if not (0.0 <= tau <= 1.0):
            raise HTTPException(status_code=422, detail="tau must be in [0, 1]")
        v = state.view(view)
        out, heat, point = _heatmap_and_point(view, prompt)
        bmask = threshold_mask(heat, tau)

        def build():
            return encode_rgb_png(overlay(np.clip(out.rgb, 0, 1), bmask))

        headers = {"X-Point-Prompt": point.document(v.width, v.height)}
        return Response(content=state.png(("mask", view, prompt, tau), build),
                        media_type="image/png", headers=headers)

    @app.post("/api/refined_mask")
    async def store_refined(request: Request, view: str, prompt: str,
                            model: str = "external"):
        v = state.view(view)
        state.prompt(prompt)
        body = await request.body()
        try:
            bits = decode_mask_png(body, expect_shape=(v.height, v.width))
        except ShapeMismatch as e:
            raise HTTPException(status_code=422, detail=str(e))
        except Exception as e:
            raise HTTPException(status_code=422, detail=f"invalid mask PNG: {e}")
        with state.lock:
            state.refined_masks[(view, prompt, model)] = bits
        path = state.layout.masks_dir / f"{view}__{prompt}__{model}.png"
        path.parent.mkdir(parents=True, exist_ok=True)
        from .images import save_mask
        save_mask(path, bits)
        return {"stored": path.name, "foreground_pixels": int(bits.sum())}

    @app.get("/api/refined_mask")
    def get_refined(view: str, prompt: str, model: str = "external"):
        state.view(view)
        key = (view, prompt, model)
        with state.lock:
            bits = state.refined_masks.get(key)
        if bits is None:
            raise HTTPException(status_code=404, detail="no refined mask stored")
        out = state.render_output(view)
        png = encode_rgb_png(overlay(np.clip(out.rgb, 0, 1),
                                     BinaryMask(bits=bits, threshold_used=float("nan"))))
        return Response(content=png, media_type="image/png")

    @app.post("/api/refine")
    def refine(view: str, prompt: str, model: str = "sam", source: str = "render"):
        """Proxy point-prompted refinement to the encoder bridge.

        `source` picks the image handed to the refiner: the rendered RGB
        (default) or the captured photograph of the same view.
        """
        if not state.bridge_url:
            raise HTTPException(status_code=503,
                                detail="NoEmbedder: no encoder bridge configured")
        if source not in ("render", "photo"):
            raise HTTPException(status_code=422,
                                detail="source must be 'render' or 'photo'")
        v = state.view(view)
        out, heat, point = _heatmap_and_point(view, prompt)
        if source == "photo":
            from .images import load_rgb
            if v.image_path is None or not v.image_path.exists():
                raise HTTPException(status_code=404,
                                    detail=f"no photograph for view {view!r}")
            rgb_png = encode_rgb_png(load_rgb(v.image_path))
        else:
            rgb_png = encode_rgb_png(np.clip(out.rgb, 0, 1))
        doc = point.document(v.width, v.height)
        import httpx
        try:
            r = httpx.post(f"{state.bridge_url}/refine", params={"model": model},
                           content=rgb_png,
                           headers={"Content-Type": "image/png",
                                    "X-Point-Prompt": doc}, timeout=300.0)
            r.raise_for_status()
        except httpx.HTTPError as e:
            raise HTTPException(status_code=503, detail=f"bridge error: {e}")
        bits = decode_mask_png(r.content, expect_shape=(v.height, v.width))
        with state.lock:
            state.refined_masks[(view, prompt, model)] = bits
        from .images import save_mask
        save_mask(state.layout.masks_dir / f"{view}__{prompt}__{model}.png", bits)
        png = encode_rgb_png(overlay(np.clip(out.rgb, 0, 1),
                                     BinaryMask(bits=bits, threshold_used=float("nan"))))
        return Response(content=png, media_type="image/png",
                        headers={"X-Point-Prompt": doc})

    if ui_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
