"""Embedding/refinement microservice consumed by the engine's /api/refine
proxy and by live text prompts in the viewer."""
from __future__ import annotations

from io import BytesIO

import numpy as np
from fastapi import FastAPI, HTTPException, Request, Response
from PIL import Image

from .encoders import BackboneSpec, ModelUnavailable, PointOutOfBounds, get_encoder
from .ops import encode_mask_png, refine_mask_array


def create_app(embed_spec: BackboneSpec, refine_specs: dict[str, BackboneSpec]
               | None = None) -> FastAPI:
    app = FastAPI(title="featsplat-bridge", version="1")
    try:
        embedder = get_encoder(embed_spec)
    except ModelUnavailable as e:
        raise SystemExit(str(e))
    refine_specs = refine_specs or {"mock": embed_spec}

    @app.post("/embed")
    async def embed(request: Request):
        body = await request.json()
        text = (body or {}).get("text", "")
        if not isinstance(text, str) or not text.strip():
            raise HTTPException(status_code=422, detail="text must be nonempty")
        vec = embedder.embed_text(text)
        return {"label": text, "embedding": [float(v) for v in vec],
                "dim": int(vec.shape[0]), "backbone": embed_spec.name}

    @app.post("/refine")
    async def refine(request: Request, model: str = "mock"):
        doc = request.headers.get("x-point-prompt")
        if not doc:
            raise HTTPException(status_code=422, detail="missing X-Point-Prompt header")
        if model not in refine_specs:
            raise HTTPException(status_code=404, detail=f"unknown model {model!r}")
        body = await request.body()
        try:
            with Image.open(BytesIO(body)) as im:
                rgb = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        except Exception as e:
            raise HTTPException(status_code=422, detail=f"invalid image: {e}")
        try:
            mask = refine_mask_array(rgb, doc, refine_specs[model])
        except PointOutOfBounds as e:
            raise HTTPException(status_code=422, detail=str(e))
        except ModelUnavailable as e:
            raise HTTPException(status_code=503, detail=str(e))
        return Response(content=encode_mask_png(mask), media_type="image/png")

    return app
