import io
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from featsplat_bridge.encoders import BackboneSpec
from featsplat_bridge.service import create_app


@pytest.fixture(scope="module")
def client():
    spec = BackboneSpec(name="mock", output_dim=8)
    app = create_app(spec, {"mock": spec, "sam": BackboneSpec(name="sam"),
                            "sam2": BackboneSpec(name="sam2")})
    with TestClient(app) as c:
        yield c


def png_bytes(w=16, h=12):
    arr = np.zeros((h, w, 3), dtype=np.uint8)
    arr[:, : w // 2] = [220, 30, 30]
    buf = io.BytesIO()
    Image.fromarray(arr, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def doc(x, y, w=16, h=12):
    return json.dumps({"view_id": "v", "prompt_label": "t", "x": x, "y": y,
                       "score": 1.0, "image_width": w, "image_height": h,
                       "source": "lseg_argmax"})


def test_embed_returns_unit_vector(client):
    r = client.post("/embed", json={"text": "dome"})
    assert r.status_code == 200
    body = r.json()
    assert body["label"] == "dome"
    assert body["dim"] == 8
    v = np.asarray(body["embedding"])
    assert abs(np.linalg.norm(v) - 1.0) <= 1e-5


def test_embed_repeated_identical(client):
    a = client.post("/embed", json={"text": "dome"}).json()
    b = client.post("/embed", json={"text": "dome"}).json()
    assert a == b


def test_embed_empty_422(client):
    assert client.post("/embed", json={"text": ""}).status_code == 422
    assert client.post("/embed", json={"text": "   "}).status_code == 422


def test_refine_mask_contains_point(client):
    r = client.post("/refine", params={"model": "mock"}, content=png_bytes(),
                    headers={"Content-Type": "image/png",
                             "X-Point-Prompt": doc(3, 4)})
    assert r.status_code == 200
    with Image.open(io.BytesIO(r.content)) as im:
        mask = np.asarray(im) >= 128
    assert mask.shape == (12, 16)
    assert mask[4, 3]


def test_refine_unavailable_model_503(client):
    r = client.post("/refine", params={"model": "sam"}, content=png_bytes(),
                    headers={"X-Point-Prompt": doc(3, 4)})
    assert r.status_code == 503


def test_refine_missing_point_header_422(client):
    r = client.post("/refine", params={"model": "mock"}, content=png_bytes())
    assert r.status_code == 422


def test_refine_out_of_bounds_422(client):
    r = client.post("/refine", params={"model": "mock"}, content=png_bytes(),
                    headers={"X-Point-Prompt": doc(99, 4)})
    assert r.status_code == 422
