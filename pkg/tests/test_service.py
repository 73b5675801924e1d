import io
import json
from pathlib import Path

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from featsplat.feature_store import read_temb
from featsplat.service import create_app


@pytest.fixture(scope="module")
def client(synth_project):
    root, _ = synth_project
    app = create_app(root, Path(root) / "checkpoints" / "true.gsplat")
    with TestClient(app) as c:
        yield c, Path(root)


def post_prompt(client, root, slug="region0"):
    emb = read_temb(root / "prompts" / f"{slug}.temb")
    r = client.post("/api/prompts", json={"label": emb.label,
                                          "embedding": emb.vector.tolist()})
    assert r.status_code == 200
    return r.json()["prompt_id"]


def test_views_listing(client):
    c, _ = client
    views = c.get("/api/views").json()
    assert len(views) == 24
    assert {v["split"] for v in views} == {"train", "test"}
    assert sum(1 for v in views if v["split"] == "test") == 4
    assert views[0]["width"] == 64 and views[0]["height"] == 64


def test_render_png_and_cache_determinism(client):
    c, _ = client
    a = c.get("/api/render", params={"view": "view_002", "mode": "rgb"})
    b = c.get("/api/render", params={"view": "view_002", "mode": "rgb"})
    assert a.status_code == 200
    assert a.headers["content-type"] == "image/png"
    assert a.content == b.content
    p = c.get("/api/render", params={"view": "view_002", "mode": "feature_pca"})
    assert p.status_code == 200


def test_render_unknown_view_404(client):
    c, _ = client
    assert c.get("/api/render", params={"view": "zzz"}).status_code == 404


def test_prompt_embedding_flow_and_headers(client):
    c, root = client
    pid = post_prompt(c, root, "region0")
    h = c.get("/api/heatmap", params={"view": "view_000", "prompt": pid})
    assert h.status_code == 200
    x = int(h.headers["x-argmax-x"])
    y = int(h.headers["x-argmax-y"])
    score = float(h.headers["x-argmax-score"])
    assert 0 <= x < 64 and 0 <= y < 64
    assert 0.0 <= score <= 1.0

    m = c.get("/api/mask", params={"view": "view_000", "prompt": pid, "tau": 0.75})
    assert m.status_code == 200
    doc = json.loads(m.headers["x-point-prompt"])
    assert (doc["x"], doc["y"]) == (x, y)
    assert doc["source"] == "lseg_argmax"
    assert doc["image_width"] == 64


def test_prompt_wrong_dim_422(client):
    c, _ = client
    r = c.post("/api/prompts", json={"label": "x", "embedding": [1.0, 0.0]})
    assert r.status_code == 422


def test_text_prompt_without_bridge_503(client):
    c, _ = client
    r = c.post("/api/prompts", json={"label": "x", "text": "dome"})
    assert r.status_code == 503


def test_unknown_prompt_404(client):
    c, _ = client
    r = c.get("/api/heatmap", params={"view": "view_000", "prompt": "p999"})
    assert r.status_code == 404


def test_mask_tau_validation(client):
    c, root = client
    pid = post_prompt(c, root, "region1")
    r = c.get("/api/mask", params={"view": "view_000", "prompt": pid, "tau": 1.5})
    assert r.status_code == 422


def test_refined_mask_round_trip(client):
    c, root = client
    pid = post_prompt(c, root, "region0")
    bits = np.zeros((64, 64), dtype=np.uint8)
    bits[10:30, 10:30] = 255
    buf = io.BytesIO()
    Image.fromarray(bits, mode="L").save(buf, format="PNG")
    r = c.post(f"/api/refined_mask?view=view_000&prompt={pid}&model=sam",
               content=buf.getvalue())
    assert r.status_code == 200
    assert r.json()["foreground_pixels"] == 400
    assert (root / "masks" / f"view_000__{pid}__sam.png").exists()

    g = c.get("/api/refined_mask",
              params={"view": "view_000", "prompt": pid, "model": "sam"})
    assert g.status_code == 200
    assert g.headers["content-type"] == "image/png"


def test_refined_mask_wrong_dims_422(client):
    c, root = client
    pid = post_prompt(c, root, "region0")
    bits = np.zeros((32, 32), dtype=np.uint8)
    buf = io.BytesIO()
    Image.fromarray(bits, mode="L").save(buf, format="PNG")
    r = c.post(f"/api/refined_mask?view=view_000&prompt={pid}",
               content=buf.getvalue())
    assert r.status_code == 422


def test_refine_without_bridge_503(client):
    c, root = client
    pid = post_prompt(c, root, "region0")
    r = c.post(f"/api/refine?view=view_000&prompt={pid}&model=sam")
    assert r.status_code == 503


def test_mask_consistent_with_query_cmd(client, tmp_path):
    # the service reproduces the exact PointPrompt that `query` computes
    c, root = client
    from click.testing import CliRunner
    from featsplat.cli import main
    ckpt = root / "checkpoints" / "true.gsplat"
    res = CliRunner().invoke(main, ["query", "--project", str(root),
                                    "--checkpoint", str(ckpt),
                                    "--view", "view_006",
                                    "--prompt", str(root / "prompts" / "region1.temb"),
                                    "--tau", "0.75"])
    assert res.exit_code == 0
    cli_doc = json.loads(res.output.strip().splitlines()[0])

    pid = post_prompt(c, root, "region1")
    m = c.get("/api/mask", params={"view": "view_006", "prompt": pid, "tau": 0.75})
    srv_doc = json.loads(m.headers["x-point-prompt"])
    assert (cli_doc["x"], cli_doc["y"]) == (srv_doc["x"], srv_doc["y"])
    assert abs(cli_doc["score"] - srv_doc["score"]) < 1e-12
