"""Wire-format contract: everything the bridge emits must validate under the
engine's own reader (CRC, header fields, unit-norm check clean)."""
import warnings

import numpy as np
import pytest

from featsplat_bridge.formats import parse_point_prompt, write_fmap, write_temb

featsplat_store = pytest.importorskip("featsplat.feature_store")


def test_fmap_validates_under_engine_reader(tmp_path):
    rng = np.random.default_rng(0)
    data = rng.normal(size=(6, 7, 8)).astype(np.float32)
    path = tmp_path / "x.fmap"
    write_fmap(path, data, source_tag="mock")
    back = featsplat_store.read_fmap(path)
    np.testing.assert_array_equal(back.data, data)
    assert back.source_tag == "mock"
    assert (back.height, back.width, back.dim) == (6, 7, 8)


def test_fmap_f16_validates_under_engine_reader(tmp_path):
    rng = np.random.default_rng(1)
    data = rng.normal(size=(4, 4, 3)).astype(np.float32)
    path = tmp_path / "x.fmap"
    write_fmap(path, data, source_tag="mock", dtype="f16")
    back = featsplat_store.read_fmap(path)
    assert back.data.dtype == np.float16
    bound = 2.0 ** -10 * np.max(np.abs(data))
    assert np.max(np.abs(back.data.astype(np.float64) - data)) <= bound


def test_temb_validates_with_clean_norm_check(tmp_path):
    v = np.zeros(16, dtype=np.float32)
    v[5] = 1.0
    path = tmp_path / "p.temb"
    write_temb(path, v, label="dome")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        back = featsplat_store.read_temb(path)  # no unit-norm warning
    assert back.label == "dome"
    np.testing.assert_array_equal(back.vector, v)


def test_temb_writer_rejects_non_unit():
    with pytest.raises(ValueError):
        write_temb("/tmp/never.temb", np.full(4, 2.0), label="x")


def test_point_prompt_document_parsing():
    doc = ('{"view_id": "v0", "prompt_label": "dome", "x": 3, "y": 5, '
           '"score": 0.9, "image_width": 64, "image_height": 48, '
           '"source": "lseg_argmax"}')
    d = parse_point_prompt(doc)
    assert (d["x"], d["y"]) == (3, 5)
    assert (d["image_width"], d["image_height"]) == (64, 48)
