import struct
import zlib

import numpy as np
import pytest

from featsplat import feature_store as fs
from featsplat.errors import ChecksumMismatch, MalformedRecord, TruncatedFile, VersionUnsupported


def random_fmap(rng, h=8, w=8, f=16, tag="synthetic"):
    return fs.FeatureMap(data=rng.normal(size=(h, w, f)).astype(np.float32),
                         source_tag=tag)


# --- FMAP io ---

def test_fmap_round_trip_f32_bitwise(tmp_path):
    rng = np.random.default_rng(0)
    fmap = random_fmap(rng)
    path = tmp_path / "a.fmap"
    fs.write_fmap(fmap, path, dtype="f32")
    back = fs.read_fmap(path)
    np.testing.assert_array_equal(back.data, fmap.data)
    assert back.source_tag == "synthetic"
    assert (back.height, back.width, back.dim) == (8, 8, 16)


def test_fmap_f16_round_trip_error_bound(tmp_path):
    rng = np.random.default_rng(1)
    fmap = random_fmap(rng)
    path = tmp_path / "a.fmap"
    fs.write_fmap(fmap, path, dtype="f16")
    back = fs.read_fmap(path)
    bound = 2.0 ** -10 * np.max(np.abs(fmap.data))
    assert np.max(np.abs(back.data.astype(np.float64) - fmap.data)) <= bound


def test_fmap_detects_single_byte_corruption(tmp_path):
    rng = np.random.default_rng(2)
    path = tmp_path / "a.fmap"
    fs.write_fmap(random_fmap(rng), path)
    raw = bytearray(path.read_bytes())
    raw[-10] ^= 0x01  # inside payload
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumMismatch):
        fs.read_fmap(path)


def test_fmap_rejects_zero_dim_header(tmp_path):
    header = (fs.FMAP_MAGIC + struct.pack("<IIIIB", 1, 2, 2, 0, 0)
              + struct.pack("<H", 0))
    payload = b""
    path = tmp_path / "bad.fmap"
    path.write_bytes(header + payload + struct.pack("<I", zlib.crc32(payload)))
    with pytest.raises(MalformedRecord):
        fs.read_fmap(path)


def test_fmap_rejects_unknown_version(tmp_path):
    header = (fs.FMAP_MAGIC + struct.pack("<IIIIB", 99, 2, 2, 1, 0)
              + struct.pack("<H", 0))
    path = tmp_path / "bad.fmap"
    path.write_bytes(header + b"\x00" * 16 + struct.pack("<I", 0))
    with pytest.raises(VersionUnsupported):
        fs.read_fmap(path)


def test_fmap_truncated(tmp_path):
    path = tmp_path / "bad.fmap"
    path.write_bytes(fs.FMAP_MAGIC + b"\x01")
    with pytest.raises(TruncatedFile):
        fs.read_fmap(path)


# --- TEMB io ---

def test_temb_round_trip(tmp_path):
    v = np.zeros(12, dtype=np.float32)
    v[3] = 1.0
    emb = fs.TextEmbedding(label="dome", vector=v)
    path = tmp_path / "p.temb"
    fs.write_temb(emb, path)
    back = fs.read_temb(path)
    assert back.label == "dome"
    np.testing.assert_array_equal(back.vector, v)


def test_temb_warns_on_non_unit_norm():
    with pytest.warns(UserWarning):
        fs.TextEmbedding(label="x", vector=np.full(4, 2.0))


def test_temb_corruption_detected(tmp_path):
    v = np.zeros(4, dtype=np.float32)
    v[0] = 1.0
    path = tmp_path / "p.temb"
    fs.write_temb(fs.TextEmbedding(label="a", vector=v), path)
    raw = bytearray(path.read_bytes())
    raw[-6] ^= 0x80
    path.write_bytes(bytes(raw))
    with pytest.raises(ChecksumMismatch):
        fs.read_temb(path)


# --- resize ---

def test_resize_identity():
    rng = np.random.default_rng(3)
    fmap = random_fmap(rng, 5, 7, 3)
    out = fs.resize_bilinear(fmap, 5, 7)
    np.testing.assert_array_equal(out.data, fmap.data)


def test_resize_2x2_to_1x1_averages_corners():
    fmap = fs.FeatureMap(data=np.array([[[1.0], [2.0]], [[3.0], [4.0]]]))
    out = fs.resize_bilinear(fmap, 1, 1)
    np.testing.assert_allclose(out.data, [[[2.5]]])


def test_resize_constant_stays_constant():
    fmap = fs.FeatureMap(data=np.full((4, 6, 2), 3.25))
    out = fs.resize_bilinear(fmap, 9, 5)
    np.testing.assert_allclose(out.data, 3.25)


def test_resize_commutes_with_channel_permutation():
    rng = np.random.default_rng(4)
    fmap = random_fmap(rng, 6, 6, 5)
    perm = rng.permutation(5)
    a = fs.resize_bilinear(fmap, 11, 3).data[:, :, perm]
    b = fs.resize_bilinear(fs.FeatureMap(data=fmap.data[:, :, perm]), 11, 3).data
    np.testing.assert_array_equal(a, b)


def test_resize_rejects_degenerate_target():
    with pytest.raises(ValueError):
        fs.resize_bilinear(fs.FeatureMap(data=np.zeros((2, 2, 1))), 0, 4)


# --- synthetic features ---

def two_color_palette(f=4):
    e = fs.orthonormal_embeddings(2, f)
    return [(np.array([1.0, 0.0, 0.0]), e[0]), (np.array([0.0, 0.0, 1.0]), e[1])]


def test_synth_features_uniform_image():
    pal = two_color_palette()
    img = np.zeros((4, 4, 3))
    img[:] = [1.0, 0.0, 0.0]
    out = fs.synth_features(img, pal)
    np.testing.assert_array_equal(out.data, np.tile(pal[0][1], (4, 4, 1)))


def test_synth_features_tie_breaks_low_index():
    pal = two_color_palette()
    img = np.full((1, 1, 3), 0.5)
    img[0, 0] = [0.5, 0.0, 0.5]  # equidistant to both palette colors
    out = fs.synth_features(img, pal)
    np.testing.assert_array_equal(out.data[0, 0], pal[0][1])


def test_synth_features_two_regions_cosines():
    pal = two_color_palette()
    img = np.zeros((4, 8, 3))
    img[:, :4] = [1.0, 0.0, 0.0]
    img[:, 4:] = [0.0, 0.0, 1.0]
    out = fs.synth_features(img, pal)
    cos0 = out.data @ pal[0][1]
    assert np.all(cos0[:, :4] == 1.0)
    assert np.all(cos0[:, 4:] == 0.0)


def test_synth_features_requires_unit_norm_palette():
    with pytest.raises(ValueError):
        fs.synth_features(np.zeros((2, 2, 3)),
                          [(np.zeros(3), np.array([2.0, 0.0]))])
    with pytest.raises(ValueError):
        fs.synth_features(np.zeros((2, 2, 3)), [])


def test_synth_features_pixelwise_independence():
    # permuting pixels of the input permutes the output identically
    rng = np.random.default_rng(5)
    pal = two_color_palette()
    img = rng.uniform(0, 1, (6, 6, 3))
    out = fs.synth_features(img, pal).data
    perm = rng.permutation(36)
    shuffled = img.reshape(-1, 3)[perm].reshape(6, 6, 3)
    out_shuffled = fs.synth_features(shuffled, pal).data.reshape(-1, 4)
    np.testing.assert_array_equal(out_shuffled, out.reshape(-1, 4)[perm])


def test_orthonormal_embeddings():
    e = fs.orthonormal_embeddings(3, 8)
    np.testing.assert_allclose(e @ e.T, np.eye(3), atol=1e-7)
    with pytest.raises(ValueError):
        fs.orthonormal_embeddings(4, 3)
