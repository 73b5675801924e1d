import numpy as np
import pytest
from skimage.metrics import peak_signal_noise_ratio as sk_psnr
from skimage.metrics import structural_similarity as sk_ssim

from featsplat import metrics as M
from featsplat.errors import MissingGroundTruth, ShapeMismatch, TooSmall
from featsplat.images import save_rgb
from featsplat.rasterizer import RenderConfig, render
from featsplat.trainer import build_views

from conftest import make_view, random_scene


def rand_pair(seed, h=32, w=32):
    rng = np.random.default_rng(seed)
    return rng.uniform(0, 1, (h, w, 3)), rng.uniform(0, 1, (h, w, 3))


# --- PSNR ---

def test_psnr_identical_hits_cap():
    a = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
    assert M.psnr(a, a) == 100.0


def test_psnr_constant_offset_closed_form():
    a = np.full((16, 16, 3), 0.3)
    b = a + 0.1
    np.testing.assert_allclose(M.psnr(a, b), 20.0, atol=1e-12)


def test_psnr_matches_reference():
    for seed in range(10):
        a, b = rand_pair(seed)
        assert abs(M.psnr(a, b) - sk_psnr(a, b, data_range=1.0)) <= 1e-4


def test_psnr_symmetry_and_shape_check():
    a, b = rand_pair(1)
    assert M.psnr(a, b) == M.psnr(b, a)
    with pytest.raises(ShapeMismatch):
        M.psnr(a, b[:16])


def test_psnr_decreases_with_noise_amplitude():
    rng = np.random.default_rng(2)
    a = rng.uniform(0.3, 0.7, (32, 32, 3))
    noise = rng.uniform(-1, 1, a.shape)
    values = [M.psnr(a, a + amp * noise) for amp in (0.01, 0.05, 0.1, 0.15, 0.2)]
    assert all(x > y for x, y in zip(values, values[1:]))


# --- SSIM ---

def test_ssim_identical_is_one():
    a = np.random.default_rng(3).uniform(0, 1, (16, 16, 3))
    assert M.ssim(a, a) == 1.0


def test_ssim_constant_images_closed_form():
    # mu_x=0, mu_y=1, all (co)variances 0:
    # S = (C1 * C2) / ((1 + C1) * C2) = C1 / (1 + C1)
    a = np.zeros((16, 16))
    b = np.ones((16, 16))
    C1 = M.SSIM_K1 ** 2
    np.testing.assert_allclose(M.ssim(a, b), C1 / (1 + C1), atol=1e-12)


def test_ssim_matches_reference():
    for seed in range(10):
        a, b = rand_pair(seed, 36, 28)
        ref = sk_ssim(a, b, data_range=1.0, channel_axis=-1,
                      gaussian_weights=True, sigma=1.5, use_sample_covariance=False)
        assert abs(M.ssim(a, b) - ref) <= 1e-3


def test_ssim_too_small_and_shape_mismatch():
    a = np.zeros((8, 8, 3))
    with pytest.raises(TooSmall):
        M.ssim(a, a)
    with pytest.raises(ShapeMismatch):
        M.ssim(np.zeros((16, 16, 3)), np.zeros((16, 17, 3)))


def test_ssim_grad_matches_finite_differences():
    rng = np.random.default_rng(4)
    a = rng.uniform(0.2, 0.8, (14, 13, 3))
    b = rng.uniform(0.2, 0.8, (14, 13, 3))
    val, grad = M.ssim_with_grad(a, b)
    assert abs(val - M.ssim(a, b)) < 1e-12
    h = 1e-6
    rng2 = np.random.default_rng(5)
    for _ in range(40):
        i, j, c = rng2.integers(14), rng2.integers(13), rng2.integers(3)
        ap = a.copy()
        ap[i, j, c] += h
        am = a.copy()
        am[i, j, c] -= h
        fd = (M.ssim(ap, b) - M.ssim(am, b)) / (2 * h)
        assert abs(fd - grad[i, j, c]) <= 1e-6 + 1e-4 * abs(fd)


# --- evaluate ---

def test_evaluate_self_render_hits_caps(tmp_path, synth_project):
    root, scene = synth_project
    from featsplat.project import ProjectLayout, load_project_scene
    layout = ProjectLayout(root)
    inputs = load_project_scene(layout)
    views = build_views(inputs, layout.images_dir, "test")
    report = M.evaluate(scene.gaussians.astype(np.float32), views,
                        scene.render_config())
    assert report.mean_psnr_db == M.PSNR_CAP_DB
    assert report.mean_ssim == 1.0


def test_evaluate_requires_views_and_ground_truth(tmp_path):
    gs = random_scene(np.random.default_rng(0), n=3, feature_dim=2)
    with pytest.raises(MissingGroundTruth):
        M.evaluate(gs, [])
    view = make_view()
    view.image_path = tmp_path / "missing.png"
    with pytest.raises(MissingGroundTruth):
        M.evaluate(gs, [view])


def test_evaluate_matches_per_view_recomputation(tmp_path):
    rng = np.random.default_rng(7)
    gs = random_scene(rng, n=12, feature_dim=2, dtype=np.float32)
    views = []
    for i, zpos in enumerate((-4.0, -4.5)):
        v = make_view(width=24, height=24, view_id=f"v{i}",
                      position=(0.1 * i, zpos, 0.2))
        v.image_path = tmp_path / f"v{i}.png"
        noisy = np.clip(render(gs, v, RenderConfig()).rgb
                        + rng.normal(0, 0.05, (24, 24, 3)), 0, 1)
        save_rgb(v.image_path, noisy)
        views.append(v)
    report = M.evaluate(gs, views)
    from featsplat.images import load_rgb
    for v, row in zip(views, report.per_view):
        gt = load_rgb(v.image_path)
        rgb = M.quantize8(render(gs, v, RenderConfig()).rgb)
        assert abs(row.psnr_db - M.psnr(rgb, gt)) < 1e-12
        assert abs(row.ssim - M.ssim(rgb, gt)) < 1e-12
    assert abs(report.mean_psnr_db
               - np.mean([r.psnr_db for r in report.per_view])) < 1e-12


def test_report_csv_layout():
    rep = M.MetricReport(per_view=[M.ViewMetrics("a", 30.0, 0.9),
                                   M.ViewMetrics("b", 32.0, 0.95)])
    lines = rep.to_csv().strip().splitlines()
    assert lines[0] == "view_id,psnr_db,ssim"
    assert lines[1].startswith("a,")
    assert lines[-1].startswith("mean,")
