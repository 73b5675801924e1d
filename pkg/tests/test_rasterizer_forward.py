import numpy as np
import pytest

from featsplat.errors import NonFiniteParameter
from featsplat.rasterizer import RenderConfig, Splat2D, project_gaussian, render
from featsplat.scene_model import GaussianSet, logit, rgb_to_sh0

from conftest import make_view, random_scene
from oracles import reference_render


def single_gaussian(opacity=0.5, color=(1.0, 0.25, 0.5), pos=(0.0, 0.0, 2.0),
                    scale=0.2, features=(0.0, 0.1, 0.2, 0.3), dtype=np.float64):
    return GaussianSet(
        positions=np.array([pos], dtype=dtype),
        log_scales=np.full((1, 3), np.log(scale), dtype=dtype),
        rotations=np.array([[1.0, 0, 0, 0]], dtype=dtype),
        opacity_logits=np.array([logit(opacity)], dtype=dtype),
        colors_sh=rgb_to_sh0(np.array([color]))[..., None].astype(dtype),
        features=np.array([features], dtype=dtype),
    )


# --- projection ---

def test_project_on_axis_hits_principal_point():
    view = make_view()
    sp = project_gaussian([0, 0, 3.0], np.eye(3) * 0.01, view, RenderConfig())
    np.testing.assert_allclose(sp.mean2d, [16.0, 16.0], atol=1e-12)
    assert sp.depth == 3.0


def test_project_isotropic_closed_form():
    view = make_view(fx=30.0, fy=30.0)
    s, z = 0.2, 2.0
    sp = project_gaussian([0, 0, z], np.eye(3) * s * s, view, RenderConfig())
    expected = (view.intrinsics.fx * s / z) ** 2 + 0.3
    np.testing.assert_allclose(sp.cov2d, np.eye(2) * expected, atol=1e-12)


def test_project_behind_camera_is_culled():
    view = make_view()
    assert project_gaussian([0, 0, -1.0], np.eye(3) * 0.01, view, RenderConfig()) is None


def test_project_far_outside_bounds_is_culled():
    view = make_view()
    assert project_gaussian([100.0, 0, 2.0], np.eye(3) * 1e-4, view, RenderConfig()) is None


def test_project_radius_at_least_one():
    view = make_view()
    sp = project_gaussian([0, 0, 2.0], np.eye(3) * 1e-12, view, RenderConfig())
    assert isinstance(sp, Splat2D)
    assert sp.radius >= 1


# --- rendering basics ---

def test_render_empty_set_gives_background():
    view = make_view()
    gs = GaussianSet(positions=np.zeros((0, 3)), log_scales=np.zeros((0, 3)),
                     rotations=np.zeros((0, 4)), opacity_logits=np.zeros(0),
                     colors_sh=np.zeros((0, 3, 1)), features=np.zeros((0, 2)))
    cfg = RenderConfig(background_rgb=(0.1, 0.2, 0.3),
                       background_feature=np.array([0.5, -0.5]))
    out = render(gs, view, cfg)
    np.testing.assert_array_equal(out.alpha, 0.0)
    np.testing.assert_allclose(out.rgb, np.broadcast_to([0.1, 0.2, 0.3], (32, 32, 3)))
    np.testing.assert_allclose(out.feature, np.broadcast_to([0.5, -0.5], (32, 32, 2)))
    np.testing.assert_array_equal(out.per_pixel_contributor_count, 0)


def test_render_single_gaussian_center_pixel():
    # mean lands exactly on pixel (16, 16): alpha there is exactly o
    view = make_view()
    gs = single_gaussian(opacity=0.5)
    out = render(gs, view, RenderConfig())
    np.testing.assert_allclose(out.alpha[16, 16], 0.5, atol=1e-12)
    np.testing.assert_allclose(out.rgb[16, 16], 0.5 * np.array([1.0, 0.25, 0.5]),
                               atol=1e-12)
    np.testing.assert_allclose(out.depth[16, 16], 2.0, atol=1e-9)
    assert out.per_pixel_contributor_count[16, 16] == 1


def test_render_two_overlapping_depth_order():
    view = make_view()
    c1, c2 = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    gs = GaussianSet(
        positions=np.array([[0, 0, 1.0], [0, 0, 2.0]], dtype=np.float64),
        log_scales=np.full((2, 3), np.log(0.4)),
        rotations=np.array([[1.0, 0, 0, 0]] * 2),
        opacity_logits=np.array([logit(0.5), logit(0.5)]),
        colors_sh=rgb_to_sh0(np.stack([c1, c2]))[..., None],
        features=np.zeros((2, 1)),
    )
    out = render(gs, view, RenderConfig())
    np.testing.assert_allclose(out.rgb[16, 16], 0.5 * c1 + 0.25 * c2, atol=1e-12)
    np.testing.assert_allclose(out.alpha[16, 16], 0.75, atol=1e-12)


def test_depth_ties_break_by_gaussian_index():
    view = make_view()
    c1, c2 = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    gs = GaussianSet(
        positions=np.array([[0, 0, 2.0], [0, 0, 2.0]], dtype=np.float64),
        log_scales=np.full((2, 3), np.log(0.4)),
        rotations=np.array([[1.0, 0, 0, 0]] * 2),
        opacity_logits=np.array([logit(0.5), logit(0.5)]),
        colors_sh=rgb_to_sh0(np.stack([c1, c2]))[..., None],
        features=np.zeros((2, 1)),
    )
    out = render(gs, view, RenderConfig())
    # gaussian 0 composites first
    np.testing.assert_allclose(out.rgb[16, 16], 0.5 * c1 + 0.25 * c2, atol=1e-12)


def test_render_matches_bruteforce_oracle():
    view = make_view(width=24, height=20, fx=25.0, fy=27.0)
    rng = np.random.default_rng(0)
    for seed in range(3):
        gs = random_scene(np.random.default_rng(seed), n=12, feature_dim=3,
                          sh_degree=seed % 2)
        cfg = RenderConfig(background_rgb=(0.05, 0.1, 0.15),
                           background_feature=rng.normal(size=3))
        out = render(gs, view, cfg)
        rgb, feat, alpha = reference_render(gs, view, cfg)
        np.testing.assert_allclose(out.rgb, rgb, atol=1e-9)
        np.testing.assert_allclose(out.feature, feat, atol=1e-9)
        np.testing.assert_allclose(out.alpha, alpha, atol=1e-9)


def test_tile_size_invariance():
    view = make_view(width=40, height=24)
    gs = random_scene(np.random.default_rng(1), n=20, feature_dim=2)
    base = render(gs, view, RenderConfig(tile_size=16))
    for ts in (5, 8, 64):
        other = render(gs, view, RenderConfig(tile_size=ts))
        np.testing.assert_array_equal(base.rgb, other.rgb)
        np.testing.assert_array_equal(base.feature, other.feature)
        np.testing.assert_array_equal(base.alpha, other.alpha)


def test_render_deterministic_and_thread_invariant():
    view = make_view()
    gs = random_scene(np.random.default_rng(2), n=15, feature_dim=4)
    a = render(gs, view, RenderConfig())
    b = render(gs, view, RenderConfig())
    c = render(gs, view, RenderConfig(workers=4))
    for x, y in ((a.rgb, b.rgb), (a.rgb, c.rgb), (a.feature, c.feature),
                 (a.alpha, c.alpha), (a.depth, c.depth)):
        np.testing.assert_array_equal(x, y)


def test_alpha_monotone_in_gaussian_count():
    # moderate opacities keep transmittance above the early-stop threshold,
    # where adding a splat can only increase coverage
    view = make_view()
    rng = np.random.default_rng(3)
    gs = random_scene(rng, n=10, feature_dim=2, opacity_range=(0.1, 0.4))
    cfg = RenderConfig()
    prev = render(GaussianSet(*(a[:0] for a in gs.param_arrays().values()),
                              sh_degree=0), view, cfg).alpha
    for n in range(1, 11):
        sub = GaussianSet(*(a[:n] for a in gs.param_arrays().values()), sh_degree=0)
        cur = render(sub, view, cfg).alpha
        assert np.all(cur >= prev - 1e-15)
        prev = cur


def test_feature_color_symmetry():
    # features duplicating the activated colors render identically, bitwise
    view = make_view()
    rng = np.random.default_rng(4)
    gs = random_scene(rng, n=8, feature_dim=3)
    from featsplat.scene_model import sh0_to_rgb
    gs.features = np.maximum(sh0_to_rgb(gs.colors_sh[:, :, 0]), 0.0)
    out = render(gs, view, RenderConfig())
    np.testing.assert_array_equal(out.rgb, out.feature)


def test_alpha_bounds_and_background_exactness():
    view = make_view()
    gs = random_scene(np.random.default_rng(5), n=10, feature_dim=2)
    cfg = RenderConfig(background_rgb=(0.25, 0.5, 0.75))
    out = render(gs, view, cfg)
    assert np.all(out.alpha >= 0.0) and np.all(out.alpha <= 1.0)
    assert np.all(np.isfinite(out.rgb)) and np.all(np.isfinite(out.feature))
    empty = out.alpha == 0.0
    if empty.any():
        np.testing.assert_array_equal(out.rgb[empty],
                                      np.broadcast_to([0.25, 0.5, 0.75],
                                                      (int(empty.sum()), 3)))


def test_nonfinite_parameter_raises_with_index():
    view = make_view()
    gs = single_gaussian()
    gs2 = GaussianSet(
        positions=np.concatenate([gs.positions, [[np.nan, 0, 2.0]]]),
        log_scales=np.concatenate([gs.log_scales, gs.log_scales]),
        rotations=np.concatenate([gs.rotations, gs.rotations]),
        opacity_logits=np.concatenate([gs.opacity_logits, gs.opacity_logits]),
        colors_sh=np.concatenate([gs.colors_sh, gs.colors_sh]),
        features=np.concatenate([gs.features, gs.features]),
    )
    with pytest.raises(NonFiniteParameter) as exc:
        render(gs2, view, RenderConfig())
    assert exc.value.gaussian_index == 1


def test_render_config_validation():
    with pytest.raises(ValueError):
        RenderConfig(alpha_skip=0.995, alpha_clamp=0.99)


def test_f32_render_close_to_f64_oracle():
    view = make_view(width=24, height=24)
    gs64 = random_scene(np.random.default_rng(6), n=10, feature_dim=2)
    cfg = RenderConfig()
    out32 = render(gs64.astype(np.float32), view, cfg)
    rgb, feat, alpha = reference_render(gs64, view, cfg)
    np.testing.assert_allclose(out32.rgb, rgb, atol=5e-4)
    np.testing.assert_allclose(out32.alpha, alpha, atol=5e-4)
