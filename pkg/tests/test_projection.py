import math

import numpy as np
import pytest

from tansal.sphere import (
    OverlapWeights,
    angular_coordinate_maps,
    backproject_tangent_to_erp,
    backproject_vjp,
    build_forward_grid,
    build_inverse_grid,
    erp_pixel_angles,
    grids_for_layout,
    make_layout,
    project_erp_to_tangent,
)
from tansal.sphere import cache as grid_cache

from oracles import ref_bilinear_wrap, ref_gnomonic_forward

rng = np.random.default_rng(5)


def small_layout(**kw):
    args = dict(kind="ring", num_planes=6, fov_deg=100.0, patch_px=24)
    args.update(kw)
    return make_layout(**args)


def test_erp_pixel_angles_hand_values():
    ph, th = erp_pixel_angles(2, 4)
    assert ph.shape == (2, 4)
    assert np.allclose(ph[:, 0], [math.pi / 4, -math.pi / 4])
    assert np.allclose(th[0], [-0.75 * math.pi, -0.25 * math.pi, 0.25 * math.pi, 0.75 * math.pi])
    with pytest.raises(ValueError):
        erp_pixel_angles(4, 9)


def test_forward_grid_shapes_and_bounds():
    lay = small_layout()
    grid = build_forward_grid(lay, 32, 64)
    assert grid.rows.shape == (6, 24, 24)
    assert grid.rows.min() >= -0.5 and grid.rows.max() <= 31.5
    assert grid.cols.min() >= -0.5 and grid.cols.max() < 63.5


def test_forward_grid_center_pixel_hits_plane_center():
    lay = make_layout("explicit", centers=[(0.2, 1.1)], fov_deg=80.0, patch_px=25)
    grid = build_forward_grid(lay, 64, 128)
    mid = 25 // 2
    # odd patch side: the middle pixel center sits exactly on the plane axis
    assert grid.phi[0, mid, mid] == pytest.approx(0.2, abs=1e-12)
    assert grid.theta[0, mid, mid] == pytest.approx(1.1, abs=1e-12)


def test_north_pole_plane_sees_all_longitudes():
    lay = make_layout("explicit", centers=[(math.pi / 2, 0.0)], fov_deg=80.0, patch_px=32)
    grid = build_forward_grid(lay, 32, 64)
    hist, _ = np.histogram(grid.theta.ravel(), bins=8, range=(-math.pi, math.pi))
    assert (hist > 0).all()


def test_project_constant_image_is_exact():
    lay = small_layout()
    grid = build_forward_grid(lay, 32, 64)
    out = project_erp_to_tangent(np.full((32, 64), 0.37), grid)
    assert np.allclose(out, 0.37, atol=1e-15)


def test_project_matches_reference_bilinear():
    lay = small_layout(num_planes=4)
    grid = build_forward_grid(lay, 32, 64)
    img = rng.random((32, 64))
    out = project_erp_to_tangent(img, grid)
    for _ in range(60):
        k = rng.integers(0, 4)
        u = rng.integers(0, 24)
        v = rng.integers(0, 24)
        expect = ref_bilinear_wrap(img, grid.rows[k, u, v], grid.cols[k, u, v])
        assert abs(out[k, u, v] - expect) < 1e-12


def test_project_multichannel_and_dim_checks():
    lay = small_layout(num_planes=3)
    grid = build_forward_grid(lay, 32, 64)
    img = rng.random((5, 32, 64))
    out = project_erp_to_tangent(img, grid)
    assert out.shape == (3, 5, 24, 24)
    mono = project_erp_to_tangent(img[2], grid)
    assert np.allclose(out[:, 2], mono)
    with pytest.raises(ValueError):
        project_erp_to_tangent(rng.random((16, 32)), grid)
    inv, _ = build_inverse_grid(lay, 32, 64)
    with pytest.raises(ValueError):
        project_erp_to_tangent(img, inv)


def test_projection_is_continuous_across_the_seam():
    # plane centered on the longitude seam; a smooth function of direction
    # must come back smooth, no jump where columns wrap
    lay = make_layout("explicit", centers=[(0.0, math.pi - 1e-9)], fov_deg=60.0, patch_px=33)
    h, w = 64, 128
    ph, th = erp_pixel_angles(h, w)
    img = np.sin(th) + 0.5 * np.cos(ph) * np.cos(th)
    grid = build_forward_grid(lay, h, w)
    out = project_erp_to_tangent(img, grid)
    expect = np.sin(grid.theta[0]) + 0.5 * np.cos(grid.phi[0]) * np.cos(grid.theta[0])
    assert np.abs(out[0] - expect).max() < 5e-3


def test_inverse_grid_valid_flags_match_footprint():
    lay = small_layout(num_planes=5, fov_deg=90.0)
    h, w = 16, 32
    grid, _ = build_inverse_grid(lay, h, w)
    ph, th = erp_pixel_angles(h, w)
    s = math.tan(math.radians(lay.fov_deg) / 2)
    for _ in range(150):
        i = rng.integers(0, h)
        j = rng.integers(0, w)
        k = rng.integers(0, 5)
        c = lay.centers[k]
        try:
            x, y = ref_gnomonic_forward(c.phi, c.theta, ph[i, j], th[i, j])
            inside = abs(x) <= s and abs(y) <= s
        except ValueError:
            inside = False
        assert grid.valid[i, j, k] == inside


def test_inverse_grid_uv_in_range_and_weights_normalized():
    lay = small_layout()
    grid, weights = build_inverse_grid(lay, 32, 64)
    p = lay.patch_px
    assert weights.normalized
    assert (grid.u[grid.valid] >= -0.5).all() and (grid.u[grid.valid] <= p - 0.5).all()
    assert (grid.v[grid.valid] >= -0.5).all() and (grid.v[grid.valid] <= p - 0.5).all()
    sums = weights.w.sum(axis=2)
    assert np.allclose(sums[weights.covered], 1.0, atol=1e-12)
    assert (weights.w >= 0).all()
    # weights are zero exactly where the footprint test fails
    assert (weights.w[~grid.valid] == 0).all()


def test_duplicate_planes_split_weight_evenly():
    lay = small_layout(num_planes=3)
    _, weights = build_inverse_grid(lay, 16, 32, normalize=False)
    doubled = OverlapWeights(
        w=np.concatenate([weights.w, weights.w], axis=2),
        normalized=False,
        raw_total=2.0 * weights.raw_total,
    ).normalize()
    covered = doubled.covered
    pair = doubled.w[:, :, :3][covered] + 0.0
    assert np.allclose(doubled.w[:, :, :3][covered], doubled.w[:, :, 3:][covered], atol=1e-15)
    only = weights.w[:, :, 0] > 0
    single_share = doubled.w[:, :, 0][only & (weights.w[:, :, 1] == 0) & (weights.w[:, :, 2] == 0)]
    assert np.allclose(single_share, 0.5, atol=1e-12)
    assert pair.shape[0] == covered.sum()


def test_consistency_mask_modes():
    lay = small_layout()
    grid, weights = build_inverse_grid(lay, 32, 64)
    ones = weights.consistency_mask("none")
    assert ones.shape == (32, 64) and (ones == 1.0).all()
    binary = weights.consistency_mask("binary")
    counts = grid.valid.sum(axis=2)
    assert ((binary == 1.0) == (counts >= 2)).all()
    countm = weights.consistency_mask("count")
    assert countm.max() == 1.0 and (countm >= 0).all()
    blend = weights.consistency_mask("blend")
    assert blend.max() == 1.0 and (blend >= 0).all()
    with pytest.raises(ValueError):
        weights.consistency_mask("other")


def test_backproject_constant_stack():
    lay = small_layout()
    grid, weights = build_inverse_grid(lay, 32, 64)
    stack = np.full((6, 24, 24), 2.5)
    out = backproject_tangent_to_erp(stack, grid, weights)
    assert np.allclose(out[weights.covered], 2.5, atol=1e-12)
    assert (out[~weights.covered] == 0).all()


def test_backproject_matches_loop_reference():
    lay = small_layout(num_planes=4, patch_px=12)
    h, w = 16, 32
    grid, weights = build_inverse_grid(lay, h, w)
    stack = rng.random((4, 12, 12))
    out = backproject_tangent_to_erp(stack, grid, weights)

    def patch_sample(img, u, v):
        p = img.shape[0]
        u0, v0 = math.floor(u), math.floor(v)
        fu, fv = u - u0, v - v0
        val = 0.0
        for du, wu in ((0, 1 - fu), (1, fu)):
            for dv, wv in ((0, 1 - fv), (1, fv)):
                uu = min(max(u0 + du, 0), p - 1)
                vv = min(max(v0 + dv, 0), p - 1)
                val += wu * wv * img[uu, vv]
        return val

    for _ in range(100):
        i = rng.integers(0, h)
        j = rng.integers(0, w)
        expect = 0.0
        for k in range(4):
            if grid.valid[i, j, k]:
                expect += weights.w[i, j, k] * patch_sample(
                    stack[k], grid.u[i, j, k], grid.v[i, j, k]
                )
        assert abs(out[i, j] - expect) < 1e-12


def test_backproject_requires_normalized_weights_and_matching_stack():
    lay = small_layout()
    grid, weights = build_inverse_grid(lay, 32, 64, normalize=False)
    stack = np.zeros((6, 24, 24))
    with pytest.raises(ValueError):
        backproject_tangent_to_erp(stack, grid, weights)
    norm = weights.normalize()
    with pytest.raises(ValueError):
        backproject_tangent_to_erp(np.zeros((5, 24, 24)), grid, norm)
    fwd = build_forward_grid(lay, 32, 64)
    with pytest.raises(ValueError):
        backproject_tangent_to_erp(stack, fwd, norm)


def test_uncovered_pixels_stay_zero():
    lay = make_layout("explicit", centers=[(0.0, 0.0)], fov_deg=40.0, patch_px=16)
    grid, weights = build_inverse_grid(lay, 32, 64)
    assert weights.coverage_fraction < 0.2
    out = backproject_tangent_to_erp(np.ones((1, 16, 16)), grid, weights)
    assert (out[~weights.covered] == 0).all()
    assert np.allclose(out[weights.covered], 1.0)


def test_vjp_is_exact_adjoint():
    lay = small_layout(num_planes=5, patch_px=16)
    grid, weights = build_inverse_grid(lay, 16, 32)
    for _ in range(5):
        x = rng.random((5, 16, 16))
        g = rng.random((16, 32))
        lhs = float((g * backproject_tangent_to_erp(x, grid, weights)).sum())
        rhs = float((backproject_vjp(g, grid, weights) * x).sum())
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_vjp_multichannel_shapes():
    lay = small_layout(num_planes=3, patch_px=10)
    grid, weights = build_inverse_grid(lay, 16, 32)
    g = rng.random((2, 16, 32))
    out = backproject_vjp(g, grid, weights)
    assert out.shape == (3, 2, 10, 10)
    mono = backproject_vjp(g[0], grid, weights)
    assert np.allclose(out[:, 0], mono)


def test_round_trip_reconstruction_quality():
    # generous patch size relative to the raster keeps resampling loss small
    lay = make_layout("icosahedral", num_planes=20, fov_deg=80.0, patch_px=64)
    h, w = 64, 128
    fwd = build_forward_grid(lay, h, w)
    inv, weights = build_inverse_grid(lay, h, w)
    ph, th = erp_pixel_angles(h, w)
    img = 0.5 + 0.4 * np.sin(3 * th) * np.cos(2 * ph)
    back = backproject_tangent_to_erp(project_erp_to_tangent(img, fwd), inv, weights)
    mse = float(((back - img) ** 2).mean())
    psnr = 10.0 * math.log10(1.0 / mse)
    assert psnr > 30.0


def test_decode_resolution_override():
    lay = small_layout(patch_px=24)
    grid, weights = build_inverse_grid(lay, 16, 32, patch_px=8)
    assert grid.patch_px == 8
    out = backproject_tangent_to_erp(np.ones((6, 8, 8)), grid, weights)
    assert np.allclose(out[weights.covered], 1.0)


def test_angular_coordinate_maps_agree_with_forward_grid():
    lay = small_layout(num_planes=4)
    maps = angular_coordinate_maps(lay)
    grid = build_forward_grid(lay, 32, 64)
    assert maps.shape == (4, 2, 24, 24)
    assert np.allclose(maps[:, 0], grid.phi, atol=1e-15)
    assert np.allclose(maps[:, 1], grid.theta, atol=1e-15)


def test_grid_cache_round_trip(tmp_path):
    lay = small_layout()
    d = str(tmp_path)
    a = grids_for_layout(lay, 32, 64, cache_dir=d)
    files = list(tmp_path.glob("grid_*.npz"))
    assert len(files) == 1
    b = grids_for_layout(lay, 32, 64, cache_dir=d)
    assert np.array_equal(a[0].rows, b[0].rows)
    assert np.array_equal(a[1].u, b[1].u)
    assert np.array_equal(a[2].w, b[2].w)
    # no cache dir: computed directly
    c = grids_for_layout(lay, 32, 64)
    assert np.array_equal(a[2].w, c[2].w)


def test_grid_cache_corruption_recovers(tmp_path):
    lay = small_layout(num_planes=4)
    d = str(tmp_path)
    a = grids_for_layout(lay, 16, 32, cache_dir=d)
    target = next(tmp_path.glob("grid_*.npz"))
    target.write_bytes(b"not a grid at all")
    b = grids_for_layout(lay, 16, 32, cache_dir=d)
    assert np.array_equal(a[2].w, b[2].w)
    # the rewritten entry is valid again
    c = grids_for_layout(lay, 16, 32, cache_dir=d)
    assert np.array_equal(a[1].valid, c[1].valid)


def test_grid_cache_version_bump_invalidates(tmp_path, monkeypatch):
    lay = small_layout(num_planes=3)
    d = str(tmp_path)
    grids_for_layout(lay, 16, 32, cache_dir=d)
    monkeypatch.setattr(grid_cache, "CACHE_FORMAT_VERSION", 999)
    grids_for_layout(lay, 16, 32, cache_dir=d)
    # old entry remains plus a fresh one under the new key
    assert len(list(tmp_path.glob("grid_*.npz"))) == 2


def test_grid_cache_keys_differ_by_decode_resolution(tmp_path):
    lay = small_layout(num_planes=3)
    d = str(tmp_path)
    grids_for_layout(lay, 16, 32, cache_dir=d)
    grids_for_layout(lay, 16, 32, decode_px=8, cache_dir=d)
    assert len(list(tmp_path.glob("grid_*.npz"))) == 2
