"""Renderer tests: pinhole ray geometry against a scalar oracle, box
spans, depth sampling, compositing vs. the sequential reference, the
compositing backward pass vs. finite differences, and image rendering."""
import numpy as np
import pytest

import oracles
from waveplane import _kernels
from waveplane import renderer as rd
from waveplane import triplane as tp

BBOX = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])


def look_at_origin(position):
    """c2w whose -z axis points from ``position`` at the origin."""
    fwd = -np.asarray(position, np.float64)
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 1.0, 0.0])
    if abs(fwd @ up) > 0.99:
        up = np.array([1.0, 0.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    c2w = np.eye(4)
    c2w[:3, 0] = right
    c2w[:3, 1] = true_up
    c2w[:3, 2] = -fwd
    c2w[:3, 3] = position
    return c2w


class TestCamera:
    def test_from_fov(self):
        cam = rd.Camera.from_fov_x(100, 80, np.pi / 2, np.eye(4))
        assert cam.focal_px == pytest.approx(50.0)

    def test_bad_matrix(self):
        with pytest.raises(ValueError, match="4x4"):
            rd.Camera(4, 4, 10.0, np.eye(3))

    def test_bad_sizes(self):
        with pytest.raises(ValueError, match="positive"):
            rd.Camera(0, 4, 10.0, np.eye(4))

    def test_rotation_check(self):
        c2w = np.eye(4)
        c2w[0, 0] = 1.5
        cam = rd.Camera(4, 4, 10.0, c2w)
        with pytest.raises(ValueError, match="orthonormal"):
            cam.check_rotation()
        rd.Camera(4, 4, 10.0, look_at_origin([3, 2, 1])).check_rotation()


class TestMakeRays:
    def test_matches_scalar_pinhole_oracle(self):
        cam = rd.Camera(7, 5, 11.0, look_at_origin([2.0, -1.0, 3.0]))
        origins, dirs = rd.make_rays(cam)
        r = cam.rotation
        n = 0
        for v in range(5):
            for u in range(7):
                x = (u + 0.5 - 3.5) / 11.0
                y = -(v + 0.5 - 2.5) / 11.0
                want = r @ np.array([x, y, -1.0])
                want /= np.linalg.norm(want)
                np.testing.assert_allclose(dirs[n], want, atol=1e-12)
                np.testing.assert_allclose(origins[n], cam.position,
                                           atol=1e-15)
                n += 1

    def test_identity_pose_looks_down_negative_z(self):
        cam = rd.Camera(4, 4, 8.0, np.eye(4))
        _, dirs = rd.make_rays(cam)
        assert (dirs[:, 2] < 0).all()
        assert np.allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)

    def test_pixel_subset(self):
        cam = rd.Camera(6, 4, 9.0, np.eye(4))
        o_all, d_all = rd.make_rays(cam)
        pixels = np.array([[0, 0], [3, 5], [2, 1]])
        o, d = rd.make_rays(cam, pixels)
        for k, (v, u) in enumerate(pixels):
            np.testing.assert_array_equal(d[k], d_all[v * 6 + u])
        np.testing.assert_array_equal(o, o_all[:3])

    def test_out_of_bounds_pixels(self):
        cam = rd.Camera(6, 4, 9.0, np.eye(4))
        with pytest.raises(ValueError, match="bounds"):
            rd.make_rays(cam, np.array([[4, 0]]))


class TestRayBboxSpan:
    def test_through_box(self):
        o = np.array([[0.0, 0.0, 3.0]])
        d = np.array([[0.0, 0.0, -1.0]])
        t0, t1, hit = rd.ray_bbox_span(o, d, BBOX)
        assert hit[0]
        assert t0[0] == pytest.approx(2.0)
        assert t1[0] == pytest.approx(4.0)

    def test_miss(self):
        o = np.array([[0.0, 5.0, 3.0]])
        d = np.array([[0.0, 0.0, -1.0]])
        _, _, hit = rd.ray_bbox_span(o, d, BBOX)
        assert not hit[0]

    def test_origin_inside_clamps_to_near(self):
        o = np.array([[0.2, 0.0, 0.0]])
        d = np.array([[1.0, 0.0, 0.0]])
        t0, t1, hit = rd.ray_bbox_span(o, d, BBOX)
        assert hit[0] and t0[0] == 0.0 and t1[0] == pytest.approx(0.8)

    def test_axis_parallel_ray_outside_slab(self):
        o = np.array([[2.0, 0.0, 3.0]])  # x=2 stays outside [-1, 1]
        d = np.array([[0.0, 0.0, -1.0]])
        _, _, hit = rd.ray_bbox_span(o, d, BBOX)
        assert not hit[0]

    def test_far_clip(self):
        o = np.array([[0.0, 0.0, 3.0]])
        d = np.array([[0.0, 0.0, -1.0]])
        _, t1, hit = rd.ray_bbox_span(o, d, BBOX, far=2.5)
        assert hit[0] and t1[0] == pytest.approx(2.5)


class TestSampleDepths:
    def test_midpoints(self):
        depths, delta = rd.sample_depths(np.array([1.0]), np.array([3.0]), 4)
        np.testing.assert_allclose(depths[0], [1.25, 1.75, 2.25, 2.75])
        np.testing.assert_allclose(delta[0], 0.5)

    def test_stratified_stays_in_bins(self):
        rng = np.random.default_rng(0)
        t0 = np.full(50, 2.0)
        t1 = np.full(50, 6.0)
        depths, delta = rd.sample_depths(t0, t1, 8, rng=rng, stratified=True)
        edges = 2.0 + 0.5 * np.arange(8)
        assert (depths >= edges).all() and (depths <= edges + 0.5).all()
        assert (np.diff(depths, axis=1) > 0).all()
        np.testing.assert_allclose(delta, 0.5)

    def test_stratified_needs_rng(self):
        with pytest.raises(ValueError, match="rng"):
            rd.sample_depths(np.zeros(1), np.ones(1), 4, stratified=True)


class TestComposite:
    def test_matches_sequential_oracle(self):
        rng = np.random.default_rng(1)
        r, n = 200, 17
        sigma = rng.uniform(0, 30, (r, n))
        rgb = rng.uniform(0, 1, (r, n, 3))
        delta = rng.uniform(0.01, 0.1, (r, n))
        bg = np.array([0.2, 0.5, 0.9])
        color, weights, t_res = rd.composite(sigma, rgb, delta, bg)
        assert np.abs(weights.sum(axis=1) + t_res - 1.0).max() < 1e-6
        for i in range(r):
            c, w, t = oracles.composite_ray(sigma[i], rgb[i], delta[i], bg)
            np.testing.assert_allclose(color[i], c, atol=1e-10)
            np.testing.assert_allclose(weights[i], w, atol=1e-10)
            assert abs(t_res[i] - t) < 1e-10

    def test_zero_density_returns_background(self):
        bg = np.array([0.1, 0.2, 0.3])
        color, weights, t_res = rd.composite(
            np.zeros((3, 5)), np.full((3, 5, 3), 0.7), np.full((3, 5), 0.1),
            bg)
        np.testing.assert_array_equal(color, np.tile(bg, (3, 1)))
        assert not weights.any() and (t_res == 1.0).all()

    def test_opaque_first_sample_hides_rest(self):
        sigma = np.array([[1e8, 5.0]])
        rgb = np.array([[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]])
        delta = np.full((1, 2), 0.1)
        color, weights, t_res = rd.composite(sigma, rgb, delta)
        np.testing.assert_allclose(color[0], [1, 0, 0], atol=1e-12)
        assert weights[0, 0] == pytest.approx(1.0)
        assert t_res[0] == pytest.approx(0.0, abs=1e-12)

    def test_negative_density_rejected(self):
        with pytest.raises(ValueError, match="non-negative"):
            rd.composite(np.array([[-1.0]]), np.ones((1, 1, 3)),
                         np.ones((1, 1)))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shapes"):
            rd.composite(np.ones((2, 3)), np.ones((2, 4, 3)), np.ones((2, 3)))


class TestCompositeBackward:
    def _case(self, seed, r=6, n=9):
        rng = np.random.default_rng(seed)
        sigma = rng.uniform(0, 20, (r, n))
        rgb = rng.uniform(0, 1, (r, n, 3))
        delta = rng.uniform(0.02, 0.08, (r, n))
        bg = np.array([1.0, 1.0, 1.0])
        g = rng.standard_normal((r, 3))
        return sigma, rgb, delta, bg, g

    def test_matches_finite_differences(self):
        sigma, rgb, delta, bg, g = self._case(2)
        color, weights, t_res = rd.composite(sigma, rgb, delta, bg)
        d_sigma, d_rgb = rd.composite_backward(g, sigma, rgb, delta, bg,
                                               weights, t_res)

        def loss():
            c, _, _ = rd.composite(sigma, rgb, delta, bg)
            return float(np.sum(c * g))

        rng = np.random.default_rng(3)
        for _ in range(24):
            i, j = int(rng.integers(0, 6)), int(rng.integers(0, 9))
            num = oracles.central_diff(loss, sigma, (i, j))
            assert oracles.rel_err(d_sigma[i, j], num) < 1e-3
        for _ in range(24):
            idx = (int(rng.integers(0, 6)), int(rng.integers(0, 9)),
                   int(rng.integers(0, 3)))
            num = oracles.central_diff(loss, rgb, idx)
            assert oracles.rel_err(d_rgb[idx], num) < 1e-3

    def test_zero_upstream(self):
        sigma, rgb, delta, bg, _ = self._case(4)
        color, weights, t_res = rd.composite(sigma, rgb, delta, bg)
        d_sigma, d_rgb = rd.composite_backward(
            np.zeros((6, 3)), sigma, rgb, delta, bg, weights, t_res)
        assert not d_sigma.any() and not d_rgb.any()

    def test_color_gradient_is_weight_times_upstream(self):
        sigma, rgb, delta, bg, g = self._case(5)
        _, weights, t_res = rd.composite(sigma, rgb, delta, bg)
        _, d_rgb = rd.composite_backward(g, sigma, rgb, delta, bg,
                                         weights, t_res)
        np.testing.assert_allclose(
            d_rgb, weights[:, :, None] * g[:, None, :], atol=1e-12)


def sphere_override(radius=0.5, density=200.0, color=(0.9, 0.1, 0.1)):
    col = np.asarray(color)

    def field(points, dirs):
        inside = np.linalg.norm(points, axis=1) < radius
        sigma = np.where(inside, density, 0.0)
        rgb = np.tile(col, (len(points), 1))
        return sigma, rgb

    return field


def make_model(seed=0):
    from waveplane import field as fd
    rng = np.random.default_rng(seed)
    model = tp.init_model(8, 1, 4, "haar", BBOX, rng)
    model.mlp = fd.init_mlp(model.feature_width, 16, 1, 2, rng)
    return model


class TestRenderImage:
    def test_empty_scene_is_exactly_background(self):
        model = make_model()
        cam = rd.Camera(8, 6, 10.0, look_at_origin([0, 0, 3]))
        opts = rd.RenderOpts(samples_per_ray=16, background=(0.3, 0.6, 0.9),
                             field_override=lambda p, d:
                             (np.zeros(len(p)), np.zeros((len(p), 3))))
        img = rd.render_image(model, cam, opts)
        assert img.shape == (6, 8, 3)
        np.testing.assert_array_equal(
            img, np.broadcast_to([0.3, 0.6, 0.9], (6, 8, 3)))

    def test_sphere_hits_center_misses_corner(self):
        model = make_model()
        cam = rd.Camera(9, 9, 9.0, look_at_origin([0, 0, 2.0]))
        opts = rd.RenderOpts(samples_per_ray=128,
                             field_override=sphere_override())
        img = rd.render_image(model, cam, opts)
        np.testing.assert_allclose(img[4, 4], [0.9, 0.1, 0.1], atol=1e-3)
        np.testing.assert_allclose(img[0, 0], [1.0, 1.0, 1.0], atol=1e-12)

    def test_rerender_bit_identical(self):
        model = make_model(1)
        cam = rd.Camera(10, 10, 12.0, look_at_origin([1.5, 1.0, 2.0]))
        opts = rd.RenderOpts(samples_per_ray=24, stratified=True, seed=7)
        a = rd.render_image(model, cam, opts)
        b = rd.render_image(model, cam, opts)
        np.testing.assert_array_equal(a, b)

    def test_chunking_invariant_without_jitter(self):
        model = make_model(2)
        cam = rd.Camera(11, 7, 10.0, look_at_origin([0.5, -2.0, 1.5]))
        big = rd.render_image(model, cam, rd.RenderOpts(samples_per_ray=12))
        small = rd.render_image(
            model, cam, rd.RenderOpts(samples_per_ray=12, chunk_rays=13))
        np.testing.assert_array_equal(big, small)

    def test_model_field_path_runs_and_is_finite(self):
        model = make_model(3)
        cam = rd.Camera(6, 6, 7.0, look_at_origin([0, 0, 2.5]))
        img = rd.render_image(model, cam, rd.RenderOpts(samples_per_ray=8))
        assert np.isfinite(img).all()
        assert img.min() >= 0.0 and img.max() <= 1.0 + 1e-9

    def test_rays_missing_bbox_get_background(self):
        model = make_model(5)
        cam = rd.Camera(32, 32, 4.0, look_at_origin([0, 0, 6.0]))  # wide fov
        opts = rd.RenderOpts(samples_per_ray=8,
                             field_override=sphere_override())
        img = rd.render_image(model, cam, opts)
        np.testing.assert_array_equal(img[0, 0], [1.0, 1.0, 1.0])


@pytest.mark.skipif(not _kernels.HAVE_NUMBA, reason="numba unavailable")
class TestLaneParity:
    def test_composite_lanes_agree(self):
        from waveplane._kernels import numba_lane, numpy_lane
        rng = np.random.default_rng(6)
        sigma = rng.uniform(0, 25, (40, 13))
        rgb = rng.uniform(0, 1, (40, 13, 3))
        delta = rng.uniform(0.01, 0.1, (40, 13))
        bg = np.array([0.4, 0.7, 1.0])
        g = rng.standard_normal((40, 3))
        c_np, w_np, t_np = numpy_lane.composite_fwd(sigma, rgb, delta, bg)
        c_nb, w_nb, t_nb = numba_lane.composite_fwd(sigma, rgb, delta, bg)
        np.testing.assert_allclose(c_nb, c_np, atol=1e-13)
        np.testing.assert_allclose(w_nb, w_np, atol=1e-13)
        np.testing.assert_allclose(t_nb, t_np, atol=1e-13)
        ds_np, dc_np = numpy_lane.composite_bwd(sigma, rgb, delta, bg,
                                                w_np, t_np, g)
        ds_nb, dc_nb = numba_lane.composite_bwd(sigma, rgb, delta, bg,
                                                w_nb, t_nb, g)
        np.testing.assert_allclose(ds_nb, ds_np, atol=1e-11)
        np.testing.assert_allclose(dc_nb, dc_np, atol=1e-13)

    def test_bilinear_lanes_agree(self):
        from waveplane._kernels import numba_lane, numpy_lane
        rng = np.random.default_rng(7)
        plane = rng.standard_normal((12, 9, 4))
        fx = rng.uniform(-1.0, 12.0, 300)
        fy = rng.uniform(-1.0, 9.0, 300)
        g = rng.standard_normal((300, 4))
        np.testing.assert_allclose(
            numba_lane.bilinear_gather(plane, fx, fy),
            numpy_lane.bilinear_gather(plane, fx, fy), atol=1e-13)
        np.testing.assert_allclose(
            numba_lane.bilinear_scatter(g, fx, fy, 12, 9),
            numpy_lane.bilinear_scatter(g, fx, fy, 12, 9), atol=1e-13)
