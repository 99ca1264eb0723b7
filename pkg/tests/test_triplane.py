"""Triplane model tests: construction, cached reconstruction, bilinear
feature sampling against a scalar oracle, the sampling adjoint, and the
detail-band L1."""
import numpy as np
import pytest

import oracles
from waveplane import triplane as tp
from waveplane import wavelet as wv

BBOX = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])


def make_model(rng, n_ll=4, levels=2, channels=3, bank="haar"):
    return tp.init_model(n_ll, levels, channels, bank, BBOX, rng)


class TestModel:
    def test_init_shapes_and_ranges(self):
        rng = np.random.default_rng(0)
        m = make_model(rng, n_ll=4, levels=2, channels=3)
        assert m.n_ll == 4 and m.depth == 2 and m.channels == 3
        assert m.feature_width == 9
        for name in tp.PLANE_NAMES:
            pyr = m.planes[name]
            assert pyr.ll.dtype == np.float32
            assert np.abs(pyr.ll).max() <= 1e-2
            for bands in pyr.levels:
                for band in bands:
                    assert not band.any()

    def test_parameter_names_serialization_order(self):
        rng = np.random.default_rng(1)
        m = make_model(rng, n_ll=4, levels=1)
        names = [n for n, _ in m.parameters()]
        assert names == [
            "xy.ll", "xy.level0.lh", "xy.level0.hl", "xy.level0.hh",
            "xz.ll", "xz.level0.lh", "xz.level0.hl", "xz.level0.hh",
            "yz.ll", "yz.level0.lh", "yz.level0.hl", "yz.level0.hh",
        ]

    def test_mismatched_planes_rejected(self):
        rng = np.random.default_rng(2)
        m = make_model(rng)
        planes = {n: m.planes[n] for n in tp.PLANE_NAMES}
        planes["yz"] = tp.init_model(8, 2, 3, "haar", BBOX,
                                     np.random.default_rng(3)).planes["yz"]
        with pytest.raises(ValueError, match="diverge"):
            tp.WaveletTriplane(planes=planes, bbox=BBOX)

    def test_bad_bbox_rejected(self):
        rng = np.random.default_rng(4)
        m = make_model(rng)
        with pytest.raises(ValueError, match="bbox"):
            tp.WaveletTriplane(planes=m.planes,
                               bbox=np.array([[1, 0, 0], [0, 1, 1]]))


class TestReconstructPlanes:
    def test_depth_zero_is_ll(self):
        rng = np.random.default_rng(5)
        m = make_model(rng)
        planes = tp.reconstruct_planes(m, 0)
        for name, plane in zip(tp.PLANE_NAMES, planes):
            np.testing.assert_array_equal(
                plane, np.asarray(m.planes[name].ll, np.float64))

    def test_full_depth_side(self):
        rng = np.random.default_rng(6)
        m = make_model(rng, n_ll=4, levels=2)
        planes = tp.reconstruct_planes(m)
        assert all(p.shape == (16, 16, 3) for p in planes)

    def test_zero_details_full_depth_is_smooth_upsampling(self):
        rng = np.random.default_rng(7)
        m = make_model(rng, n_ll=4, levels=2, bank="bior2.2")
        plane = tp.reconstruct_planes(m)[0]
        redone = wv.decompose(plane, 1, "bior2.2")
        for band in (redone.levels[0].lh, redone.levels[0].hl,
                     redone.levels[0].hh):
            np.testing.assert_allclose(band, 0.0, atol=1e-12)

    def test_cache_transparency_and_invalidation(self):
        rng = np.random.default_rng(8)
        m = make_model(rng)
        first = tp.reconstruct_planes(m)
        again = tp.reconstruct_planes(m)
        assert all(a is b for a, b in zip(first, again))  # cache hit
        m.invalidate_cache()
        recomputed = tp.reconstruct_planes(m)
        for a, b in zip(first, recomputed):
            np.testing.assert_array_equal(a, b)  # bit-identical rebuild
        m.planes["xy"].levels[1].hh[0, 0, 0] = 1.0
        m.invalidate_cache()
        changed = tp.reconstruct_planes(m)
        assert not np.array_equal(first[0], changed[0])

    def test_depth_monotone_sharing(self):
        # editing a band at level >= d never alters the depth-d planes
        rng = np.random.default_rng(9)
        m = make_model(rng, n_ll=4, levels=2)
        before = [p.copy() for p in tp.reconstruct_planes(m, 1)]
        m.planes["xy"].levels[1].lh[2, 3, 1] = 7.0
        m.invalidate_cache()
        after = tp.reconstruct_planes(m, 1)
        for a, b in zip(before, after):
            np.testing.assert_array_equal(a, b)

    def test_depth_out_of_range(self):
        rng = np.random.default_rng(10)
        m = make_model(rng, levels=2)
        with pytest.raises(ValueError, match="depth"):
            tp.reconstruct_planes(m, 3)


class TestSampleFeatures:
    def test_constant_planes_sample_constant(self):
        rng = np.random.default_rng(11)
        m = make_model(rng, n_ll=4, levels=0, channels=2)
        for name in tp.PLANE_NAMES:
            m.planes[name].ll[:] = 0.25
        pts = np.array([[0.0, 0.0, 0.0], [0.3, -0.4, 0.9], [1.0, 1.0, 1.0]])
        feats = tp.sample_features(m, pts)
        np.testing.assert_allclose(feats, 0.25, atol=1e-12)

    def test_grid_node_exact(self):
        rng = np.random.default_rng(12)
        m = make_model(rng, n_ll=4, levels=0, channels=1)
        side = 4
        # world point whose projections land exactly on texel centers
        i, j, k = 1, 2, 3
        unit = (np.array([i, j, k]) + 0.5) / side
        world = BBOX[0] + unit * (BBOX[1] - BBOX[0])
        feats = tp.sample_features(m, world[None, :])[0]
        xy = np.asarray(m.planes["xy"].ll, np.float64)
        xz = np.asarray(m.planes["xz"].ll, np.float64)
        yz = np.asarray(m.planes["yz"].ll, np.float64)
        np.testing.assert_allclose(
            feats, [xy[i, j, 0], xz[i, k, 0], yz[j, k, 0]], atol=1e-12)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(13)
        m = make_model(rng, n_ll=8, levels=1, channels=2, bank="bior2.2")
        for name in tp.PLANE_NAMES:
            for bands in m.planes[name].levels:
                bands.lh[:] = rng.standard_normal(bands.lh.shape) * 0.1
        m.invalidate_cache()
        pts = rng.uniform(-1, 1, size=(50, 3))
        feats = tp.sample_features(m, pts)
        planes = tp.reconstruct_planes(m)
        side = planes[0].shape[0]
        unit = (pts - BBOX[0]) / (BBOX[1] - BBOX[0])
        for n in range(50):
            want = []
            for (a0, a1), plane in zip(((0, 1), (0, 2), (1, 2)), planes):
                want.append(oracles.bilinear_point(
                    plane, unit[n, a0] * side - 0.5, unit[n, a1] * side - 0.5))
            np.testing.assert_allclose(feats[n], np.concatenate(want),
                                       atol=1e-12)

    def test_concatenation_order(self):
        rng = np.random.default_rng(14)
        m = make_model(rng, n_ll=4, levels=0, channels=2)
        m.planes["xy"].ll[:] = 1.0
        m.planes["xz"].ll[:] = 2.0
        m.planes["yz"].ll[:] = 3.0
        feats = tp.sample_features(m, np.zeros((1, 3)))[0]
        np.testing.assert_allclose(feats, [1, 1, 2, 2, 3, 3], atol=1e-12)

    def test_outside_bbox_raises(self):
        rng = np.random.default_rng(15)
        m = make_model(rng)
        with pytest.raises(ValueError, match="outside"):
            tp.sample_features(m, np.array([[0.0, 0.0, 1.5]]))

    def test_continuity_across_texel_boundaries(self):
        rng = np.random.default_rng(16)
        m = make_model(rng, n_ll=8, levels=0, channels=1)
        eps = 1e-9
        base = np.array([[0.125, 0.25, -0.3]])
        f0 = tp.sample_features(m, base - eps)
        f1 = tp.sample_features(m, base + eps)
        np.testing.assert_allclose(f1, f0, atol=1e-6)


class TestSampleFeaturesBackward:
    def test_adjoint_dot_identity(self):
        rng = np.random.default_rng(17)
        m = make_model(rng, n_ll=8, levels=1, channels=2, bank="haar")
        for name in tp.PLANE_NAMES:
            m.planes[name].levels[0].hh[:] = \
                rng.standard_normal((8, 8, 2)).astype(np.float32)
        m.invalidate_cache()
        pts = rng.uniform(-1, 1, size=(40, 3))
        g = rng.standard_normal((40, 6))
        feats = tp.sample_features(m, pts)
        lhs = np.vdot(feats, g)
        grads = tp.sample_features_backward(m, pts, g)
        planes = tp.reconstruct_planes(m)
        rhs = sum(np.vdot(p, gp) for p, gp in zip(planes, grads))
        assert oracles.rel_err(lhs, rhs) < 1e-12

    def test_gradient_shape_mismatch_raises(self):
        rng = np.random.default_rng(18)
        m = make_model(rng)
        with pytest.raises(ValueError, match="gradient shape"):
            tp.sample_features_backward(m, np.zeros((2, 3)), np.zeros((2, 5)))


class TestHighFreqL1:
    def test_fresh_model_is_zero(self):
        rng = np.random.default_rng(19)
        assert tp.high_freq_l1(make_model(rng)) == 0.0

    def test_single_coefficient(self):
        rng = np.random.default_rng(20)
        m = make_model(rng)
        m.planes["xz"].levels[1].hl[1, 1, 0] = -3.0
        assert tp.high_freq_l1(m) == pytest.approx(3.0, abs=1e-12)

    def test_matches_abs_sum_oracle(self):
        rng = np.random.default_rng(21)
        m = make_model(rng, n_ll=4, levels=2, channels=2)
        total = 0.0
        for name in tp.PLANE_NAMES:
            for bands in m.planes[name].levels:
                for band in bands:
                    band[:] = rng.standard_normal(band.shape).astype(np.float32)
                    total += np.abs(band.astype(np.float64)).sum()
        assert tp.high_freq_l1(m) == pytest.approx(total, rel=1e-12)
