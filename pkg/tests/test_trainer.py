"""Training-loop tests: config validation, schedules, PSNR, the wavelet
adjoint identity, and short end-to-end runs checked for learning progress,
determinism and artifact output."""
import csv
import math

import numpy as np
import pytest

from waveplane import optim
from waveplane import trainer as tr
from waveplane import triplane as tp
from waveplane import wavelet as wv
from waveplane.io_cli import checkpoint as ck
from waveplane.io_cli import datasets as ds

BBOX = np.array([[-1.0, -1.0, -1.0], [1.0, 1.0, 1.0]])


def tiny_config(**overrides):
    base = dict(n_ll=8, levels=1, base_side=8, final_side=16, channels=4,
                reg_weight=0.1, mlp_width=16, mlp_depth_density=1,
                mlp_depth_color=2, total_steps=30, rays_per_batch=128,
                samples_per_ray=8, filter="haar", seed=0, val_every=10,
                val_views=1)
    base.update(overrides)
    return tr.TrainConfig(**base)


def tiny_scene():
    return ds.make_synthetic(resolution=16, n_train=6, n_val=2, n_test=1,
                             seed=0, master_scale=2)


class TestTrainConfig:
    def test_side_invariants(self):
        with pytest.raises(ValueError, match="final_side"):
            tr.TrainConfig(n_ll=16, levels=3, base_side=32, final_side=64)
        with pytest.raises(ValueError, match="base_side"):
            tr.TrainConfig(n_ll=16, levels=3, base_side=24, final_side=128)

    def test_default_schedule_equal_splits(self):
        cfg = tr.TrainConfig(n_ll=16, levels=3, base_side=32,
                             final_side=128, total_steps=2000)
        assert cfg.c2f_schedule == ((667, 2), (1333, 3))

    def test_no_growth_when_base_is_final(self):
        cfg = tr.TrainConfig(n_ll=16, levels=3, base_side=128,
                             final_side=128)
        assert cfg.c2f_schedule == ()

    def test_schedule_must_end_at_levels(self):
        with pytest.raises(ValueError, match="nondecreasing"):
            tr.TrainConfig(n_ll=16, levels=3, base_side=32, final_side=128,
                           c2f_schedule=((100, 2),))

    def test_preset_expansion(self):
        cfg = tr.config_from_preset("small")
        assert (cfg.n_ll, cfg.levels, cfg.base_side, cfg.final_side) == \
            (64, 4, 512, 1024)
        assert (cfg.channels, cfg.reg_weight, cfg.mlp_width) == (16, 0.2, 64)
        assert (cfg.mlp_depth_density, cfg.mlp_depth_color) == (1, 2)
        assert cfg.total_steps == 6000
        assert cfg.filter == "bior6.8"

    def test_preset_overrides(self):
        cfg = tr.config_from_preset("micro", total_steps=50, seed=3)
        assert cfg.total_steps == 50 and cfg.seed == 3


class TestPsnr:
    def test_identical_is_inf(self):
        x = np.random.default_rng(0).uniform(0, 1, (8, 8, 3))
        assert tr.psnr(x, x) == float("inf")

    def test_known_mse(self):
        a = np.zeros((10, 10, 3))
        b = np.full((10, 10, 3), 0.1)
        assert tr.psnr(a, b) == pytest.approx(20.0)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(1)
        a = rng.uniform(0, 1, (6, 5, 3))
        b = rng.uniform(0, 1, (6, 5, 3))
        mse = np.mean((a - b) ** 2)
        assert tr.psnr(a, b) == pytest.approx(10 * math.log10(1 / mse))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="disagree"):
            tr.psnr(np.zeros((2, 2, 3)), np.zeros((3, 2, 3)))


class TestWaveletAdjoint:
    def make_model(self, bank):
        rng = np.random.default_rng(2)
        m = tp.init_model(8, 2, 3, bank, BBOX, rng)
        for name in tp.PLANE_NAMES:
            for bands in m.planes[name].levels:
                bands.lh[:] = rng.standard_normal(bands.lh.shape) \
                    .astype(np.float32)
        m.invalidate_cache()
        return m

    @pytest.mark.parametrize("bank", ["haar", "bior2.2", "bior6.8"])
    def test_inner_product_identity(self, bank):
        rng = np.random.default_rng(3)
        m = self.make_model(bank)
        g = [rng.standard_normal((32, 32, 3)) for _ in range(3)]
        grads = tr.wavelet_adjoint(m, g)
        planes = tp.reconstruct_planes(m)
        lhs = sum(np.vdot(p, gi) for p, gi in zip(planes, g))
        rhs = 0.0
        for (name, p) in m.parameters():
            if name.startswith("mlp"):
                continue
            rhs += np.vdot(np.asarray(p, np.float64), grads[name])
        assert abs(lhs - rhs) / max(abs(lhs), abs(rhs)) < 1e-10

    def test_zero_gradient(self):
        m = self.make_model("bior2.2")
        grads = tr.wavelet_adjoint(m, [np.zeros((32, 32, 3))] * 3)
        assert all(not g.any() for g in grads.values())

    def test_haar_adjoint_equals_decompose(self):
        # orthonormal bank: adjoint equals analysis up to the amplitude-
        # normalization factor 4**k for a band k levels below the top
        rng = np.random.default_rng(4)
        m = self.make_model("haar")
        g = rng.standard_normal((32, 32, 3))
        grads = tr.wavelet_adjoint(m, [g, np.zeros_like(g),
                                       np.zeros_like(g)])
        pyr = wv.decompose(g, 2, "haar")
        np.testing.assert_allclose(grads["xy.ll"], 16.0 * pyr.ll, atol=1e-10)
        for i in range(2):
            factor = 4.0 ** (2 - i)
            for band in ("lh", "hl", "hh"):
                np.testing.assert_allclose(
                    grads[f"xy.level{i}.{band}"],
                    factor * getattr(pyr.levels[i], band), atol=1e-10)

    def test_shape_mismatch(self):
        m = self.make_model("haar")
        with pytest.raises(ValueError, match="plane gradient"):
            tr.wavelet_adjoint(m, [np.zeros((64, 64, 3))] * 3)
        with pytest.raises(ValueError, match="plane gradient"):
            tr.wavelet_adjoint(m, [np.zeros((32, 32, 5))] * 3)

    def test_depth_limited_gradient_touches_low_levels_only(self):
        m = self.make_model("haar")
        g = [np.ones((16, 16, 3))] * 3
        grads = tr.wavelet_adjoint(m, g)
        assert "xy.ll" in grads and "xy.level0.lh" in grads
        assert not any(k.endswith("level1.lh") for k in grads)
        planes = tp.reconstruct_planes(m, depth=1)
        lhs = sum(np.vdot(p, gi) for p, gi in zip(planes, g))
        rhs = sum(np.vdot(np.asarray(dict(m.parameters())[k], np.float64), v)
                  for k, v in grads.items())
        assert abs(lhs - rhs) / max(abs(lhs), abs(rhs)) < 1e-10


class TestTrainLoop:
    def test_short_run_learns_and_logs(self, tmp_path):
        scene = tiny_scene()
        cfg = tiny_config(total_steps=60, c2f_schedule=((20, 1),),
                          base_side=8)
        result = tr.train(cfg, scene.dataset(), out_dir=tmp_path)
        assert len(result.metrics) == 60
        first = np.mean([r["loss_data"] for r in result.metrics[:10]])
        last = np.mean([r["loss_data"] for r in result.metrics[-10:]])
        assert last < first
        depths = [r["depth"] for r in result.metrics]
        assert depths[0] == 0 and depths[-1] == 1
        assert (tmp_path / "final.ckpt").exists()
        assert (tmp_path / "best.ckpt").exists()
        with open(tmp_path / "metrics.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 60
        assert list(rows[0]) == ["step", "loss_data", "loss_reg", "lr",
                                 "depth", "val_psnr"]
        model, extra = ck.load_checkpoint(tmp_path / "final.ckpt")
        assert model.depth == 1 and extra["step"] == 60

    def test_same_seed_identical_runs(self):
        scene = tiny_scene()
        data = scene.dataset()
        a = tr.train(tiny_config(), data)
        b = tr.train(tiny_config(), data)
        assert a.metrics == b.metrics
        pa = dict(a.model.parameters())
        pb = dict(b.model.parameters())
        for k in pa:
            np.testing.assert_array_equal(pa[k], pb[k])

    def test_different_seed_differs(self):
        scene = tiny_scene()
        data = scene.dataset()
        a = tr.train(tiny_config(seed=0), data)
        b = tr.train(tiny_config(seed=1), data)
        assert a.metrics != b.metrics

    def test_growth_preserves_lower_coefficients_bitwise(self):
        scene = tiny_scene()
        data = scene.dataset()
        cfg = tiny_config(total_steps=12, c2f_schedule=((6, 1),))
        snapshots = {}
        orig = tr._grow_model

        def spy(model, depth):
            snapshots["before"] = {k: v.copy()
                                   for k, v in model.parameters()}
            out = orig(model, depth)
            snapshots["after"] = {k: v.copy() for k, v in out.parameters()}
            return out

        tr._grow_model = spy
        try:
            tr.train(cfg, data)
        finally:
            tr._grow_model = orig
        before = snapshots["before"]
        after = snapshots["after"]
        for k, v in before.items():
            np.testing.assert_array_equal(after[k], v)
        new_keys = set(after) - set(before)
        assert new_keys == {f"{p}.level0.{b}" for p in ("xy", "xz", "yz")
                            for b in ("lh", "hl", "hh")}
        assert all(not after[k].any() for k in new_keys)

    def test_nan_gradient_aborts_with_checkpoint(self, tmp_path,
                                                 monkeypatch):
        scene = tiny_scene()

        def explode(params, grads, state, lr):
            raise FloatingPointError("non-finite gradient for 'xy.ll'")

        monkeypatch.setattr(optim, "adam_step", explode)
        with pytest.raises(FloatingPointError, match="xy.ll"):
            tr.train(tiny_config(total_steps=5), scene.dataset(),
                     out_dir=tmp_path)
        assert (tmp_path / "abort.ckpt").exists()
        _, extra = ck.load_checkpoint(tmp_path / "abort.ckpt")
        assert extra["status"] == "aborted"

    def test_empty_dataset_rejected(self):
        data = ds.Dataset(images={"train": []}, cameras={"train": []},
                          bbox=BBOX)
        with pytest.raises(ValueError, match="training views"):
            tr.train(tiny_config(), data)


class TestEndToEndGradients:
    def test_full_chain_matches_finite_differences(self):
        # photometric loss only (no L1 term), deterministic jitter per call
        scene = ds.make_synthetic(resolution=8, n_train=2, n_val=0,
                                  n_test=0, seed=5, master_scale=2)
        data = scene.dataset()
        cfg = tiny_config(reg_weight=0.0, rays_per_batch=32,
                          samples_per_ray=6)
        rng = np.random.default_rng(6)
        model = tp.init_model(cfg.n_ll, cfg.levels, cfg.channels,
                              cfg.filter, data.bbox, rng)
        from waveplane.field import init_mlp
        model.mlp = init_mlp(model.feature_width, cfg.mlp_width,
                             cfg.mlp_depth_density, cfg.mlp_depth_color,
                             rng)
        for name in tp.PLANE_NAMES:
            pyr = model.planes[name]
            pyr.ll[:] = rng.uniform(-0.5, 0.5, pyr.ll.shape) \
                .astype(np.float32)
            for bands in pyr.levels:
                bands.hh[:] = rng.uniform(-0.2, 0.2, bands.hh.shape) \
                    .astype(np.float32)
        model.invalidate_cache()
        bank = tr._RayBank(data)
        origins, dirs, targets = bank.batch(np.random.default_rng(7), 32)

        def loss():
            model.invalidate_cache()
            report, _ = tr._forward_backward(
                model, origins, dirs, targets, cfg,
                np.random.default_rng(8))
            return report.total

        model.invalidate_cache()
        _, grads = tr._forward_backward(model, origins, dirs, targets, cfg,
                                        np.random.default_rng(8))

        import oracles
        probe_rng = np.random.default_rng(9)
        params = dict(model.parameters())
        checked = 0
        for name in ["xy.ll", "xz.ll", "yz.ll", "xy.level0.hh",
                     "mlp.density.0", "mlp.color.1"]:
            arr = params[name]
            g = grads[name]
            live = np.argwhere(np.abs(g) > 1e-6)
            if len(live) == 0:
                continue
            for _ in range(4):
                idx = tuple(live[probe_rng.integers(0, len(live))])
                num = oracles.central_diff(loss, arr, idx)
                assert oracles.rel_err(g[idx], num) < 2e-3, (name, idx)
                checked += 1
        assert checked >= 12
