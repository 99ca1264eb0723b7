"""Benchmark the two kernel lanes against each other.

Runs every hot kernel on realistic working-set sizes in both the numpy
and the numba implementation and prints a table of per-call times plus
speedups, along with an end-to-end training-step comparison. The active
lane for library users is chosen at import time (numba when available,
``WAVEPLANE_FORCE_NUMPY=1`` overrides); this script imports both lanes
directly.

Usage: python3 benchmarks/bench_kernels.py [--repeat N] [--quick]
"""
import argparse
import time

import numpy as np

from waveplane._kernels import HAVE_NUMBA, numpy_lane


def timed(fn, args, repeat):
    fn(*args)  # warm-up (also triggers JIT compilation)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def make_cases(quick):
    rng = np.random.default_rng(0)
    side = 256 if quick else 1024
    rays = 4096 if quick else 32768
    samples = 32
    filt = rng.standard_normal(10)
    k = side * 8  # row width when filtering one plane axis of 8 channels
    xe = np.ascontiguousarray(rng.standard_normal((side + 16, k)))
    ce = np.ascontiguousarray(rng.standard_normal((side // 2 + 8, k)))
    g = np.ascontiguousarray(rng.standard_normal((side, k)))
    plane = np.ascontiguousarray(rng.standard_normal((side, side, 8)))
    fx = rng.uniform(-0.5, side - 0.5, rays * samples)
    fy = rng.uniform(-0.5, side - 0.5, rays * samples)
    gfeat = np.ascontiguousarray(
        rng.standard_normal((rays * samples, 8)))
    sigma = rng.exponential(1.0, (rays, samples))
    rgb = rng.uniform(0, 1, (rays, samples, 3))
    delta = np.full((rays, 1), 4.0 / samples)
    bg = np.array([1.0, 1.0, 1.0])
    weights, t_res = None, None
    return [
        ("corr_down", (xe, filt, 1, side // 2)),
        ("up_conv", (ce, filt, 4, side)),
        ("up_conv_adj", (g, filt, 4, ce.shape[0])),
        ("bilinear_gather", (plane, fx, fy)),
        ("bilinear_scatter", (gfeat, fx, fy, side, side)),
        ("composite_fwd", (sigma, rgb, delta, bg)),
        ("composite_bwd", None),  # filled below, needs fwd outputs
    ], (sigma, rgb, delta, bg)


def bench_kernels(repeat, quick):
    from waveplane._kernels import numba_lane

    cases, comp_args = make_cases(quick)
    sigma, rgb, delta, bg = comp_args
    color, weights, t_res = numpy_lane.composite_fwd(sigma, rgb, delta, bg)
    gcolor = np.ones_like(color)
    rows = []
    for name, args in cases:
        if name == "composite_bwd":
            args = (sigma, rgb, delta, bg, weights, t_res, gcolor)
        t_np = timed(getattr(numpy_lane, name), args, repeat)
        t_nb = timed(getattr(numba_lane, name), args, repeat)
        rows.append((name, t_np, t_nb))
    print(f"{'kernel':<18}{'numpy (ms)':>12}{'numba (ms)':>12}"
          f"{'speedup':>9}")
    for name, t_np, t_nb in rows:
        print(f"{name:<18}{t_np * 1e3:>12.3f}{t_nb * 1e3:>12.3f}"
              f"{t_np / t_nb:>8.1f}x")
    return rows


def bench_training_step(repeat):
    """One optimizer step at micro-preset scale under each lane.

    The lane is fixed at import time, so the other lane's figure comes
    from re-running this script with WAVEPLANE_FORCE_NUMPY=1.
    """
    from waveplane import kernel_lane
    from waveplane.io_cli.datasets import make_synthetic
    from waveplane.trainer import config_from_preset, train

    scene = make_synthetic(resolution=64, n_train=4, n_val=1, n_test=1)
    steps = 30
    cfg = config_from_preset("micro", total_steps=steps,
                             c2f_schedule=((0, 3),), val_every=steps)
    t0 = time.perf_counter()
    train(cfg, scene.dataset())
    per_step = (time.perf_counter() - t0) / steps
    print(f"\nfull training step ({kernel_lane()} lane): "
          f"{per_step * 1e3:.1f} ms/step at micro-preset scale")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=5,
                    help="timing repetitions per kernel (best-of)")
    ap.add_argument("--quick", action="store_true",
                    help="smaller working sets")
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not importable; kernel comparison "
                         "needs both lanes")
    bench_kernels(args.repeat, args.quick)
    bench_training_step(args.repeat)


if __name__ == "__main__":
    main()
