"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel: best-of-N wall time for each backend, the
speedup, and the max absolute difference between the two outputs.
"""

import argparse
import time

import numpy as np

from cascade_edit import _kernels_py as py

try:
    from cascade_edit import _kernels as cy
except ImportError:  # extension not built
    cy = None


def _best(fn, repeat):
    best = float("inf")
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def cases(rng):
    H = W = 64
    ell = np.column_stack([
        rng.uniform(10, 54, 40), rng.uniform(10, 54, 40), rng.uniform(2, 12, 40), rng.uniform(1, 8, 40),
        rng.uniform(0, np.pi, 40), rng.random(40), rng.random(40), rng.random(40),
    ])
    pts = rng.uniform(2, 62, (32, 2))
    ch = rng.integers(0, 3, 32).astype(np.int64)
    src = rng.random((H, W, 3))
    flow = rng.normal(0, 2, (H, W, 2))
    img = rng.random((H, W))

    def render(mod):
        out = np.zeros((H, W, 3))
        mod.render_ellipses(out, ell)
        return out

    def splat(mod):
        out = np.zeros((H, W, 3))
        mod.splat_gaussians(out, pts, ch, 1.0, 3.0)
        return out

    return {
        "render_ellipses(40)": render,
        "splat_gaussians(32)": splat,
        "warp_bilinear(64x64x3)": lambda mod: mod.warp_bilinear(src, flow),
        "box_mean(64x64, 8)": lambda mod: mod.box_mean(img, 8),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':26s}{'python ms':>12s}{'cython ms':>12s}{'speedup':>10s}{'max diff':>12s}")
    for name, fn in cases(rng).items():
        tp, op = _best(lambda: fn(py), args.repeat)
        if cy is None:
            print(f"{name:26s}{tp * 1e3:12.3f}{'n/a':>12s}{'n/a':>10s}{'n/a':>12s}")
            continue
        tc, oc = _best(lambda: fn(cy), args.repeat)
        print(f"{name:26s}{tp * 1e3:12.3f}{tc * 1e3:12.3f}{tp / tc:10.1f}{np.abs(op - oc).max():12.2e}")


if __name__ == "__main__":
    main()
