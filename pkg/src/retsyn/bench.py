"""Benchmark the numba kernels against their pure-numpy fallbacks.

Run via `retsyn bench` or `python -m retsyn.bench`. The active backend for
the library itself is chosen by RETSYN_BACKEND (auto|numba|numpy).
"""
from __future__ import annotations

import time

import numpy as np

from . import backend

CASES = [
    # (B, C, H, k, stride, pad) conv geometries the synthesis/discriminator use
    (32, 48, 4, 3, 1, 1),
    (32, 32, 8, 3, 1, 1),
    (32, 24, 16, 3, 1, 1),
    (16, 16, 32, 3, 1, 1),
]


def _time(fn, *args, repeats=30) -> float:
    fn(*args)  # warm (and JIT-compile)
    times = []
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        times.append(time.perf_counter() - t0)
    times.sort()
    return times[len(times) // 2] * 1e3


def run_benchmarks(repeats: int = 30) -> list[dict]:
    print(f"active backend: {backend.BACKEND}")
    rows = []
    for b, c, h, k, s, p in CASES:
        x = np.random.default_rng(0).standard_normal((b, c, h, h)).astype(np.float32)
        cols = backend.im2col_numpy(x, k, s, p)
        g = np.random.default_rng(1).standard_normal(cols.shape).astype(np.float32)
        row = {
            "case": f"B{b} C{c} {h}x{h} k{k}",
            "im2col_numba_ms": _time(backend.im2col_numba, x, k, s, p, repeats=repeats)
            if backend._HAVE_NUMBA else float("nan"),
            "im2col_numpy_ms": _time(backend.im2col_numpy, x, k, s, p, repeats=repeats),
            "col2im_numba_ms": _time(backend.col2im_numba, g, x.shape, k, s, p, repeats=repeats)
            if backend._HAVE_NUMBA else float("nan"),
            "col2im_numpy_ms": _time(backend.col2im_numpy, g, x.shape, k, s, p, repeats=repeats),
        }
        rows.append(row)
    img = np.random.default_rng(2).standard_normal((256, 256)).astype(np.float64)
    kern = backend.gaussian_kernel1d(256 / 30.0)
    rows.append(
        {
            "case": "gaussian blur 256x256 rho=8.5",
            "im2col_numba_ms": _time(backend.blur1d_reflect_numba, img, kern, -1, repeats=repeats)
            if backend._HAVE_NUMBA else float("nan"),
            "im2col_numpy_ms": _time(backend.blur1d_reflect_numpy, img, kern, -1, repeats=repeats),
            "col2im_numba_ms": float("nan"),
            "col2im_numpy_ms": float("nan"),
        }
    )
    header = f"{'case':28s} {'gather nb':>10s} {'gather np':>10s} {'scatter nb':>11s} {'scatter np':>11s}"
    print(header)
    print("-" * len(header))
    for r in rows:
        print(
            f"{r['case']:28s} {r['im2col_numba_ms']:9.3f}ms {r['im2col_numpy_ms']:9.3f}ms "
            f"{r['col2im_numba_ms']:10.3f}ms {r['col2im_numpy_ms']:10.3f}ms"
        )
    return rows


if __name__ == "__main__":
    run_benchmarks()
