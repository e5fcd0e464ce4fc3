"""Hot numeric kernels with a numba fast path and a pure-numpy fallback.

The active implementation is chosen once at import time from the
``RETSYN_BACKEND`` environment variable: ``numba`` (default when numba is
importable), ``numpy``, or ``auto``. Both implementations are importable
directly for the benchmark suite and for equivalence tests.
"""
from __future__ import annotations

import os

import numpy as np

# Interleaving small BLAS calls with jitted kernels oversubscribes badly when
# both pools spin (4x slowdown on a 2-core box); pin both to one thread unless
# the user overrides via the usual environment variables.
if "OPENBLAS_NUM_THREADS" not in os.environ and "OMP_NUM_THREADS" not in os.environ:
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(1, "blas")
    except ImportError:
        pass

try:
    from numba import njit, prange

    if "NUMBA_NUM_THREADS" not in os.environ:
        import numba

        numba.set_num_threads(1)

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dep, but stay runnable
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap if not (args and callable(args[0])) else args[0]

    prange = range


def _conv_out(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


# ---------------------------------------------------------------------------
# pure numpy implementations
# ---------------------------------------------------------------------------


def im2col_numpy(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    """Gather k*k patches of (B,C,H,W) into rows (B*OH*OW, C*k*k)."""
    b, c, h, w = x.shape
    oh, ow = _conv_out(h, k, stride, pad), _conv_out(w, k, stride, pad)
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (B,C,OH,OW,k,k)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b * oh * ow, c * k * k)
    return np.ascontiguousarray(cols)


def col2im_numpy(cols: np.ndarray, shape, k: int, stride: int, pad: int) -> np.ndarray:
    """Adjoint of im2col: scatter-add patch rows back onto (B,C,H,W)."""
    b, c, h, w = shape
    oh, ow = _conv_out(h, k, stride, pad), _conv_out(w, k, stride, pad)
    buf = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    patches = cols.reshape(b, oh, ow, c, k, k).transpose(0, 3, 1, 2, 4, 5)
    for i in range(k):
        for j in range(k):
            buf[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += patches[
                :, :, :, :, i, j
            ]
    if pad:
        buf = buf[:, :, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(buf)


def blur1d_reflect_numpy(x: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    """Correlate along one axis with reflective ("abcd -> cb|abcd|cb") padding."""
    r = len(kernel) // 2
    x = np.moveaxis(x, axis, -1)
    n = x.shape[-1]
    idx = np.arange(-r, n + r)
    # fold about the array edges (edge values participate once per side),
    # which keeps the total mass of a symmetric kernel exactly
    while idx.min() < 0 or idx.max() >= n:
        idx = np.where(idx < 0, -idx - 1, idx)
        idx = np.where(idx >= n, 2 * n - 1 - idx, idx)
    padded = x[..., idx]
    out = np.zeros_like(x)
    for t in range(len(kernel)):
        out += kernel[t] * padded[..., t : t + n]
    return np.moveaxis(out, -1, axis)


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------


@njit(cache=True, parallel=True)
def _im2col_k3(x, cols):  # pragma: no cover - jitted
    """3x3 / stride 1 / pad 1 fast path; writes run sequentially per row."""
    b, c, h, w = x.shape
    for bi in prange(b):
        for oy in range(h):
            rowbase = (bi * h + oy) * w
            for ci in range(c):
                base = ci * 9
                for i in range(3):
                    iy = oy + i - 1
                    o = base + i * 3
                    if 0 <= iy < h:
                        cols[rowbase, o] = 0.0
                        cols[rowbase, o + 1] = x[bi, ci, iy, 0]
                        cols[rowbase, o + 2] = x[bi, ci, iy, 1]
                        for ox in range(1, w - 1):
                            row = rowbase + ox
                            cols[row, o] = x[bi, ci, iy, ox - 1]
                            cols[row, o + 1] = x[bi, ci, iy, ox]
                            cols[row, o + 2] = x[bi, ci, iy, ox + 1]
                        row = rowbase + w - 1
                        cols[row, o] = x[bi, ci, iy, w - 2]
                        cols[row, o + 1] = x[bi, ci, iy, w - 1]
                        cols[row, o + 2] = 0.0
                    else:
                        for ox in range(w):
                            row = rowbase + ox
                            cols[row, o] = 0.0
                            cols[row, o + 1] = 0.0
                            cols[row, o + 2] = 0.0


@njit(cache=True, parallel=True)
def _col2im_k3(cols, buf, h, w):  # pragma: no cover - jitted
    """Adjoint of the 3x3 fast path; accumulates into a padded buffer."""
    bn, c = buf.shape[0], buf.shape[1]
    for bi in prange(bn):
        for oy in range(h):
            rowbase = (bi * h + oy) * w
            for ci in range(c):
                base = ci * 9
                for i in range(3):
                    o = base + i * 3
                    iy = oy + i
                    for ox in range(w):
                        row = rowbase + ox
                        buf[bi, ci, iy, ox] += cols[row, o]
                        buf[bi, ci, iy, ox + 1] += cols[row, o + 1]
                        buf[bi, ci, iy, ox + 2] += cols[row, o + 2]


@njit(cache=True, parallel=True)
def _im2col_nb(x, cols, k, stride, pad):  # pragma: no cover - jitted
    b, c, h, w = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    for bi in prange(b):
        for oy in range(oh):
            for ox in range(ow):
                row = bi * oh * ow + oy * ow + ox
                for ci in range(c):
                    base = ci * k * k
                    for i in range(k):
                        iy = oy * stride + i - pad
                        for j in range(k):
                            ix = ox * stride + j - pad
                            if 0 <= iy < h and 0 <= ix < w:
                                cols[row, base + i * k + j] = x[bi, ci, iy, ix]
                            else:
                                cols[row, base + i * k + j] = 0.0


@njit(cache=True, parallel=True)
def _col2im_nb(cols, out, k, stride, pad):  # pragma: no cover - jitted
    b, c, h, w = out.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    for bi in prange(b):
        for oy in range(oh):
            for ox in range(ow):
                row = bi * oh * ow + oy * ow + ox
                for ci in range(c):
                    base = ci * k * k
                    for i in range(k):
                        iy = oy * stride + i - pad
                        for j in range(k):
                            ix = ox * stride + j - pad
                            if 0 <= iy < h and 0 <= ix < w:
                                out[bi, ci, iy, ix] += cols[row, base + i * k + j]


@njit(cache=True)
def _blur1d_nb(x2d, kernel, out2d):  # pragma: no cover - jitted
    rows, n = x2d.shape
    r = kernel.shape[0] // 2
    for i in range(rows):
        for j in range(n):
            acc = 0.0
            for t in range(kernel.shape[0]):
                p = j + t - r
                while p < 0 or p >= n:
                    if p < 0:
                        p = -p - 1
                    if p >= n:
                        p = 2 * n - 1 - p
                acc += kernel[t] * x2d[i, p]
            out2d[i, j] = acc


def im2col_numba(x: np.ndarray, k: int, stride: int, pad: int) -> np.ndarray:
    b, c, h, w = x.shape
    oh, ow = _conv_out(h, k, stride, pad), _conv_out(w, k, stride, pad)
    cols = np.empty((b * oh * ow, c * k * k), dtype=x.dtype)
    x = np.ascontiguousarray(x)
    if k == 3 and stride == 1 and pad == 1:
        _im2col_k3(x, cols)
    else:
        _im2col_nb(x, cols, k, stride, pad)
    return cols


def col2im_numba(cols: np.ndarray, shape, k: int, stride: int, pad: int) -> np.ndarray:
    cols = np.ascontiguousarray(cols)
    if k == 3 and stride == 1 and pad == 1:
        b, c, h, w = shape
        buf = np.zeros((b, c, h + 2, w + 2), dtype=cols.dtype)
        _col2im_k3(cols, buf, h, w)
        return np.ascontiguousarray(buf[:, :, 1 : 1 + h, 1 : 1 + w])
    out = np.zeros(shape, dtype=cols.dtype)
    _col2im_nb(cols, out, k, stride, pad)
    return out


def blur1d_reflect_numba(x: np.ndarray, kernel: np.ndarray, axis: int) -> np.ndarray:
    x = np.moveaxis(x, axis, -1)
    flat = np.ascontiguousarray(x.reshape(-1, x.shape[-1]))
    out = np.empty_like(flat)
    _blur1d_nb(flat, kernel.astype(flat.dtype), out)
    return np.moveaxis(out.reshape(x.shape), -1, axis)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

BACKEND = os.environ.get("RETSYN_BACKEND", "auto").lower()
if BACKEND not in ("auto", "numba", "numpy"):
    raise ValueError(f"RETSYN_BACKEND must be auto|numba|numpy, got {BACKEND!r}")
if BACKEND == "auto":
    BACKEND = "numba" if _HAVE_NUMBA else "numpy"
if BACKEND == "numba" and not _HAVE_NUMBA:
    raise ImportError("RETSYN_BACKEND=numba but numba is not importable")

if BACKEND == "numba":
    im2col, col2im, blur1d_reflect = im2col_numba, col2im_numba, blur1d_reflect_numba
else:
    im2col, col2im, blur1d_reflect = im2col_numpy, col2im_numpy, blur1d_reflect_numpy


def gaussian_kernel1d(rho: float, dtype=np.float64) -> np.ndarray:
    """Normalized Gaussian taps truncated at 3*rho (always odd length >= 1)."""
    if rho <= 0:
        raise ValueError("rho must be > 0")
    r = max(1, int(np.ceil(3.0 * rho)))
    t = np.arange(-r, r + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / rho) ** 2)
    k /= k.sum()
    return k.astype(dtype)


def gaussian_blur(img: np.ndarray, rho: float) -> np.ndarray:
    """Separable Gaussian blur over the trailing two axes, reflective padding."""
    k = gaussian_kernel1d(rho, dtype=img.dtype if img.dtype.kind == "f" else np.float64)
    x = img.astype(k.dtype, copy=False)
    x = blur1d_reflect(x, k, axis=-1)
    x = blur1d_reflect(x, k, axis=-2)
    return x
