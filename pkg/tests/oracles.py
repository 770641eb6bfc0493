"""Slow, obviously-correct reference implementations used as test oracles.

None of these share code with the package; they are written per pixel so a
reader can check them against the definitions by eye.
"""
import math

import numpy as np


def conv_loop(x, w, b):
    """Same-size zero-padded cross-correlation; even kernels pad more on top/left."""
    c_in, h, wd = x.shape
    c_out, _, k, _ = w.shape
    top = math.ceil((k - 1) / 2)
    out = np.zeros((c_out, h, wd), dtype=np.result_type(x, w))
    for o in range(c_out):
        for i in range(h):
            for j in range(wd):
                s = b[o]
                for ci in range(c_in):
                    for u in range(k):
                        for v in range(k):
                            y, z = i + u - top, j + v - top
                            if 0 <= y < h and 0 <= z < wd:
                                s += x[ci, y, z] * w[o, ci, u, v]
                out[o, i, j] = s
    return out


def keys(t, a=-0.5):
    t = abs(t)
    if t <= 1:
        return (a + 2) * t**3 - (a + 3) * t**2 + 1
    if t < 2:
        return a * t**3 - 5 * a * t**2 + 8 * a * t - 4 * a
    return 0.0


def bicubic_scalar(img, out_h, out_w, clamp=True):
    """Per-output-pixel 4x4 kernel sum with centre-aligned sampling and edge replication."""
    h, w = img.shape
    out = np.zeros((out_h, out_w))
    for i in range(out_h):
        sy = (i + 0.5) * h / out_h - 0.5
        for j in range(out_w):
            sx = (j + 0.5) * w / out_w - 0.5
            acc = 0.0
            for yy in range(math.floor(sy) - 1, math.floor(sy) + 3):
                for xx in range(math.floor(sx) - 1, math.floor(sx) + 3):
                    py = min(max(yy, 0), h - 1)
                    px = min(max(xx, 0), w - 1)
                    acc += img[py, px] * keys(sy - yy) * keys(sx - xx)
            out[i, j] = acc
    return np.clip(out, 0, 255) if clamp else out


def blur_dense(img, std, ksize):
    """Direct 2-D Gaussian convolution with edge replication, no clamping."""
    h, w = img.shape
    r = ksize // 2
    ker = np.zeros((ksize, ksize))
    for u in range(ksize):
        for v in range(ksize):
            ker[u, v] = math.exp(-((u - r) ** 2 + (v - r) ** 2) / (2 * std * std))
    ker /= ker.sum()
    out = np.zeros((h, w))
    for i in range(h):
        for j in range(w):
            acc = 0.0
            for u in range(ksize):
                for v in range(ksize):
                    py = min(max(i + u - r, 0), h - 1)
                    px = min(max(j + v - r, 0), w - 1)
                    acc += img[py, px] * ker[u, v]
            out[i, j] = acc
    return out


def central_difference(f, x, eps=1e-5):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + eps
        fp = f()
        x[idx] = orig - eps
        fm = f()
        x[idx] = orig
        g[idx] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b):
    scale = max(np.abs(a).max(), np.abs(b).max())
    return 0.0 if scale == 0 else float(np.abs(a - b).max() / scale)
