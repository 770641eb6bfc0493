"""Forward/backward kernels for the fixed layer set used by the recognition models.

All kernels operate on batches. Feature maps are ``(N, C, H, W)`` arrays, fully
connected activations are ``(N, F)``. A single sample is just ``N == 1``; the
``conv2d_*`` helpers also accept an unbatched ``(C, H, W)`` input.

Convolution is cross-correlation with stride 1 and "same" zero padding. For even
kernel sizes the extra row/column of padding goes on the top/left side.
"""
from __future__ import annotations

from typing import Callable, Mapping

import numpy as np


def same_padding(c: int) -> tuple[int, int]:
    """(before, after) zero padding that keeps the spatial size for kernel ``c``."""
    lo = c // 2  # ceil((c - 1) / 2)
    return lo, c - 1 - lo


def _check_conv_shapes(x: np.ndarray, w: np.ndarray, b: np.ndarray | None) -> None:
    if x.ndim != 4:
        raise ValueError(f"conv input must be (N, C, H, W), got shape {x.shape}")
    if w.ndim != 4 or w.shape[2] != w.shape[3]:
        raise ValueError(f"conv weights must be (C_out, C_in, c, c), got shape {w.shape}")
    if x.shape[1] != w.shape[1]:
        raise ValueError(
            f"input channel dimension {x.shape[1]} does not match weight C_in {w.shape[1]}"
        )
    if b is not None and b.shape != (w.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match C_out {w.shape[0]}")


# Scratch budget per batch chunk; keeps the shifted-plane buffers cache resident.
_CHUNK_BYTES = 1 << 20


def _chunks(n: int, per_item: int) -> tuple[range, int]:
    step = max(1, min(n, _CHUNK_BYTES // max(per_item, 1)))
    return range(0, n, step), step


def _pad_cnhw(x: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """(N, C, H, W) -> zero-padded (C, N, H+lo+hi, W+lo+hi)."""
    n, c, h, w = x.shape
    xp = np.zeros((c, n, h + lo + hi, w + lo + hi), dtype=x.dtype)
    xp[:, :, lo:lo + h, lo:lo + w] = x.transpose(1, 0, 2, 3)
    return xp


def _planes(xp: np.ndarray, c: int, h: int, w: int) -> np.ndarray:
    """Shifted copies of a padded (C, m, Hp, Wp) block -> (C*c*c, m*h*w)."""
    ch, m = xp.shape[:2]
    out = np.empty((ch, c, c, m, h, w), dtype=xp.dtype)
    for u in range(c):
        for v in range(c):
            out[:, u, v] = xp[:, :, u:u + h, v:v + w]
    return out.reshape(ch * c * c, m * h * w)


def _correlate(x: np.ndarray, w: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Zero-padded stride-1 cross-correlation without bias, (N, C, H, W) -> (N, C_out, H, W).

    Two equivalent evaluation orders are used, picking whichever copies fewer
    shifted planes: im2col on the input (C*c*c planes), or one product on the
    padded input followed by summing c*c shifted output slices (C_out*c*c planes).
    """
    n, ci, h, wd = x.shape
    co, _, c, _ = w.shape
    xp = _pad_cnhw(x, lo, hi)
    hp, wp = xp.shape[2:]
    out = np.empty((co, n, h, wd), dtype=np.result_type(x, w))
    if c > 1 and 2 * co <= ci:
        wm = np.ascontiguousarray(w.transpose(0, 2, 3, 1)).reshape(co * c * c, ci)
        starts, step = _chunks(n, co * c * c * hp * wp * x.itemsize)
        for s in starts:
            m = min(step, n - s)
            y = (wm @ xp[:, s:s + m].reshape(ci, -1)).reshape(co, c, c, m, hp, wp)
            o = out[:, s:s + m]
            o[...] = y[:, 0, 0, :, :h, :wd]
            for u in range(c):
                for v in range(c):
                    if u or v:
                        o += y[:, u, v, :, u:u + h, v:v + wd]
    else:
        wm = w.reshape(co, ci * c * c)
        starts, step = _chunks(n, ci * c * c * h * wd * x.itemsize)
        for s in starts:
            m = min(step, n - s)
            cols = _planes(xp[:, s:s + m], c, h, wd)
            out[:, s:s + m] = (wm @ cols).reshape(co, m, h, wd)
    return np.ascontiguousarray(out.transpose(1, 0, 2, 3))


def _weight_grad(x: np.ndarray, g: np.ndarray, c: int, lo: int, hi: int) -> np.ndarray:
    """sum over n, h, w of g[n, o, h, w] * xpad[n, i, h+u, w+v] -> (C_out, C_in, c, c)."""
    n, ci, h, wd = x.shape
    co = g.shape[1]
    xp = _pad_cnhw(x, lo, hi)
    gc = g.transpose(1, 0, 2, 3)
    if c > 1 and 2 * co <= ci:
        # shift the (smaller) gradient instead of the input
        hp, wp = xp.shape[2:]
        acc = np.zeros((co, c, c, ci), dtype=np.result_type(x, g))
        starts, step = _chunks(n, co * c * c * hp * wp * x.itemsize)
        for s in starts:
            m = min(step, n - s)
            gs = np.zeros((co, c, c, m, hp, wp), dtype=g.dtype)
            for u in range(c):
                for v in range(c):
                    gs[:, u, v, :, u:u + h, v:v + wd] = gc[:, s:s + m]
            acc += (gs.reshape(co * c * c, -1) @ xp[:, s:s + m].reshape(ci, -1).T).reshape(acc.shape)
        return np.ascontiguousarray(acc.transpose(0, 3, 1, 2))
    acc = np.zeros((co, ci * c * c), dtype=np.result_type(x, g))
    starts, step = _chunks(n, ci * c * c * h * wd * x.itemsize)
    for s in starts:
        m = min(step, n - s)
        cols = _planes(xp[:, s:s + m], c, h, wd)
        acc += gc[:, s:s + m].reshape(co, -1) @ cols.T
    return acc.reshape(co, ci, c, c)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    unbatched = x.ndim == 3
    if unbatched:
        x = x[None]
    _check_conv_shapes(x, w, b)
    lo, hi = same_padding(w.shape[2])
    out = _correlate(x, w, lo, hi)
    out += b[None, :, None, None]
    return out[0] if unbatched else out


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, grad_out: np.ndarray, need_input_grad: bool = True
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Gradients of :func:`conv2d_forward` w.r.t. input, weights and bias.

    ``need_input_grad=False`` skips the input gradient (first layer of a network)
    and returns ``None`` in its place.
    """
    unbatched = x.ndim == 3
    if unbatched:
        x, grad_out = x[None], grad_out[None]
    _check_conv_shapes(x, w, None)
    n, _, h, wd = x.shape
    co, _, c, _ = w.shape
    if grad_out.shape != (n, co, h, wd):
        raise ValueError(f"grad_out shape {grad_out.shape} != expected {(n, co, h, wd)}")
    lo, hi = same_padding(c)
    grad_w = _weight_grad(x, grad_out, c, lo, hi)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_x = None
    if need_input_grad:
        # full correlation with the flipped kernel; padding sides swap
        w_flip = np.ascontiguousarray(w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        grad_x = _correlate(grad_out, w_flip, hi, lo)
        if unbatched:
            grad_x = grad_x[0]
    return grad_x, grad_w, grad_b


def fc_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if x.shape[-1] != w.shape[1]:
        raise ValueError(f"fc input width {x.shape[-1]} does not match weight width {w.shape[1]}")
    if b.shape != (w.shape[0],):
        raise ValueError(f"bias shape {b.shape} does not match out units {w.shape[0]}")
    return x @ w.T + b


def fc_backward(
    x: np.ndarray, w: np.ndarray, grad_out: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if grad_out.shape[-1] != w.shape[0]:
        raise ValueError(f"grad_out width {grad_out.shape[-1]} != out units {w.shape[0]}")
    grad_x = grad_out @ w
    if x.ndim == 1:
        return grad_x, np.outer(grad_out, x), grad_out.copy()
    return grad_x, grad_out.T @ x, grad_out.sum(axis=0)


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(x > 0, grad_out, 0).astype(grad_out.dtype, copy=False)


def maxpool2x2_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2x2/stride-2 max pooling. Returns pooled map and in-window argmax (0..3)."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"max pooling needs even spatial dims, got {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, h // 2, w // 2, 4
    )
    idx = win.argmax(axis=-1)
    out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2x2_backward(indices: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    n, c, h2, w2 = grad_out.shape
    g = np.zeros((n, c, h2, w2, 4), dtype=grad_out.dtype)
    np.put_along_axis(g, indices[..., None], grad_out[..., None], axis=-1)
    return g.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)


def dropout_forward(
    x: np.ndarray, rate: float, mode: str, rng: np.random.Generator | None
) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout. Survivors are scaled by 1/(1-rate) in train mode; eval is identity."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x, None
    if rng is None:
        raise ValueError("train-mode dropout needs an rng")
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return x * mask, mask


def dropout_backward(mask: np.ndarray | None, grad_out: np.ndarray) -> np.ndarray:
    return grad_out if mask is None else grad_out * mask


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits.

    ``logits`` may be a single vector ``(C,)`` with an integer label, or a batch
    ``(N, C)`` with an integer array of labels.
    """
    single = logits.ndim == 1
    lg = logits[None] if single else logits
    lab = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, c = lg.shape
    if lab.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {lab.shape}")
    if lab.min() < 0 or lab.max() >= c:
        raise ValueError(f"labels must lie in [0, {c})")
    z = lg - lg.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(n), lab]))
    grad = softmax(lg)
    grad[np.arange(n), lab] -= 1
    grad /= n
    return loss, (grad[0] if single else grad)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs target {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), (2.0 / diff.size) * diff


def numerical_gradient(f: Callable[[], float], x: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of the scalar ``f()`` w.r.t. ``x`` (perturbed in place)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat, gflat = x.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max abs difference scaled by the larger of the two gradients' max magnitudes."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0))
    if scale == 0.0:
        return 0.0
    return float(np.abs(analytic - numeric).max() / scale)


def grad_check(
    f: Callable[[], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    eps: float = 1e-5,
    tolerance: float = 1e-6,
) -> dict:
    """Compare analytic gradients against central differences at 64-bit.

    ``f`` must recompute the scalar objective from the current contents of the
    arrays in ``params``; each array is perturbed in place and restored.

    Returns a report ``{"errors": {name: rel_err}, "max_error": float, "passed": bool}``.
    """
    errors = {}
    for name, arr in params.items():
        if arr.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 arrays, {name} is {arr.dtype}")
        errors[name] = relative_error(analytic[name], numerical_gradient(f, arr, eps))
    worst = max(errors.values(), default=0.0)
    return {"errors": errors, "max_error": worst, "passed": worst < tolerance}
