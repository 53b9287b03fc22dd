"""Dense float32 tensor primitives with bitwise-deterministic forwards.

Tensors are plain C-contiguous float32 ndarrays. All forward reductions run
in a pinned ascending order (see kernels module), so identical inputs give
identical bits on every run. Backward passes are hand-derived for the fixed
layer set; their gradients are checked against finite differences in the
test suite, not held to a bitwise contract.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError


def as_f32(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float32))


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """c[i,j] = sum_k a[i,k]*b[k,j], accumulated in ascending k order."""
    a = as_f32(a)
    b = as_f32(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner dims differ: {a.shape} x {b.shape}")
    return kernels.matmul_f32(a, b)


def matmul_backward(dc: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Gradients of c = a @ b: da = dc @ b^T, db = a^T @ dc."""
    dc = as_f32(dc)
    da = kernels.matmul_f32(dc, as_f32(b.T))
    db = kernels.matmul_f32(as_f32(a.T), dc)
    return da, db


def _conv_geometry(H, W, kh, kw, stride, pad):
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    if pad < 0:
        raise ShapeError(f"pad must be >= 0, got {pad}")
    if kh > H + 2 * pad or kw > W + 2 * pad:
        raise ShapeError(f"kernel {kh}x{kw} larger than padded input {H + 2 * pad}x{W + 2 * pad}")
    oh = (H + 2 * pad - kh) // stride + 1
    ow = (W + 2 * pad - kw) // stride + 1
    return oh, ow


def _pad_input(x, pad):
    if pad == 0:
        return x
    B, C, H, W = x.shape
    xp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=np.float32)
    xp[:, :, pad:pad + H, pad:pad + W] = x
    return xp


def conv2d(x: np.ndarray, w: np.ndarray, bias: np.ndarray, stride: int = 1, pad: int = 0) -> np.ndarray:
    """Direct cross-correlation (no kernel flip), zero padding.

    Each output element accumulates x*w products in ascending (cin, ky, kx)
    order starting from zero; the bias is added last as a single rounding.
    """
    x = as_f32(x)
    w = as_f32(w)
    bias = as_f32(bias)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d expects 4-D x and w, got {x.shape} and {w.shape}")
    B, Cin, H, W = x.shape
    Cout, Cin_w, kh, kw = w.shape
    if Cin != Cin_w:
        raise ShapeError(f"input channels {Cin} != weight channels {Cin_w}")
    if bias.shape != (Cout,):
        raise ShapeError(f"bias shape {bias.shape} != ({Cout},)")
    oh, ow = _conv_geometry(H, W, kh, kw, stride, pad)
    xp = _pad_input(x, pad)
    cols = kernels.im2col_f32(xp, kh, kw, stride, oh, ow)
    wf = np.ascontiguousarray(w.reshape(Cout, -1).T)
    out = kernels.matmul_f32(cols, wf)
    out += bias[None, :]
    return np.ascontiguousarray(out.reshape(B, oh, ow, Cout).transpose(0, 3, 1, 2))


def conv2d_backward(dy: np.ndarray, x: np.ndarray, w: np.ndarray, stride: int, pad: int):
    """Gradients of conv2d w.r.t. input, weight, and bias."""
    dy = as_f32(dy)
    B, Cin, H, W = x.shape
    Cout, _, kh, kw = w.shape
    oh, ow = dy.shape[2], dy.shape[3]
    xp = _pad_input(as_f32(x), pad)
    cols = kernels.im2col_f32(xp, kh, kw, stride, oh, ow)
    # dy as (B*oh*ow, Cout) rows matching im2col row order
    dyf = np.ascontiguousarray(dy.transpose(0, 2, 3, 1).reshape(-1, Cout))
    dwf = kernels.matmul_f32(np.ascontiguousarray(dyf.T), cols)
    dw = dwf.reshape(Cout, Cin, kh, kw)
    dbias = dyf.sum(axis=0)
    dcols = kernels.matmul_f32(dyf, np.ascontiguousarray(w.reshape(Cout, -1)))
    dxp = kernels.col2im_f32(dcols, B, Cin, H + 2 * pad, W + 2 * pad, kh, kw, stride, oh, ow)
    dx = dxp[:, :, pad:pad + H, pad:pad + W] if pad else dxp
    return np.ascontiguousarray(dx), dw, dbias


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, np.float32(0.0))


def relu_backward(dy: np.ndarray, x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, dy, np.float32(0.0))


def maxpool2d(x: np.ndarray, size: int):
    """Non-overlapping max pool; trailing rows/cols that don't fill a window
    are dropped. Returns (pooled, argmax) with ties to the first index."""
    x = as_f32(x)
    if x.ndim != 4:
        raise ShapeError(f"maxpool2d expects 4-D input, got {x.shape}")
    if size < 1 or x.shape[2] < size or x.shape[3] < size:
        raise ShapeError(f"pool size {size} invalid for input {x.shape}")
    return kernels.maxpool_f32(x, size)


def maxpool2d_backward(dy: np.ndarray, arg: np.ndarray, in_hw: tuple[int, int]) -> np.ndarray:
    return kernels.maxpool_backward_f32(as_f32(dy), arg, in_hw[0], in_hw[1])


def channel_affine(x: np.ndarray, scale: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Inference-form batch norm folded to a per-channel affine."""
    x = as_f32(x)
    C = x.shape[1]
    if scale.shape != (C,) or shift.shape != (C,):
        raise ShapeError(f"scale/shift must be ({C},), got {scale.shape}/{shift.shape}")
    sh = (1, C) + (1,) * (x.ndim - 2)
    return x * scale.reshape(sh).astype(np.float32) + shift.reshape(sh).astype(np.float32)


def channel_affine_backward(dy: np.ndarray, x: np.ndarray, scale: np.ndarray):
    C = x.shape[1]
    sh = (1, C) + (1,) * (x.ndim - 2)
    axes = tuple(i for i in range(x.ndim) if i != 1)
    dx = dy * scale.reshape(sh).astype(np.float32)
    dscale = (dy * x).sum(axis=axes)
    dshift = dy.sum(axis=axes)
    return dx, dscale, dshift


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-stabilized softmax; rows sum to 1 within 1e-6."""
    z = as_f32(logits)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy over the batch plus the softmax probabilities.

    Stabilized by subtracting the row max before exponentiation; the loss
    is accumulated in float64 so closed-form checks hold to ~1e-7.
    """
    logits = as_f32(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2:
        raise ShapeError(f"logits must be B x C, got {logits.shape}")
    B, C = logits.shape
    if labels.shape != (B,):
        raise ShapeError(f"labels shape {labels.shape} != ({B},)")
    if labels.size and (labels.min() < 0 or labels.max() >= C):
        raise IndexError(f"labels must lie in [0, {C})")
    probs = softmax(logits)
    picked = probs[np.arange(B), labels].astype(np.float64)
    loss = float(-np.log(np.maximum(picked, np.finfo(np.float64).tiny)).mean())
    return loss, probs


def softmax_cross_entropy_backward(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """d(mean CE)/dlogits = (probs - onehot) / B."""
    B = probs.shape[0]
    d = probs.copy()
    d[np.arange(B), np.asarray(labels, dtype=np.int64)] -= np.float32(1.0)
    return d / np.float32(B)


def topk(v: np.ndarray, k: int) -> list[tuple[int, float]]:
    """Top-k (index, value) pairs, value-descending, ties by ascending index."""
    v = np.asarray(v)
    if v.ndim != 1:
        raise ShapeError(f"topk expects a vector, got {v.shape}")
    if not 1 <= k <= v.shape[0]:
        raise ValueError(f"k={k} out of range for length {v.shape[0]}")
    # stable sort on descending value; stability supplies the index tie-break
    order = np.argsort(-v, kind="stable")[:k]
    return [(int(i), float(v[i])) for i in order]
