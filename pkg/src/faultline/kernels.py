"""Numba kernels with a pinned accumulation order.

Every reduction here runs in ascending index order so results are bitwise
reproducible and match naive loop oracles exactly. BLAS is deliberately not
used: its blocked/FMA accumulation differs bitwise from the contract.
fastmath stays off everywhere; LLVM must not reassociate the sums.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def matmul_f32(a, b):
    # c[i,j] = sum_k a[i,k]*b[k,j], ascending k. ikj order: the inner j loop
    # vectorizes without touching any single element's accumulation order.
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n), dtype=np.float32)
    for i in range(m):
        for kk in range(k):
            aik = a[i, kk]
            for j in range(n):
                out[i, j] += aik * b[kk, j]
    return out


@njit(cache=True, nogil=True)
def im2col_f32(xp, kh, kw, stride, oh, ow):
    # Column c enumerates (ci, ky, kx) in ascending row-major order, so a
    # matmul over these columns accumulates in exactly that order.
    B, Cin, Hp, Wp = xp.shape
    cols = np.empty((B * oh * ow, Cin * kh * kw), dtype=np.float32)
    for b in range(B):
        for oy in range(oh):
            for ox in range(ow):
                r = (b * oh + oy) * ow + ox
                c = 0
                for ci in range(Cin):
                    for ky in range(kh):
                        iy = oy * stride + ky
                        ix0 = ox * stride
                        for kx in range(kw):
                            cols[r, c] = xp[b, ci, iy, ix0 + kx]
                            c += 1
    return cols


@njit(cache=True, nogil=True)
def col2im_f32(dcols, B, Cin, Hp, Wp, kh, kw, stride, oh, ow):
    # Scatter-add transpose of im2col; fixed loop order keeps it deterministic.
    dxp = np.zeros((B, Cin, Hp, Wp), dtype=np.float32)
    for b in range(B):
        for oy in range(oh):
            for ox in range(ow):
                r = (b * oh + oy) * ow + ox
                c = 0
                for ci in range(Cin):
                    for ky in range(kh):
                        iy = oy * stride + ky
                        ix0 = ox * stride
                        for kx in range(kw):
                            dxp[b, ci, iy, ix0 + kx] += dcols[r, c]
                            c += 1
    return dxp


@njit(cache=True, nogil=True)
def maxpool_f32(x, size):
    # Ties go to the first element in (ky, kx) scan order.
    B, C, H, W = x.shape
    oh = H // size
    ow = W // size
    out = np.empty((B, C, oh, ow), dtype=np.float32)
    arg = np.empty((B, C, oh, ow), dtype=np.int64)
    for b in range(B):
        for c in range(C):
            for oy in range(oh):
                for ox in range(ow):
                    best = np.float32(-np.inf)
                    besti = 0
                    for ky in range(size):
                        for kx in range(size):
                            iy = oy * size + ky
                            ix = ox * size + kx
                            v = x[b, c, iy, ix]
                            if v > best:
                                best = v
                                besti = iy * W + ix
                    out[b, c, oy, ox] = best
                    arg[b, c, oy, ox] = besti
    return out, arg


@njit(cache=True, nogil=True)
def maxpool_backward_f32(dy, arg, H, W):
    B, C, oh, ow = dy.shape
    dx = np.zeros((B, C, H, W), dtype=np.float32)
    for b in range(B):
        for c in range(C):
            for oy in range(oh):
                for ox in range(ow):
                    flat = arg[b, c, oy, ox]
                    dx[b, c, flat // W, flat % W] += dy[b, c, oy, ox]
    return dx


def warmup():
    """Force-compile all kernels (cached to disk afterwards)."""
    a = np.ones((2, 3), dtype=np.float32)
    b = np.ones((3, 2), dtype=np.float32)
    matmul_f32(a, b)
    xp = np.ones((1, 1, 4, 4), dtype=np.float32)
    cols = im2col_f32(xp, 2, 2, 1, 3, 3)
    col2im_f32(cols, 1, 1, 4, 4, 2, 2, 1, 3, 3)
    out, arg = maxpool_f32(xp, 2)
    maxpool_backward_f32(out, arg, 4, 4)
