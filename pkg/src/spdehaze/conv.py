"""Convolution, upsampling and pooling ops for the tape engine (NHWC).

im2col gather and col2im scatter are numba kernels (the strided copies are
the hot path, not the GEMMs); forward columns are cached for the weight
gradient when the kernel is trainable.
"""

import numpy as np
from numba import njit, prange

from .tensor import Tensor, ShapeError, _record


def _pad2d(x, p, mode):
    if p == 0:
        return x
    spec = ((0, 0), (p, p), (p, p), (0, 0))
    if mode == "zero":
        return np.pad(x, spec)
    if mode == "replicate":
        return np.pad(x, spec, mode="edge")
    raise ValueError(f"unknown pad mode {mode!r}")


def _fold_axis(gp, p, n, axis):
    # adjoint of replicate padding along one axis: border strips fold onto edges
    g = np.moveaxis(gp, axis, 0)
    out = g[p:p + n].copy()
    out[0] += g[:p].sum(axis=0)
    out[-1] += g[p + n:].sum(axis=0)
    return np.moveaxis(out, 0, axis)


def _unpad_grad(gp, p, mode, h, w):
    if p == 0:
        return gp
    if mode == "zero":
        return np.ascontiguousarray(gp[:, p:p + h, p:p + w, :])
    return _fold_axis(_fold_axis(gp, p, h, 1), p, w, 2)


@njit(cache=False, parallel=True)
def _im2col_fill(xp, cols, kh, kw, stride, ho, wo):
    # parallel over the batch: each b writes disjoint rows, so the result is
    # identical for any worker count
    n = xp.shape[0]
    c = xp.shape[3]
    for b in prange(n):
        for i in range(ho):
            for j in range(wo):
                row = (b * ho + i) * wo + j
                col = 0
                for ky in range(kh):
                    for kx in range(kw):
                        base_y = i * stride + ky
                        base_x = j * stride + kx
                        for ch in range(c):
                            cols[row, col] = xp[b, base_y, base_x, ch]
                            col += 1


@njit(cache=False, parallel=True)
def _col2im_add(dxp, dcols, kh, kw, stride, ho, wo):
    n = dxp.shape[0]
    c = dxp.shape[3]
    for b in prange(n):
        for i in range(ho):
            for j in range(wo):
                row = (b * ho + i) * wo + j
                col = 0
                for ky in range(kh):
                    for kx in range(kw):
                        base_y = i * stride + ky
                        base_x = j * stride + kx
                        for ch in range(c):
                            dxp[b, base_y, base_x, ch] += dcols[row, col]
                            col += 1


def _im2col(xp, kh, kw, stride):
    n, hp, wp, c = xp.shape
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1
    cols = np.empty((n * ho * wo, kh * kw * c), dtype=xp.dtype)
    _im2col_fill(xp, cols, kh, kw, stride, ho, wo)
    return cols, ho, wo


def conv_out_size(h, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1


def conv2d(x, w, b=None, stride=1, pad=None, pad_mode="zero"):
    """2-d cross-correlation: x (N,H,W,Cin), w (kh,kw,Cin,Cout), b (Cout,)."""
    kh, kw, cin, cout = w.shape
    if x.ndim != 4 or x.shape[3] != cin:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    if pad is None:
        pad = kh // 2
    n, h, wd, _ = x.shape
    if kh == 1 and kw == 1 and pad == 0 and stride == 1:
        return _conv1x1(x, w, b)

    xp = _pad2d(x.data, pad, pad_mode)
    cols, ho, wo = _im2col(xp, kh, kw, stride)
    y = cols @ w.data.reshape(kh * kw * cin, cout)
    if b is not None:
        y = y + b.data
    out = Tensor(y.reshape(n, ho, wo, cout))
    saved_cols = cols if w.requires_grad else None

    def bwd(g):
        gf = g.reshape(n * ho * wo, cout)
        if b is not None and b.requires_grad:
            b._accum(gf.sum(axis=0))
        if w.requires_grad:
            w._accum((saved_cols.T @ gf).reshape(kh, kw, cin, cout))
        if x.requires_grad:
            dcols = gf @ w.data.reshape(kh * kw * cin, cout).T
            dxp = np.zeros((n, h + 2 * pad, wd + 2 * pad, cin), dtype=x.dtype)
            _col2im_add(dxp, dcols, kh, kw, stride, ho, wo)
            x._accum(_unpad_grad(dxp, pad, pad_mode, h, wd))

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out, inputs, bwd)


def _conv1x1(x, w, b):
    n, h, wd, cin = x.shape
    cout = w.shape[3]
    y = x.data.reshape(-1, cin) @ w.data.reshape(cin, cout)
    if b is not None:
        y = y + b.data
    out = Tensor(y.reshape(n, h, wd, cout))

    def bwd(g):
        gf = g.reshape(-1, cout)
        if b is not None and b.requires_grad:
            b._accum(gf.sum(axis=0))
        if w.requires_grad:
            w._accum((x.data.reshape(-1, cin).T @ gf).reshape(1, 1, cin, cout))
        if x.requires_grad:
            x._accum((gf @ w.data.reshape(cin, cout).T).reshape(x.shape))

    inputs = (x, w) if b is None else (x, w, b)
    return _record(out, inputs, bwd)


def upsample_nearest2(x):
    """Nearest-neighbour 2x spatial upsampling."""
    if x.ndim != 4:
        raise ShapeError(f"upsample_nearest2: expected NHWC, got {x.shape}")
    n, h, w, c = x.shape
    out = Tensor(np.repeat(np.repeat(x.data, 2, axis=1), 2, axis=2))

    def bwd(g):
        if x.requires_grad:
            x._accum(g.reshape(n, h, 2, w, 2, c).sum(axis=(2, 4)))

    return _record(out, (x,), bwd)


def avgpool2(x):
    """2x2 average pooling, stride 2."""
    n, h, w, c = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"avgpool2: spatial dims must be even, got {x.shape}")
    out = Tensor(x.data.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4)))

    def bwd(g):
        if x.requires_grad:
            gx = np.repeat(np.repeat(g, 2, axis=1), 2, axis=2) * x.dtype.type(0.25)
            x._accum(gx)

    return _record(out, (x,), bwd)
