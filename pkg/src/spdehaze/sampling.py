"""Bilinear sampling and deformable 3x3 convolution.

Sampling clamps continuous coordinates to the image border; the coordinate
gradient is zero wherever the clamp is active. Inner loops are numba-compiled
with a fixed iteration order so scatter-adds are deterministic.
"""

import numpy as np
from numba import njit, prange

from .tensor import Tensor, ShapeError, _record


@njit(cache=False, parallel=True)
def _bilin_fwd(m, cy, cx, out):
    # parallel over the batch: writes are disjoint per b, so results are
    # identical for any worker count
    n, h, w, c = m.shape
    ho, wo = cy.shape[1], cy.shape[2]
    for b in prange(n):
        for i in range(ho):
            for j in range(wo):
                y = min(max(cy[b, i, j], 0.0), h - 1.0)
                x = min(max(cx[b, i, j], 0.0), w - 1.0)
                y0 = int(np.floor(y))
                x0 = int(np.floor(x))
                y1 = min(y0 + 1, h - 1)
                x1 = min(x0 + 1, w - 1)
                wy = y - y0
                wx = x - x0
                for k in range(c):
                    top = (1.0 - wx) * m[b, y0, x0, k] + wx * m[b, y0, x1, k]
                    bot = (1.0 - wx) * m[b, y1, x0, k] + wx * m[b, y1, x1, k]
                    out[b, i, j, k] = (1.0 - wy) * top + wy * bot


@njit(cache=False, parallel=True)
def _bilin_bwd(m, cy, cx, g, dm, dcy, dcx, need_dm, need_dc):
    n, h, w, c = m.shape
    ho, wo = cy.shape[1], cy.shape[2]
    for b in prange(n):
        for i in range(ho):
            for j in range(wo):
                ry = cy[b, i, j]
                rx = cx[b, i, j]
                y = min(max(ry, 0.0), h - 1.0)
                x = min(max(rx, 0.0), w - 1.0)
                iny = 1.0 if (ry > 0.0 and ry < h - 1.0) else 0.0
                inx = 1.0 if (rx > 0.0 and rx < w - 1.0) else 0.0
                y0 = int(np.floor(y))
                x0 = int(np.floor(x))
                y1 = min(y0 + 1, h - 1)
                x1 = min(x0 + 1, w - 1)
                wy = y - y0
                wx = x - x0
                gy = 0.0
                gx = 0.0
                for k in range(c):
                    gk = g[b, i, j, k]
                    if need_dm:
                        dm[b, y0, x0, k] += gk * (1.0 - wy) * (1.0 - wx)
                        dm[b, y0, x1, k] += gk * (1.0 - wy) * wx
                        dm[b, y1, x0, k] += gk * wy * (1.0 - wx)
                        dm[b, y1, x1, k] += gk * wy * wx
                    if need_dc:
                        gy += gk * ((1.0 - wx) * (m[b, y1, x0, k] - m[b, y0, x0, k])
                                    + wx * (m[b, y1, x1, k] - m[b, y0, x1, k]))
                        gx += gk * ((1.0 - wy) * (m[b, y0, x1, k] - m[b, y0, x0, k])
                                    + wy * (m[b, y1, x1, k] - m[b, y1, x0, k]))
                if need_dc:
                    dcy[b, i, j] = gy * iny
                    dcx[b, i, j] = gx * inx


def bilinear_sample(m, coords):
    """Sample m (N,H,W,C) at coords (N,Ho,Wo,2) given as (y, x) pixel positions."""
    if m.ndim != 4 or coords.ndim != 4 or coords.shape[3] != 2 or coords.shape[0] != m.shape[0]:
        raise ShapeError(f"bilinear_sample: map {m.shape} vs coords {coords.shape}")
    cy = np.ascontiguousarray(coords.data[..., 0])
    cx = np.ascontiguousarray(coords.data[..., 1])
    n, ho, wo = cy.shape
    y = np.empty((n, ho, wo, m.shape[3]), dtype=m.dtype)
    _bilin_fwd(m.data, cy, cx, y)
    out = Tensor(y)

    def bwd(g):
        need_dm = m.requires_grad
        need_dc = coords.requires_grad
        dm = np.zeros(m.shape, dtype=m.dtype)
        dcy = np.zeros_like(cy)
        dcx = np.zeros_like(cx)
        _bilin_bwd(m.data, cy, cx, np.ascontiguousarray(g), dm, dcy, dcx, need_dm, need_dc)
        if need_dm:
            m._accum(dm)
        if need_dc:
            coords._accum(np.stack([dcy, dcx], axis=-1))

    return _record(out, (m, coords), bwd)


@njit(cache=False, parallel=True)
def _deform_gather(x, off, patches):
    n, h, w, c = x.shape
    for b in prange(n):
        for i in range(h):
            for j in range(w):
                for t in range(9):
                    ky = t // 3 - 1
                    kx = t % 3 - 1
                    py = min(max(i + ky + off[b, i, j, 2 * t], 0.0), h - 1.0)
                    px = min(max(j + kx + off[b, i, j, 2 * t + 1], 0.0), w - 1.0)
                    y0 = int(np.floor(py))
                    x0 = int(np.floor(px))
                    y1 = min(y0 + 1, h - 1)
                    x1 = min(x0 + 1, w - 1)
                    wy = py - y0
                    wx = px - x0
                    for k in range(c):
                        top = (1.0 - wx) * x[b, y0, x0, k] + wx * x[b, y0, x1, k]
                        bot = (1.0 - wx) * x[b, y1, x0, k] + wx * x[b, y1, x1, k]
                        patches[b, i, j, t, k] = (1.0 - wy) * top + wy * bot


@njit(cache=False, parallel=True)
def _deform_scatter(x, off, dpatch, dx, doff, need_dx, need_doff):
    n, h, w, c = x.shape
    for b in prange(n):
        for i in range(h):
            for j in range(w):
                for t in range(9):
                    ky = t // 3 - 1
                    kx = t % 3 - 1
                    ry = i + ky + off[b, i, j, 2 * t]
                    rx = j + kx + off[b, i, j, 2 * t + 1]
                    py = min(max(ry, 0.0), h - 1.0)
                    px = min(max(rx, 0.0), w - 1.0)
                    iny = 1.0 if (ry > 0.0 and ry < h - 1.0) else 0.0
                    inx = 1.0 if (rx > 0.0 and rx < w - 1.0) else 0.0
                    y0 = int(np.floor(py))
                    x0 = int(np.floor(px))
                    y1 = min(y0 + 1, h - 1)
                    x1 = min(x0 + 1, w - 1)
                    wy = py - y0
                    wx = px - x0
                    gy = 0.0
                    gx = 0.0
                    for k in range(c):
                        gk = dpatch[b, i, j, t, k]
                        if need_dx:
                            dx[b, y0, x0, k] += gk * (1.0 - wy) * (1.0 - wx)
                            dx[b, y0, x1, k] += gk * (1.0 - wy) * wx
                            dx[b, y1, x0, k] += gk * wy * (1.0 - wx)
                            dx[b, y1, x1, k] += gk * wy * wx
                        if need_doff:
                            gy += gk * ((1.0 - wx) * (x[b, y1, x0, k] - x[b, y0, x0, k])
                                        + wx * (x[b, y1, x1, k] - x[b, y0, x1, k]))
                            gx += gk * ((1.0 - wy) * (x[b, y0, x1, k] - x[b, y0, x0, k])
                                        + wy * (x[b, y1, x1, k] - x[b, y1, x0, k]))
                    if need_doff:
                        doff[b, i, j, 2 * t] = gy * iny
                        doff[b, i, j, 2 * t + 1] = gx * inx


def deform_conv(x, offsets, w, b=None):
    """Deformable 3x3 convolution (v1, offsets only), output same spatial size.

    x (N,H,W,Cin), offsets (N,H,W,18) as (dy, dx) per tap in row-major tap
    order, w (3,3,Cin,Cout). Each tap samples x at base grid + tap + offset.
    """
    if w.shape[0] != 3 or w.shape[1] != 3:
        raise ShapeError(f"deform_conv: kernel must be 3x3, got {w.shape}")
    n, h, wd, cin = x.shape
    if offsets.shape != (n, h, wd, 18):
        raise ShapeError(f"deform_conv: offsets {offsets.shape}, expected {(n, h, wd, 18)}")
    if w.shape[2] != cin:
        raise ShapeError(f"deform_conv: input {x.shape} incompatible with kernel {w.shape}")
    cout = w.shape[3]
    patches = np.empty((n, h, wd, 9, cin), dtype=x.dtype)
    _deform_gather(x.data, offsets.data, patches)
    y = patches.reshape(-1, 9 * cin) @ w.data.reshape(9 * cin, cout)
    if b is not None:
        y = y + b.data
    out = Tensor(y.reshape(n, h, wd, cout))

    def bwd(g):
        gf = g.reshape(-1, cout)
        if b is not None and b.requires_grad:
            b._accum(gf.sum(axis=0))
        if w.requires_grad:
            w._accum((patches.reshape(-1, 9 * cin).T @ gf).reshape(3, 3, cin, cout))
        need_dx = x.requires_grad
        need_doff = offsets.requires_grad
        if need_dx or need_doff:
            dpatch = (gf @ w.data.reshape(9 * cin, cout).T).reshape(n, h, wd, 9, cin)
            dx = np.zeros(x.shape, dtype=x.dtype)
            doff = np.zeros(offsets.shape, dtype=offsets.dtype)
            _deform_scatter(x.data, offsets.data, dpatch, dx, doff, need_dx, need_doff)
            if need_dx:
                x._accum(dx)
            if need_doff:
                offsets._accum(doff)

    inputs = (x, offsets, w) if b is None else (x, offsets, w, b)
    return _record(out, inputs, bwd)
