"""NumPy kernels for the hot 3D convolution / pooling loops.

This is the pure-Python backend: forward and adjoint convolutions are
lowered to GEMMs via strided window views, chunked over the depth axis so
the gather buffer stays below ``COL_BUDGET_BYTES``. BLAS may reorder the
reductions, so results are reproducible per machine but the accumulation
order is not the fixed one the compiled backend guarantees.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Upper bound on the transient im2col-style buffer used per GEMM call.
COL_BUDGET_BYTES = 192 * 1024 * 1024


def _pad_spatial(x, padding):
    p0, p1, p2 = padding
    if p0 == p1 == p2 == 0:
        return x
    return np.pad(x, ((0, 0), (p0, p0), (p1, p1), (p2, p2)))


def _windows(xp, kshape, stride):
    """Strided view (C, Do, Ho, Wo, ka, kb, kc) of all kernel windows."""
    s0, s1, s2 = stride
    win = sliding_window_view(xp, kshape, axis=(1, 2, 3))
    return win[:, ::s0, ::s1, ::s2]


def _depth_chunks(n_depth, per_slab_bytes):
    step = max(1, int(COL_BUDGET_BYTES // max(1, per_slab_bytes)))
    for z0 in range(0, n_depth, step):
        yield z0, min(n_depth, z0 + step)


def conv3d_forward(x, w, stride, padding):
    """Cross-correlate x (Ci,D,H,W) with w (Co,Ci,ka,kb,kc), zero-padded."""
    co, ci, ka, kb, kc = w.shape
    xp = _pad_spatial(x, padding)
    sub = _windows(xp, (ka, kb, kc), stride)
    _, do, ho, wo, _, _, _ = sub.shape
    out = np.empty((co, do, ho, wo), dtype=x.dtype)
    slab = ci * ka * kb * kc * ho * wo * x.dtype.itemsize
    for z0, z1 in _depth_chunks(do, slab):
        out[:, z0:z1] = np.tensordot(
            w, sub[:, z0:z1], axes=([1, 2, 3, 4], [0, 4, 5, 6])
        )
    return out


def conv3d_input_grad(dy, w, stride, padding, in_shape):
    """Adjoint of conv3d_forward with respect to its input."""
    co, ci, ka, kb, kc = w.shape
    s0, s1, s2 = stride
    p0, p1, p2 = padding
    _, d, h, wid = in_shape
    dxp = np.zeros((ci, d + 2 * p0, h + 2 * p1, wid + 2 * p2), dtype=dy.dtype)
    _, do, ho, wo = dy.shape
    slab = ci * ka * kb * kc * ho * wo * dy.dtype.itemsize
    for z0, z1 in _depth_chunks(do, slab):
        g = np.tensordot(w, dy[:, z0:z1], axes=([0], [0]))
        # g: (Ci, ka, kb, kc, dz, Ho, Wo); fold each tap back into the input grid
        dz = z1 - z0
        for a in range(ka):
            za = z0 * s0 + a
            sl0 = slice(za, za + (dz - 1) * s0 + 1, s0)
            for b in range(kb):
                sl1 = slice(b, b + (ho - 1) * s1 + 1, s1)
                for c in range(kc):
                    sl2 = slice(c, c + (wo - 1) * s2 + 1, s2)
                    dxp[:, sl0, sl1, sl2] += g[:, a, b, c]
    if p0 or p1 or p2:
        return np.ascontiguousarray(dxp[:, p0:p0 + d, p1:p1 + h, p2:p2 + wid])
    return dxp


def conv3d_weight_grad(x, dy, stride, padding, kshape):
    """Gradient of conv3d_forward with respect to the kernel."""
    ka, kb, kc = kshape[2:]
    xp = _pad_spatial(x, padding)
    sub = _windows(xp, (ka, kb, kc), stride)
    ci = x.shape[0]
    _, do, ho, wo = dy.shape
    dw = np.zeros(kshape, dtype=dy.dtype)
    slab = ci * ka * kb * kc * ho * wo * x.dtype.itemsize
    for z0, z1 in _depth_chunks(do, slab):
        dw += np.tensordot(dy[:, z0:z1], sub[:, z0:z1], axes=([1, 2, 3], [1, 2, 3]))
    return dw


def maxpool3d_forward(x, window, stride):
    """Windowed channel-wise max; returns (values, flat argmax per output).

    Ties go to the first window element in (a, b, c) scan order, matching
    the compiled backend.
    """
    c, d, h, wid = x.shape
    wa, wb, wc = window
    s0, s1, s2 = stride
    do = (d - wa) // s0 + 1
    ho = (h - wb) // s1 + 1
    wo = (wid - wc) // s2 + 1
    z = np.arange(do) * s0
    y = np.arange(ho) * s1
    xx = np.arange(wo) * s2
    best = np.full((c, do, ho, wo), -np.inf, dtype=x.dtype)
    idx = np.zeros((c, do, ho, wo), dtype=np.int64)
    for a in range(wa):
        for b in range(wb):
            for cc in range(wc):
                cand = x[:, a:a + (do - 1) * s0 + 1:s0,
                         b:b + (ho - 1) * s1 + 1:s1,
                         cc:cc + (wo - 1) * s2 + 1:s2]
                flat = ((z[:, None, None] + a) * h + (y[None, :, None] + b)) * wid \
                    + (xx[None, None, :] + cc)
                take = cand > best
                best = np.where(take, cand, best)
                idx = np.where(take, flat[None], idx)
    return best, idx


def maxpool3d_backward(dy, idx, in_shape):
    """Route each output gradient to its argmax input element."""
    c, d, h, wid = in_shape
    dx = np.zeros(c * d * h * wid, dtype=dy.dtype)
    offs = (np.arange(c) * (d * h * wid))[:, None]
    flat = (idx.reshape(c, -1) + offs).ravel()
    np.add.at(dx, flat, dy.reshape(c, -1).ravel())
    return dx.reshape(in_shape)
