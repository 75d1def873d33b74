# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the hot 3D convolution / pooling loops.

Every reduction runs in a fixed sequential order (input channel, then
kernel taps in ascending (a, b, c) order), so identical inputs produce
bit-identical outputs on any build of this module. This is the default
backend; the numpy backend trades the fixed order for BLAS speed.
"""

import numpy as np

cimport cython
cimport numpy as cnp

ctypedef fused real:
    float
    double


def _pad_spatial(x, padding):
    p0, p1, p2 = padding
    if p0 == p1 == p2 == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (p0, p0), (p1, p1), (p2, p2)))


def conv3d_forward(x, w, stride, padding):
    xp = _pad_spatial(x, padding)
    co, ci, ka, kb, kc = w.shape
    s0, s1, s2 = stride
    do = (xp.shape[1] - ka) // s0 + 1
    ho = (xp.shape[2] - kb) // s1 + 1
    wo = (xp.shape[3] - kc) // s2 + 1
    out = np.zeros((co, do, ho, wo), dtype=x.dtype)
    _conv_fwd(xp, np.ascontiguousarray(w), out, s0, s1, s2)
    return out


def conv3d_input_grad(dy, w, stride, padding, in_shape):
    ci = w.shape[1]
    p0, p1, p2 = padding
    _, d, h, wid = in_shape
    dxp = np.zeros((ci, d + 2 * p0, h + 2 * p1, wid + 2 * p2), dtype=dy.dtype)
    _conv_igrad(np.ascontiguousarray(dy), np.ascontiguousarray(w), dxp,
                stride[0], stride[1], stride[2])
    if p0 or p1 or p2:
        return np.ascontiguousarray(dxp[:, p0:p0 + d, p1:p1 + h, p2:p2 + wid])
    return dxp


def conv3d_weight_grad(x, dy, stride, padding, kshape):
    xp = _pad_spatial(x, padding)
    dw = np.zeros(kshape, dtype=dy.dtype)
    _conv_wgrad(xp, np.ascontiguousarray(dy), dw, stride[0], stride[1], stride[2])
    return dw


def maxpool3d_forward(x, window, stride):
    c, d, h, wid = x.shape
    wa, wb, wc = window
    s0, s1, s2 = stride
    do = (d - wa) // s0 + 1
    ho = (h - wb) // s1 + 1
    wo = (wid - wc) // s2 + 1
    out = np.empty((c, do, ho, wo), dtype=x.dtype)
    idx = np.empty((c, do, ho, wo), dtype=np.int64)
    _pool_fwd(np.ascontiguousarray(x), out, idx, wa, wb, wc, s0, s1, s2)
    return out, idx


def maxpool3d_backward(dy, idx, in_shape):
    dx = np.zeros(in_shape, dtype=dy.dtype)
    _pool_bwd(np.ascontiguousarray(dy), idx, dx)
    return dx


def _conv_fwd(real[:, :, :, ::1] xp, real[:, :, :, :, ::1] w,
              real[:, :, :, ::1] out,
              Py_ssize_t s0, Py_ssize_t s1, Py_ssize_t s2):
    cdef Py_ssize_t co = w.shape[0], ci = w.shape[1]
    cdef Py_ssize_t ka = w.shape[2], kb = w.shape[3], kc = w.shape[4]
    cdef Py_ssize_t do = out.shape[1], ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t o, i, a, b, c, z, y, x, zi, yi
    cdef real wv
    for o in range(co):
        for i in range(ci):
            for a in range(ka):
                for b in range(kb):
                    for c in range(kc):
                        wv = w[o, i, a, b, c]
                        for z in range(do):
                            zi = z * s0 + a
                            for y in range(ho):
                                yi = y * s1 + b
                                if s2 == 1:
                                    for x in range(wo):
                                        out[o, z, y, x] += wv * xp[i, zi, yi, x + c]
                                else:
                                    for x in range(wo):
                                        out[o, z, y, x] += wv * xp[i, zi, yi, x * s2 + c]


def _conv_igrad(real[:, :, :, ::1] dy, real[:, :, :, :, ::1] w,
                real[:, :, :, ::1] dxp,
                Py_ssize_t s0, Py_ssize_t s1, Py_ssize_t s2):
    cdef Py_ssize_t co = w.shape[0], ci = w.shape[1]
    cdef Py_ssize_t ka = w.shape[2], kb = w.shape[3], kc = w.shape[4]
    cdef Py_ssize_t do = dy.shape[1], ho = dy.shape[2], wo = dy.shape[3]
    cdef Py_ssize_t o, i, a, b, c, z, y, x, zi, yi
    cdef real wv
    for o in range(co):
        for i in range(ci):
            for a in range(ka):
                for b in range(kb):
                    for c in range(kc):
                        wv = w[o, i, a, b, c]
                        for z in range(do):
                            zi = z * s0 + a
                            for y in range(ho):
                                yi = y * s1 + b
                                for x in range(wo):
                                    dxp[i, zi, yi, x * s2 + c] += wv * dy[o, z, y, x]


def _conv_wgrad(real[:, :, :, ::1] xp, real[:, :, :, ::1] dy,
                real[:, :, :, :, ::1] dw,
                Py_ssize_t s0, Py_ssize_t s1, Py_ssize_t s2):
    cdef Py_ssize_t co = dw.shape[0], ci = dw.shape[1]
    cdef Py_ssize_t ka = dw.shape[2], kb = dw.shape[3], kc = dw.shape[4]
    cdef Py_ssize_t do = dy.shape[1], ho = dy.shape[2], wo = dy.shape[3]
    cdef Py_ssize_t o, i, a, b, c, z, y, x, zi, yi
    cdef real acc
    for o in range(co):
        for i in range(ci):
            for a in range(ka):
                for b in range(kb):
                    for c in range(kc):
                        acc = 0
                        for z in range(do):
                            zi = z * s0 + a
                            for y in range(ho):
                                yi = y * s1 + b
                                for x in range(wo):
                                    acc += dy[o, z, y, x] * xp[i, zi, yi, x * s2 + c]
                        dw[o, i, a, b, c] = acc


def _pool_fwd(real[:, :, :, ::1] x, real[:, :, :, ::1] out,
              cnp.int64_t[:, :, :, ::1] idx,
              Py_ssize_t wa, Py_ssize_t wb, Py_ssize_t wc,
              Py_ssize_t s0, Py_ssize_t s1, Py_ssize_t s2):
    cdef Py_ssize_t nc = x.shape[0], h = x.shape[2], wid = x.shape[3]
    cdef Py_ssize_t do = out.shape[1], ho = out.shape[2], wo = out.shape[3]
    cdef Py_ssize_t ch, z, y, xo, a, b, c, zi, yi, xi
    cdef real best, v
    cdef cnp.int64_t besti
    for ch in range(nc):
        for z in range(do):
            for y in range(ho):
                for xo in range(wo):
                    best = x[ch, z * s0, y * s1, xo * s2]
                    besti = (z * s0 * h + y * s1) * wid + xo * s2
                    for a in range(wa):
                        zi = z * s0 + a
                        for b in range(wb):
                            yi = y * s1 + b
                            for c in range(wc):
                                xi = xo * s2 + c
                                v = x[ch, zi, yi, xi]
                                if v > best:
                                    best = v
                                    besti = (zi * h + yi) * wid + xi
                    out[ch, z, y, xo] = best
                    idx[ch, z, y, xo] = besti


def _pool_bwd(real[:, :, :, ::1] dy, cnp.int64_t[:, :, :, ::1] idx,
              real[:, :, :, ::1] dx):
    cdef Py_ssize_t nc = dy.shape[0]
    cdef Py_ssize_t do = dy.shape[1], ho = dy.shape[2], wo = dy.shape[3]
    cdef Py_ssize_t h = dx.shape[2], wid = dx.shape[3]
    cdef Py_ssize_t ch, z, y, x
    cdef cnp.int64_t flat, rem
    for ch in range(nc):
        for z in range(do):
            for y in range(ho):
                for x in range(wo):
                    flat = idx[ch, z, y, x]
                    rem = flat % (h * wid)
                    dx[ch, flat // (h * wid), rem // wid, rem % wid] += dy[ch, z, y, x]
