"""Differentiable operations over :class:`~voxseg.engine.tensor.Tensor`.

Volume layout is channels-first: ``(C, D, H, W)`` with an optional leading
batch extent. All spatial kernels dispatch through the active backend
(:mod:`voxseg.engine.backend`).
"""

from dataclasses import dataclass

import numpy as np

from ..errors import EmptyOutput, LabelOutOfRange, ShapeMismatch
from . import backend
from .tensor import Tensor, as_tensor


def conv_out_extent(e, k, s, p):
    """Output extent of a strided, zero-padded correlation."""
    return (e + 2 * p - k) // s + 1


def transpose_out_extent(e, k, s, p):
    """Output extent of the adjoint (transposed) correlation."""
    return (e - 1) * s + k - 2 * p


@dataclass
class ConvSpec:
    """Weights and geometry of one (transposed) 3D convolution.

    ``kernel`` is (out_channels, in_channels, ka, kb, kc). Used forward, the
    layer maps in_channels -> out_channels; used transposed, it maps
    out_channels -> in_channels and ``bias`` is sized for whichever side is
    produced.
    """

    kernel: Tensor
    bias: Tensor | None = None
    stride: tuple = (1, 1, 1)
    padding: tuple = (0, 0, 0)

    def __post_init__(self):
        self.stride = tuple(int(s) for s in self.stride)
        self.padding = tuple(int(p) for p in self.padding)
        if self.kernel.data.ndim != 5:
            raise ShapeMismatch("kernel must be 5-axis (out, in, ka, kb, kc)")
        if any(k < 1 for k in self.kernel.shape[2:]):
            raise ShapeMismatch("kernel spatial extents must be >= 1")
        if any(s < 1 for s in self.stride):
            raise ShapeMismatch("stride components must be >= 1")
        if any(p < 0 for p in self.padding):
            raise ShapeMismatch("padding components must be >= 0")

    @property
    def out_channels(self):
        return self.kernel.shape[0]

    @property
    def in_channels(self):
        return self.kernel.shape[1]


def _split_batch(x):
    """View a 4D tensor as a 1-element batch, a 5D one as-is."""
    if x.ndim == 4:
        return x[None], True
    if x.ndim == 5:
        return x, False
    raise ShapeMismatch(f"expected 4D or 5D volume tensor, got shape {x.shape}")


def _merge_batch(arrs, squeeze):
    out = np.stack(arrs)
    return out[0] if squeeze else out


def conv3d(x, spec):
    """Strided zero-padded cross-correlation with per-channel bias."""
    k = spec.kernel.data
    xb, squeeze = _split_batch(x.data)
    if xb.shape[1] != spec.in_channels:
        raise ShapeMismatch(
            f"input has {xb.shape[1]} channels, kernel expects {spec.in_channels}")
    out_sp = tuple(
        conv_out_extent(e, kk, s, p)
        for e, kk, s, p in zip(xb.shape[2:], k.shape[2:], spec.stride, spec.padding))
    if any(e < 1 for e in out_sp):
        raise EmptyOutput(f"conv output extents {out_sp} from input {xb.shape[2:]}")
    kern = backend.kernels()
    ys = [kern.conv3d_forward(xi, k, spec.stride, spec.padding) for xi in xb]
    if spec.bias is not None:
        b = spec.bias.data
        if b.shape != (spec.out_channels,):
            raise ShapeMismatch("conv bias must have one scalar per out-channel")
        for yi in ys:
            yi += b[:, None, None, None]
    out_data = _merge_batch(ys, squeeze)

    def backward_fn(dy):
        dyb = dy[None] if squeeze else dy
        kern_b = backend.kernels()
        if spec.kernel.requires_grad:
            dw = np.zeros_like(k)
            for xi, dyi in zip(xb, dyb):
                dw += kern_b.conv3d_weight_grad(xi, dyi, spec.stride, spec.padding, k.shape)
            spec.kernel.accumulate_grad(dw)
        if spec.bias is not None and spec.bias.requires_grad:
            spec.bias.accumulate_grad(dyb.sum(axis=(0, 2, 3, 4)))
        if x.requires_grad:
            dxs = [
                kern_b.conv3d_input_grad(dyi, k, spec.stride, spec.padding, xb.shape[1:])
                for dyi in dyb
            ]
            x.accumulate_grad(_merge_batch(dxs, squeeze))

    parents = [x, spec.kernel] + ([spec.bias] if spec.bias is not None else [])
    return Tensor._from_op(out_data, parents, backward_fn)


def conv3d_transpose(x, spec):
    """Adjoint of :func:`conv3d` for the same spec (plus its own bias).

    Input carries ``spec.out_channels`` channels; the result carries
    ``spec.in_channels``.
    """
    k = spec.kernel.data
    xb, squeeze = _split_batch(x.data)
    if xb.shape[1] != spec.out_channels:
        raise ShapeMismatch(
            f"input has {xb.shape[1]} channels, transposed kernel expects {spec.out_channels}")
    out_sp = tuple(
        transpose_out_extent(e, kk, s, p)
        for e, kk, s, p in zip(xb.shape[2:], k.shape[2:], spec.stride, spec.padding))
    if any(e < 1 for e in out_sp):
        raise ShapeMismatch(f"transposed conv output extents {out_sp} collapse")
    in_shape = (spec.in_channels,) + out_sp
    kern = backend.kernels()
    ys = [kern.conv3d_input_grad(xi, k, spec.stride, spec.padding, in_shape) for xi in xb]
    if spec.bias is not None:
        b = spec.bias.data
        if b.shape != (spec.in_channels,):
            raise ShapeMismatch("transposed conv bias must match produced channels")
        for yi in ys:
            yi += b[:, None, None, None]
    out_data = _merge_batch(ys, squeeze)

    def backward_fn(dy):
        dyb = dy[None] if squeeze else dy
        kern_b = backend.kernels()
        if spec.kernel.requires_grad:
            dw = np.zeros_like(k)
            for xi, dyi in zip(xb, dyb):
                dw += kern_b.conv3d_weight_grad(dyi, xi, spec.stride, spec.padding, k.shape)
            spec.kernel.accumulate_grad(dw)
        if spec.bias is not None and spec.bias.requires_grad:
            spec.bias.accumulate_grad(dyb.sum(axis=(0, 2, 3, 4)))
        if x.requires_grad:
            dxs = [kern_b.conv3d_forward(dyi, k, spec.stride, spec.padding) for dyi in dyb]
            x.accumulate_grad(_merge_batch(dxs, squeeze))

    parents = [x, spec.kernel] + ([spec.bias] if spec.bias is not None else [])
    return Tensor._from_op(out_data, parents, backward_fn)


def max_pool3d(x, window, stride=None):
    """Channel-wise windowed maximum; gradient routes to the argmax."""
    window = tuple(int(w) for w in window)
    stride = window if stride is None else tuple(int(s) for s in stride)
    xb, squeeze = _split_batch(x.data)
    out_sp = tuple(
        conv_out_extent(e, w, s, 0) for e, w, s in zip(xb.shape[2:], window, stride))
    if any(e < 1 for e in out_sp):
        raise ShapeMismatch(f"pool window {window} exceeds input extents {xb.shape[2:]}")
    kern = backend.kernels()
    pairs = [kern.maxpool3d_forward(xi, window, stride) for xi in xb]
    out_data = _merge_batch([p[0] for p in pairs], squeeze)

    def backward_fn(dy):
        dyb = dy[None] if squeeze else dy
        kern_b = backend.kernels()
        dxs = [
            kern_b.maxpool3d_backward(dyi, idx, xb.shape[1:])
            for dyi, (_, idx) in zip(dyb, pairs)
        ]
        x.accumulate_grad(_merge_batch(dxs, squeeze))

    return Tensor._from_op(out_data, [x], backward_fn)


def relu(x):
    out_data = np.maximum(x.data, 0)

    def backward_fn(dy):
        x.accumulate_grad(dy * (x.data > 0))

    return Tensor._from_op(out_data, [x], backward_fn)


def add_tensors(a, b):
    """Elementwise (tensorial) sum used by skip connections."""
    if a.shape != b.shape:
        raise ShapeMismatch(f"cannot add shapes {a.shape} and {b.shape}")
    out_data = a.data + b.data

    def backward_fn(dy):
        if a.requires_grad:
            a.accumulate_grad(dy)
        if b.requires_grad:
            b.accumulate_grad(dy)

    return Tensor._from_op(out_data, [a, b], backward_fn)


def pointwise(x, kind, other=None):
    """Dispatch by name: ``relu`` or ``add_tensors``."""
    if kind == "relu":
        return relu(x)
    if kind == "add_tensors":
        if other is None:
            raise ShapeMismatch("add_tensors needs two operands")
        return add_tensors(x, other)
    raise ValueError(f"unknown pointwise kind {kind!r}")


def softmax_channels(x):
    """Per-voxel softmax over the channel axis (stable via max-subtraction)."""
    ax = x.data.ndim - 4
    m = x.data.max(axis=ax, keepdims=True)
    e = np.exp(x.data - m)
    out_data = e / e.sum(axis=ax, keepdims=True)

    def backward_fn(dy):
        inner = (dy * out_data).sum(axis=ax, keepdims=True)
        x.accumulate_grad((dy - inner) * out_data)

    return Tensor._from_op(out_data, [x], backward_fn)


def categorical_cross_entropy(logits, target):
    """Mean per-voxel negative log-probability of the true class.

    ``target`` is an integer array shaped like the logits without their
    channel axis. Gradient w.r.t. the logits is (softmax - onehot) / Nvox.
    """
    t = np.asarray(getattr(target, "labels", target))
    ax = logits.data.ndim - 4
    c = logits.shape[ax]
    spatial = logits.shape[:ax] + logits.shape[ax + 1:]
    if t.shape != spatial:
        raise ShapeMismatch(f"target shape {t.shape} vs logit voxels {spatial}")
    if not np.issubdtype(t.dtype, np.integer):
        raise LabelOutOfRange("target labels must be integers")
    if t.min() < 0 or t.max() >= c:
        raise LabelOutOfRange(f"labels must lie in [0, {c}), got [{t.min()}, {t.max()}]")

    m = logits.data.max(axis=ax, keepdims=True)
    shifted = logits.data - m
    lse = np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    logp = shifted - lse
    tix = np.expand_dims(t, ax)
    picked = np.take_along_axis(logp, tix, axis=ax)
    n = t.size
    loss = -picked.sum() / n

    def backward_fn(dy):
        g = np.exp(logp)
        np.put_along_axis(
            g, tix, np.take_along_axis(g, tix, axis=ax) - 1.0, axis=ax)
        logits.accumulate_grad(g * (dy.item() / n))

    return Tensor._from_op(
        np.asarray(loss, dtype=logits.dtype), [logits], backward_fn)


def tensor_sum(x):
    out_data = np.asarray(x.data.sum(), dtype=x.dtype)

    def backward_fn(dy):
        x.accumulate_grad(np.full_like(x.data, dy.item()))

    return Tensor._from_op(out_data, [x], backward_fn)


def weighted_sum(x, weights):
    """Scalar ``sum(x * weights)`` with constant (non-differentiated) weights."""
    w = np.asarray(weights, dtype=x.dtype)
    if w.shape != x.data.shape:
        raise ShapeMismatch(f"weights {w.shape} do not match input {x.data.shape}")
    out_data = np.asarray((x.data * w).sum(), dtype=x.dtype)

    def backward_fn(dy):
        x.accumulate_grad(w * dy.item())

    return Tensor._from_op(out_data, [x], backward_fn)


def pad_spatial(x, pads):
    """Zero-pad the trailing three axes; ``pads`` is ((lo,hi),)*3."""
    pads = tuple((int(a), int(b)) for a, b in pads)
    lead = x.data.ndim - 3
    out_data = np.pad(x.data, ((0, 0),) * lead + pads)

    def backward_fn(dy):
        sl = (slice(None),) * lead + tuple(
            slice(lo, dy.shape[lead + i] - hi) for i, (lo, hi) in enumerate(pads))
        x.accumulate_grad(dy[sl])

    return Tensor._from_op(out_data, [x], backward_fn)


def crop_spatial(x, starts, extents):
    """Crop the trailing three axes; adjoint zero-pads back."""
    lead = x.data.ndim - 3
    sl = (slice(None),) * lead + tuple(
        slice(s, s + e) for s, e in zip(starts, extents))
    out_data = np.ascontiguousarray(x.data[sl])

    def backward_fn(dy):
        dx = np.zeros_like(x.data)
        dx[sl] = dy
        x.accumulate_grad(dx)

    return Tensor._from_op(out_data, [x], backward_fn)


def he_uniform_kernel(rng, shape, dtype=np.float32):
    """Fan-in-scaled uniform init for conv kernels (ReLU gain)."""
    fan_in = int(np.prod(shape[1:]))
    bound = float(np.sqrt(6.0 / fan_in))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def make_conv_spec(rng, out_ch, in_ch, kernel, stride=(1, 1, 1), padding=(0, 0, 0),
                   dtype=np.float32, bias_channels=None):
    """Fresh trainable ConvSpec; ``bias_channels`` defaults to out_ch."""
    kshape = (out_ch, in_ch) + tuple(kernel)
    w = Tensor(he_uniform_kernel(rng, kshape, dtype), requires_grad=True)
    nb = out_ch if bias_channels is None else bias_channels
    b = Tensor(np.zeros(nb, dtype=dtype), requires_grad=True)
    return ConvSpec(kernel=w, bias=b, stride=tuple(stride), padding=tuple(padding))
