"""Finite-difference gradient checking shared by the unit and acceptance suites.

Each case builds a scalar loss from one op.  Outputs are folded to a scalar
through a fixed random weighting so that element-permutation bugs cannot
cancel out the way they would under a plain sum.
"""

import numpy as np

from voxseg.engine import (
    Tensor,
    ConvSpec,
    conv3d,
    conv3d_transpose,
    max_pool3d,
    relu,
    softmax_channels,
    categorical_cross_entropy,
    weighted_sum,
    no_grad,
)

from oracles import fd_grad, rel_err


def _check(build, arrays, eps=1e-5):
    """Max relative error between backward() and central differences.

    ``build(*tensors)`` must return a scalar Tensor. Gradients are checked
    with respect to every entry of ``arrays`` (all float64).
    """
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(*tensors).backward()
    worst = 0.0
    for i, a in enumerate(arrays):
        def f(v):
            args = [Tensor(x.copy()) for x in arrays]
            args[i] = Tensor(v)
            with no_grad():
                return float(build(*args).data)

        worst = max(worst, rel_err(tensors[i].grad, fd_grad(f, a, eps)))
    return worst


def _rand_conv_geometry(rng, transpose=False):
    k = tuple(int(v) for v in rng.integers(1, 4, size=3))
    s = tuple(int(v) for v in rng.integers(1, 3, size=3))
    p = tuple(int(min(int(v), (kk - 1) // 2)) for v, kk in zip(rng.integers(0, 2, size=3), k))
    if transpose:
        e = tuple(int(v) for v in rng.integers(2, 5, size=3))
    else:
        e = tuple(int(rng.integers(kk + pp, kk + pp + 4)) for kk, pp in zip(k, p))
    return k, s, p, e


def conv3d_case(rng):
    k, s, p, e = _rand_conv_geometry(rng)
    ci, co = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    x = rng.standard_normal((ci, *e))
    w = rng.standard_normal((co, ci, *k))
    b = rng.standard_normal(co)

    probe = conv3d(Tensor(x), ConvSpec(Tensor(w), Tensor(b), s, p))
    wt = rng.standard_normal(probe.data.shape)

    def build(xt, wt_, bt):
        return weighted_sum(conv3d(xt, ConvSpec(wt_, bt, s, p)), wt)

    return build, [x, w, b]


def conv3d_transpose_case(rng):
    k, s, p, e = _rand_conv_geometry(rng, transpose=True)
    ci, co = int(rng.integers(1, 3)), int(rng.integers(1, 3))
    x = rng.standard_normal((co, *e))
    w = rng.standard_normal((co, ci, *k))
    b = rng.standard_normal(ci)

    probe = conv3d_transpose(Tensor(x), ConvSpec(Tensor(w), Tensor(b), s, p))
    wt = rng.standard_normal(probe.data.shape)

    def build(xt, wt_, bt):
        return weighted_sum(conv3d_transpose(xt, ConvSpec(wt_, bt, s, p)), wt)

    return build, [x, w, b]


def max_pool3d_case(rng):
    ci = int(rng.integers(1, 3))
    kw = tuple(int(v) for v in rng.integers(1, 4, size=3))
    s = tuple(int(v) for v in rng.integers(1, 3, size=3))
    e = tuple(int(rng.integers(kk, kk + 5)) for kk in kw)
    x = rng.standard_normal((ci, *e))

    probe = max_pool3d(Tensor(x), kw, s)
    wt = rng.standard_normal(probe.data.shape)

    def build(xt):
        return weighted_sum(max_pool3d(xt, kw, s), wt)

    return build, [x]


def relu_case(rng):
    shape = tuple(int(v) for v in rng.integers(2, 6, size=4))
    x = rng.standard_normal(shape)
    # keep values away from the kink so finite differences stay valid
    x += np.sign(x) * 0.05
    wt = rng.standard_normal(shape)

    def build(xt):
        return weighted_sum(relu(xt), wt)

    return build, [x]


def softmax_cce_case(rng):
    c = int(rng.integers(2, 9))
    e = tuple(int(v) for v in rng.integers(2, 5, size=3))
    x = rng.standard_normal((c, *e)) * 2.0
    labels = rng.integers(0, c, size=e)

    def build(xt):
        return categorical_cross_entropy(xt, labels)

    return build, [x]


def softmax_case(rng):
    c = int(rng.integers(2, 9))
    e = tuple(int(v) for v in rng.integers(2, 5, size=3))
    x = rng.standard_normal((c, *e)) * 2.0
    wt = rng.standard_normal((c, *e))

    def build(xt):
        return weighted_sum(softmax_channels(xt), wt)

    return build, [x]


CASE_MAKERS = {
    "conv3d": conv3d_case,
    "conv3d_transpose": conv3d_transpose_case,
    "max_pool3d": max_pool3d_case,
    "relu": relu_case,
    "softmax_cce": softmax_cce_case,
}


def run_op_checks(op_name, n_cases, seed=0, eps=1e-5):
    """Run ``n_cases`` random gradient checks for one op; return worst rel error."""
    rng = np.random.default_rng(seed)
    maker = CASE_MAKERS[op_name]
    worst = 0.0
    for _ in range(n_cases):
        build, arrays = maker(rng)
        worst = max(worst, _check(build, arrays, eps))
    return worst
