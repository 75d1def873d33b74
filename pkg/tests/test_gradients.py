"""Finite-difference validation of every differentiable op, both backends."""

import numpy as np
import pytest

from voxseg.engine import backend, Tensor, softmax_channels, weighted_sum

import gradcheck

OPS = sorted(gradcheck.CASE_MAKERS)


@pytest.mark.parametrize("op", OPS)
@pytest.mark.parametrize("bk", backend.available_backends())
def test_gradients_match_finite_differences(op, bk):
    with backend.use_backend(bk):
        worst = gradcheck.run_op_checks(op, n_cases=5, seed=42)
    assert worst < 1e-7, f"{op} on {bk}: rel err {worst:.3e}"


def test_softmax_alone_gradient():
    worst = gradcheck.run_op_checks("softmax_cce", 3, seed=1)
    assert worst < 1e-7
    # and the bare softmax path (not through the fused loss)
    rng = np.random.default_rng(2)
    build, arrays = gradcheck.softmax_case(rng)
    assert gradcheck._check(build, arrays) < 1e-7


def test_single_precision_tolerance():
    # the engine trains in float32; gradients must still track FD at 1e-4
    rng = np.random.default_rng(3)
    build, arrays = gradcheck.conv3d_case(rng)
    arrays32 = [a.astype(np.float32) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays32]
    build(*tensors).backward()
    # FD in double against the float32 analytic gradients
    from voxseg.engine import no_grad
    from oracles import fd_grad, rel_err
    for i, a in enumerate(arrays32):
        def f(v):
            args = [Tensor(x.astype(np.float64).copy()) for x in arrays32]
            args[i] = Tensor(v)
            with no_grad():
                return float(build(*args).data)
        assert rel_err(tensors[i].grad, fd_grad(f, a.astype(np.float64))) < 1e-4


def test_deep_composition_gradient():
    """A conv -> relu -> pool -> conv stack, checked end to end."""
    from voxseg.engine import ConvSpec, conv3d, max_pool3d, relu, no_grad
    from oracles import fd_grad, rel_err

    rng = np.random.default_rng(4)
    x = rng.standard_normal((1, 8, 8, 8))
    w1 = rng.standard_normal((2, 1, 3, 3, 3))
    b1 = rng.standard_normal(2)
    w2 = rng.standard_normal((3, 2, 2, 2, 2))
    b2 = rng.standard_normal(3)
    wt = None

    def build(xt, w1t, b1t, w2t, b2t):
        h = relu(conv3d(xt, ConvSpec(w1t, b1t, (1, 1, 1), (1, 1, 1))))
        h = max_pool3d(h, (2, 2, 2), (2, 2, 2))
        h = conv3d(h, ConvSpec(w2t, b2t, (1, 1, 1), (0, 0, 0)))
        return weighted_sum(h, wt)

    probe_args = [Tensor(a) for a in (x, w1, b1, w2, b2)]
    with no_grad():
        h = relu(conv3d(probe_args[0], ConvSpec(probe_args[1], probe_args[2], (1, 1, 1), (1, 1, 1))))
        h = max_pool3d(h, (2, 2, 2), (2, 2, 2))
        h = conv3d(h, ConvSpec(probe_args[3], probe_args[4], (1, 1, 1), (0, 0, 0)))
    wt = rng.standard_normal(h.data.shape)

    arrays = [x, w1, b1, w2, b2]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    build(*tensors).backward()
    for i, a in enumerate(arrays):
        def f(v):
            args = [Tensor(arr.copy()) for arr in arrays]
            args[i] = Tensor(v)
            with no_grad():
                return float(build(*args).data)
        assert rel_err(tensors[i].grad, fd_grad(f, a)) < 1e-7
