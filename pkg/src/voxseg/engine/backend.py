"""Kernel backend selection.

Two interchangeable implementations of the hot loops exist:

* ``cython`` — compiled extension, fixed sequential accumulation order,
  bit-reproducible across runs and machines. Default when built.
* ``numpy``  — BLAS-backed fallback and opt-in fast mode; reductions may be
  reordered by the BLAS, so cross-machine bitwise reproducibility is waived.

The initial backend is chosen at import: the compiled module if it built,
else numpy. Override with ``VOXSEG_KERNELS=numpy|cython`` or at runtime via
:func:`set_backend` / :func:`use_backend`.
"""

import contextlib
import os

from . import _kernels_np

_BACKENDS = {"numpy": _kernels_np}

try:  # pragma: no cover - depends on the build environment
    from . import _kernels_cy

    _BACKENDS["cython"] = _kernels_cy
    _default = "cython"
except ImportError:  # pragma: no cover
    _default = "numpy"

_active = os.environ.get("VOXSEG_KERNELS", _default)
if _active not in _BACKENDS:
    _active = _default


def available_backends():
    return sorted(_BACKENDS)


def backend_name():
    return _active


def set_backend(name):
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; have {available_backends()}")
    _active = name


def kernels():
    """The active kernel module."""
    return _BACKENDS[_active]


@contextlib.contextmanager
def use_backend(name):
    prev = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)
