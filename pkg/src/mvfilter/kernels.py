"""Kernel backend selection.

The compiled Cython kernels are used when importable; otherwise, or when the
environment variable ``MVFILTER_BACKEND=python`` is set, the numpy fallback is
used.  ``BACKEND`` names the active implementation.
"""
import os

import numpy as np

from . import _kernels_py

_requested = os.environ.get("MVFILTER_BACKEND", "").strip().lower()

if _requested == "python":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        if _requested == "cython":
            raise
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "cython"


def backend_module(name=None):
    """Return the kernel module for ``name`` ('cython' or 'python'), default active."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels
        return _kernels
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        from . import _kernels  # noqa: F401
        names.insert(0, "cython")
    except ImportError:
        pass
    return names


def _words(*arrays):
    out = np.broadcast_arrays(*(np.asarray(a, dtype=np.uint32) for a in arrays))
    return [np.ascontiguousarray(w.ravel()) for w in out]


def philox4x32(key, counter, backend=None):
    """Philox4x32-10 block function.

    Parameters
    ----------
    key : array_like, shape (..., 2)
    counter : array_like, shape (..., 4)

    Returns
    -------
    ndarray of uint32, shape (M, 4) with M the broadcast batch size.
    """
    key = np.asarray(key, dtype=np.uint32)
    counter = np.asarray(counter, dtype=np.uint32)
    words = _words(key[..., 0], key[..., 1], counter[..., 0], counter[..., 1],
                   counter[..., 2], counter[..., 3])
    return backend_module(backend).philox4x32(*words)


def normals(k0, k1, c0, c1, c2, ncomp, backend=None):
    return backend_module(backend).normals(*_words(k0, k1, c0, c1, c2), int(ncomp))


def uniforms(k0, k1, c0, c1, c2, backend=None):
    return backend_module(backend).uniforms(*_words(k0, k1, c0, c1, c2))


def logsumexp_rows(a, backend=None):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim == 1:
        return backend_module(backend).logsumexp_rows(a[None, :])[0]
    return backend_module(backend).logsumexp_rows(a)
