"""Counter-based random streams.

Every Gaussian increment is a pure function of ``(seed, role, step, index,
component)``: the seed is the Philox key and the remaining coordinates form the
counter.  Any particle's noise can therefore be regenerated in isolation and
the result never depends on evaluation order or thread count.
"""
import numpy as np

from . import kernels

ROLE_SIGNAL = 1
ROLE_OBSERVATION = 2
ROLE_FILTER = 3
ROLE_RESAMPLE = 4
ROLE_SAMPLING = 5

_MAX_SEED = 2 ** 64


def seed_key(seed):
    """Split a 64-bit seed into the two Philox key words."""
    seed = int(seed)
    if not 0 <= seed < _MAX_SEED:
        raise ValueError(f"seed must lie in [0, 2**64), got {seed}")
    return np.uint32(seed & 0xFFFFFFFF), np.uint32(seed >> 32)


def normals(seed, role, step, index, dim):
    """Standard normal draws of shape ``(len(index), dim)``.

    ``seed`` may be a scalar or an array aligned with ``index`` (one key per
    row); ``step`` is a scalar or aligned array.
    """
    index = np.atleast_1d(np.asarray(index))
    if np.ndim(seed) == 0:
        k0, k1 = seed_key(seed)
    else:
        seeds = np.asarray(seed, dtype=np.uint64)
        k0 = (seeds & np.uint64(0xFFFFFFFF)).astype(np.uint32)
        k1 = (seeds >> np.uint64(32)).astype(np.uint32)
    return kernels.normals(k0, k1, index, step, role, dim).reshape(index.shape[0], dim)


def uniforms(seed, role, step, index):
    index = np.atleast_1d(np.asarray(index))
    k0, k1 = seed_key(seed)
    return kernels.uniforms(k0, k1, index, step, role)
