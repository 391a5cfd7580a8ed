"""Pure numpy implementations of the hot kernels.

These mirror ``_kernels.pyx`` one for one and are used whenever the compiled
extension is missing or ``MVFILTER_BACKEND=python`` is set.  Integer outputs
agree bit for bit with the compiled kernels; floating outputs agree to a few
ulps (libm versus numpy transcendental functions).
"""
import numpy as np

_MASK = np.uint64(0xFFFFFFFF)
_M0 = np.uint64(0xD2511F53)
_M1 = np.uint64(0xCD9E8D57)
_W0 = np.uint64(0x9E3779B9)
_W1 = np.uint64(0xBB67AE85)
_SHIFT = np.uint64(32)
_TWO_M53 = 2.0 ** -53
_TWO_PI = 2.0 * np.pi


def _rounds(c0, c1, c2, c3, k0, k1):
    for r in range(10):
        if r:
            k0 = (k0 + _W0) & _MASK
            k1 = (k1 + _W1) & _MASK
        p0 = _M0 * c0
        p1 = _M1 * c2
        c0, c1, c2, c3 = ((p1 >> _SHIFT) ^ c1 ^ k0, p1 & _MASK,
                          (p0 >> _SHIFT) ^ c3 ^ k1, p0 & _MASK)
    return c0, c1, c2, c3


def philox4x32(k0, k1, c0, c1, c2, c3):
    """Philox4x32-10 block function on equal-length uint32 arrays.

    Returns an ``(M, 4)`` uint32 array.
    """
    words = _rounds(*(np.asarray(w, dtype=np.uint64) for w in (c0, c1, c2, c3, k0, k1)))
    return np.stack(words, axis=-1).astype(np.uint32)


def _unit(hi, lo):
    # 53-bit uniform strictly inside (0, 1)
    return ((hi >> np.uint64(5)).astype(np.float64) * 67108864.0
            + (lo >> np.uint64(6)).astype(np.float64) + 0.5) * _TWO_M53


def normals(k0, k1, c0, c1, c2, ncomp):
    """Standard normals, ``ncomp`` per counter triple, via Box-Muller.

    Component ``j`` uses the fourth counter word ``j // 2`` and takes the
    cosine branch for even ``j`` and the sine branch for odd ``j``.
    """
    k0, k1, c0, c1, c2 = (np.asarray(w, dtype=np.uint64) for w in (k0, k1, c0, c1, c2))
    out = np.empty((c0.shape[0], ncomp), dtype=np.float64)
    for j in range(0, ncomp, 2):
        c3 = np.full_like(c0, j // 2)
        x0, x1, x2, x3 = _rounds(c0, c1, c2, c3, k0, k1)
        u = _unit(x0, x1)
        v = _unit(x2, x3)
        r = np.sqrt(-2.0 * np.log(u))
        out[:, j] = r * np.cos(_TWO_PI * v)
        if j + 1 < ncomp:
            out[:, j + 1] = r * np.sin(_TWO_PI * v)
    return out


def uniforms(k0, k1, c0, c1, c2):
    k0, k1, c0, c1, c2 = (np.asarray(w, dtype=np.uint64) for w in (k0, k1, c0, c1, c2))
    x0, x1, _, _ = _rounds(c0, c1, c2, np.zeros_like(c0), k0, k1)
    return _unit(x0, x1)


def logsumexp_rows(a):
    """Row-wise log-sum-exp of a C-contiguous 2-d float64 array."""
    a = np.asarray(a, dtype=np.float64)
    m = np.max(a, axis=1)
    shift = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return shift + np.log(np.sum(np.exp(a - shift[:, None]), axis=1))
