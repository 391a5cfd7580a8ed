"""Weighted empirical measures on R^n.

An ensemble is a cloud of points with nonnegative weights.  Weights are kept
unnormalized so the same object can carry an unnormalized filter (total mass
other than one) and, after :meth:`WeightedEnsemble.normalized`, a probability
measure.
"""
from dataclasses import dataclass
from functools import cached_property
from itertools import permutations

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp


class EvaluationError(ValueError):
    """A test function returned a non-finite value at some particle."""


class WassersteinError(ValueError):
    pass


class WeightedEnsemble:
    """Points ``(N, n)`` with nonnegative weights ``(N,)``."""

    __slots__ = ("points", "weights", "__dict__")

    def __init__(self, points, weights=None):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("ensemble needs a nonempty (N, n) array of points")
        if not np.all(np.isfinite(pts)):
            raise ValueError("ensemble points must be finite")
        if weights is None:
            w = np.ones(pts.shape[0])
        else:
            w = np.asarray(weights, dtype=np.float64).reshape(-1)
            if w.shape[0] != pts.shape[0]:
                raise ValueError(f"{w.shape[0]} weights for {pts.shape[0]} points")
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ValueError("weights must be finite and nonnegative")
        pts.setflags(write=False)
        w.setflags(write=False)
        self.points = pts
        self.weights = w

    @property
    def dim(self):
        return self.points.shape[1]

    @property
    def size(self):
        return self.points.shape[0]

    def __len__(self):
        return self.size

    @cached_property
    def total_mass(self):
        return float(np.sum(self.weights))

    @cached_property
    def probabilities(self):
        m = self.total_mass
        if not m > 0:
            raise ValueError("ensemble has zero total mass")
        return self.weights / m

    def normalized(self):
        return WeightedEnsemble(self.points, self.probabilities)

    @cached_property
    def mean(self):
        """Normalized mean vector, cached (coefficients query it per block)."""
        return self.probabilities @ self.points

    @cached_property
    def second_moment(self):
        return float(self.probabilities @ np.sum(self.points ** 2, axis=1))

    def pushforward(self, shift):
        """Return the ensemble with points moved to ``x + shift(x)``."""
        return WeightedEnsemble(self.points + np.asarray(shift, dtype=np.float64)
                                .reshape(self.points.shape), self.weights)

    def __repr__(self):
        return f"{type(self).__name__}(size={self.size}, dim={self.dim}, mass={self.total_mass:g})"


class Ensemble(WeightedEnsemble):
    """Uniformly weighted ensemble; the empirical proxy for a law in P_2."""

    __slots__ = ()

    def __init__(self, points):
        super().__init__(points, None)

    @cached_property
    def probabilities(self):
        return np.full(self.size, 1.0 / self.size)

    @cached_property
    def mean(self):
        return np.mean(self.points, axis=0)


def _values(ens, f):
    vals = np.asarray(f(ens.points), dtype=np.float64).reshape(-1)
    if vals.shape[0] != ens.size:
        raise EvaluationError(f"function returned {vals.shape[0]} values for {ens.size} particles")
    bad = np.flatnonzero(~np.isfinite(vals))
    if bad.size:
        raise EvaluationError(f"non-finite value {vals[bad[0]]} at particle {bad[0]}")
    return vals


def integrate(ens, f, normalized=True):
    """Integrate ``f`` against the ensemble.

    ``f`` maps an ``(N, n)`` array of points to ``N`` values.  The normalized
    variant returns ``sum w f / sum w``; the raw variant ``sum w f``.
    """
    vals = _values(ens, f)
    if normalized:
        return float(ens.probabilities @ vals)
    return float(ens.weights @ vals)


def second_moment(ens):
    return ens.second_moment


@dataclass(frozen=True)
class W2Result:
    value: float
    exact: bool
    method: str
    regularization: float = 0.0

    def __float__(self):
        return self.value


def _as_ensemble(a):
    if isinstance(a, WeightedEnsemble):
        return a
    return Ensemble(a)


def _quantile_w2(a, b):
    ia = np.argsort(a.points[:, 0], kind="stable")
    ib = np.argsort(b.points[:, 0], kind="stable")
    xa, xb = a.points[ia, 0], b.points[ib, 0]
    ca = np.cumsum(a.probabilities[ia])
    cb = np.cumsum(b.probabilities[ib])
    ca[-1] = cb[-1] = 1.0
    cuts = np.union1d(ca, cb)
    lo = np.concatenate(([0.0], cuts[:-1]))
    width = cuts - lo
    keep = width > 0
    mid = 0.5 * (lo + cuts)[keep]
    qa = xa[np.minimum(np.searchsorted(ca, mid), xa.size - 1)]
    qb = xb[np.minimum(np.searchsorted(cb, mid), xb.size - 1)]
    return float(np.sqrt(max(np.sum(width[keep] * (qa - qb) ** 2), 0.0)))


def _cost_matrix(a, b):
    diff = a.points[:, None, :] - b.points[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _is_uniform(e):
    return np.all(e.weights == e.weights[0])


def _exact_w2(a, b):
    C = _cost_matrix(a, b)
    if a.size == b.size and _is_uniform(a) and _is_uniform(b):
        r, c = linear_sum_assignment(C)
        return float(np.sqrt(max(C[r, c].mean(), 0.0))), "assignment"
    na, nb = a.size, b.size
    A_eq = np.zeros((na + nb, na * nb))
    for i in range(na):
        A_eq[i, i * nb:(i + 1) * nb] = 1.0
    for j in range(nb):
        A_eq[na + j, j::nb] = 1.0
    b_eq = np.concatenate((a.probabilities, b.probabilities))
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if not res.success:
        raise WassersteinError(f"transport LP failed: {res.message}")
    return float(np.sqrt(max(res.fun, 0.0))), "linear-program"


def _entropic_w2(a, b, reg, iters=5000, tol=1e-10):
    C = _cost_matrix(a, b)
    if reg is None:
        reg = 1e-3 * float(C.mean())
    reg = max(reg, 1e-300)
    la, lb = np.log(a.probabilities), np.log(b.probabilities)
    f = np.zeros(a.size)
    g = np.zeros(b.size)
    for _ in range(iters):
        f_new = -reg * logsumexp((g[None, :] - C) / reg + lb[None, :], axis=1)
        g = -reg * logsumexp((f_new[:, None] - C) / reg + la[:, None], axis=0)
        if np.max(np.abs(f_new - f)) < tol * max(1.0, float(C.max())):
            f = f_new
            break
        f = f_new
    logP = (f[:, None] + g[None, :] - C) / reg + la[:, None] + lb[None, :]
    return float(np.sqrt(max(np.sum(np.exp(logP) * C), 0.0))), reg


def wasserstein2(a, b, cap=64, allow_approximate=False, reg=None):
    """2-Wasserstein distance between two (weighted) ensembles.

    Exact in one dimension (quantile coupling) and for ``n > 1`` when both
    sides have at most ``cap`` particles (assignment for equal-size uniform
    clouds, transport LP otherwise).  Larger problems need
    ``allow_approximate=True`` and use log-domain Sinkhorn with regularization
    ``reg`` (default ``1e-3`` times the mean squared pairwise distance).
    """
    a, b = _as_ensemble(a), _as_ensemble(b)
    if a.dim != b.dim:
        raise WassersteinError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.dim == 1:
        return W2Result(_quantile_w2(a, b), True, "quantile")
    if a.size <= cap and b.size <= cap:
        value, method = _exact_w2(a, b)
        return W2Result(value, True, method)
    if not allow_approximate:
        raise WassersteinError(
            f"{a.size}x{b.size} particles exceed the exact cap {cap}; pass allow_approximate=True")
    value, used = _entropic_w2(a, b, reg)
    return W2Result(value, False, "sinkhorn", used)


def brute_force_w2(a, b):
    """W2 between equal-size uniform ensembles by enumerating all pairings."""
    a, b = _as_ensemble(a), _as_ensemble(b)
    if a.size != b.size:
        raise ValueError("brute force needs equal sizes")
    C = _cost_matrix(a, b)
    idx = np.arange(a.size)
    best = min(C[idx, list(p)].sum() for p in permutations(range(a.size)))
    return float(np.sqrt(best / a.size))
