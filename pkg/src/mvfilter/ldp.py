"""Noise-free controlled skeletons, rate-function estimation and a Laplace decay check.

The skeleton Zakai equation is solved through its Feynman-Kac representation
on the prior particle cloud: each particle carries the deterministic
log-weight ``l_k = sum_{j<k} h(t_j, X_j, mu_j) . psi_j dt`` and
``P^{0,psi}(F) = (1/N) sum_i exp(l_i) F(X_i, mu)``.  The skeleton KS solution
is its normalization.
"""
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from . import rng
from .filtering import ResidualStats, signal_martingale
from .lions import GeneratorContext, as_family, resolve_family
from .simulate import block_runner


class SkeletonError(ValueError):
    pass


class TargetError(ValueError):
    pass


# ---------------------------------------------------------------------------
# controls

@dataclass(frozen=True)
class ControlPath:
    """Piecewise-constant control, one value ``psi_k`` in R^m per grid step."""
    grid: object
    values: np.ndarray
    declared_norm_bound: Optional[float] = None

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] != self.grid.steps:
            raise ValueError(f"control has {v.shape[0]} steps, grid has {self.grid.steps}")
        if not np.all(np.isfinite(v)):
            raise ValueError("control values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        if self.declared_norm_bound is not None and self.norm_sq > self.declared_norm_bound:
            raise ValueError(f"squared norm {self.norm_sq:.6g} exceeds declared bound "
                             f"{self.declared_norm_bound:.6g}")

    @property
    def m(self):
        return self.values.shape[1]

    @property
    def norm_sq(self):
        return float(np.sum(self.values ** 2) * self.grid.dt)

    @property
    def cost(self):
        return 0.5 * self.norm_sq

    def scaled(self, a):
        return ControlPath(self.grid, a * self.values)

    @classmethod
    def constant(cls, grid, value, m=1):
        value = np.broadcast_to(np.asarray(value, dtype=np.float64), (m,))
        return cls(grid, np.tile(value, (grid.steps, 1)))

    @classmethod
    def from_pieces(cls, grid, pieces):
        """Spread ``(P, m)`` piece values evenly over the grid steps."""
        pieces = np.asarray(pieces, dtype=np.float64)
        if pieces.ndim == 1:
            pieces = pieces[:, None]
        return cls(grid, pieces[piece_index(grid.steps, pieces.shape[0])])


def cost(psi):
    return psi.cost


def piece_index(steps, n_pieces):
    return (np.arange(steps) * n_pieces) // steps


def control_preset(name, grid, m=1):
    """Named controls: ``zero``, ``one``, ``sine`` (``sin(2 pi t / T)``), ``ramp`` (``t / T``)."""
    t = grid.times[:-1] / grid.T
    if name == "zero":
        v = np.zeros(grid.steps)
    elif name == "one":
        v = np.ones(grid.steps)
    elif name == "sine":
        v = np.sin(2 * np.pi * t)
    elif name == "ramp":
        v = t
    else:
        raise ValueError(f"unknown control preset {name!r}")
    return ControlPath(grid, np.repeat(v[:, None], m, axis=1))


# ---------------------------------------------------------------------------
# skeleton solves

@dataclass
class SkeletonPath:
    grid: object
    names: tuple
    log_weights: np.ndarray         # (steps + 1, N)
    unnormalized: dict              # name -> P^{0,psi}(F)
    mass: np.ndarray                # P^{0,psi}(1)
    normalized: dict                # name -> pi^{0,psi}(F)
    log_M: np.ndarray               # exact-step M^psi track
    log_M_riemann: np.ndarray       # left Riemann sum of pi[h] . psi dt

    @property
    def M(self):
        return np.exp(self.log_M)

    def identity_gap(self):
        """Largest ``|pi(F) M - P(F)| / P(1)`` over steps and test functions."""
        M, mass = self.M, self.mass
        return float(max(np.max(np.abs(self.normalized[nm] * M - self.unnormalized[nm]) / mass)
                         for nm in self.names))


class SkeletonProblem:
    """Signal cloud with ``h`` and test-function values cached, reused across controls."""

    def __init__(self, coeffs, signal, family):
        self.coeffs = coeffs
        self.signal = signal
        self.family = as_family(family)
        self.names = tuple(self.family)
        grid = signal.grid
        K, N = grid.steps, signal.N
        self.H = np.empty((K + 1, N, coeffs.m))
        self.values = np.empty((len(self.names), K + 1, N))
        for k in range(K + 1):
            mu = signal.ensemble(k)
            self.H[k] = coeffs.h(grid.times[k], mu.points, mu)
            for i, F in enumerate(self.family.values()):
                self.values[i, k] = F.value(mu.points, mu)
        self.H.setflags(write=False)
        self.values.setflags(write=False)

    @property
    def grid(self):
        return self.signal.grid

    def _check(self, psi):
        if psi.grid != self.grid:
            raise SkeletonError(f"grid mismatch: control {psi.grid} vs signal {self.grid}")
        if psi.m != self.coeffs.m:
            raise SkeletonError(f"control has dimension {psi.m}, observation has {self.coeffs.m}")

    def log_weights(self, psi):
        self._check(psi)
        K, N = self.grid.steps, self.signal.N
        inc = np.einsum("knj,kj->kn", self.H[:K], psi.values) * self.grid.dt
        lw = np.zeros((K + 1, N))
        np.cumsum(inc, axis=0, out=lw[1:])
        return lw

    def normalized_only(self, psi):
        """``pi^{0,psi}(F)`` as an ``(n_F, steps + 1)`` array; the optimizer's inner loop."""
        lw = self.log_weights(psi)
        w = np.exp(lw - lw.max(axis=1, keepdims=True))
        return np.sum(w[None] * self.values, axis=2) / np.sum(w, axis=1)[None]

    def solve(self, psi):
        lw = self.log_weights(psi)
        K, N = self.grid.steps, self.signal.N
        shift = lw.max(axis=1)
        w = np.exp(lw - shift[:, None])
        s = np.sum(w, axis=1)
        scale = np.exp(shift) / N
        sums = np.sum(w[None] * self.values, axis=2)
        unnorm = {nm: scale * sums[i] for i, nm in enumerate(self.names)}
        norm = {nm: sums[i] / s for i, nm in enumerate(self.names)}
        mass = scale * s
        p = w / s[:, None]
        # M^psi over one step: the exact factor sum_i p_i exp(h_i . psi dt)
        hpsi = np.einsum("knj,kj->kn", self.H[:K], psi.values) * self.grid.dt
        step_log = np.log(np.sum(p[:K] * np.exp(hpsi), axis=1))
        log_M = np.concatenate(([0.0], np.cumsum(step_log)))
        pih = np.einsum("kn,knj->kj", p[:K], self.H[:K])
        log_M_r = np.concatenate(([0.0], np.cumsum(np.sum(pih * psi.values, axis=1)
                                                  * self.grid.dt)))
        lw.setflags(write=False)
        return SkeletonPath(self.grid, self.names, lw, unnorm, mass, norm, log_M, log_M_r)


def solve_skeleton_zakai(coeffs, signal, psi, family):
    """Feynman-Kac solution ``P^{0,psi}`` of the noise-free controlled Zakai equation."""
    return SkeletonProblem(coeffs, signal, family).solve(psi)


def solve_skeleton_ks(coeffs, signal, psi, family):
    """``pi^{0,psi} = P^{0,psi} / P^{0,psi}(1)`` together with the ``M^psi`` track.

    The returned :class:`SkeletonPath` is the same object type as for the
    Zakai solve; ``normalized`` holds the KS solution.
    """
    return SkeletonProblem(coeffs, signal, family).solve(psi)


# ---------------------------------------------------------------------------
# skeleton residuals

def _skeleton_terms(coeffs, signal, F, k):
    mu = signal.ensemble(k)
    t = signal.grid.times[k]
    LF = GeneratorContext(coeffs, t, mu).apply(F).value
    return mu, F.value(mu.points, mu), LF, coeffs.h(t, mu.points, mu)


def zakai_skeleton_residual(skeleton, coeffs, signal, psi, F, compensate=True):
    """Telescoping defect of the controlled noise-free Zakai equation.

    ``r_k = P_{k+1}(F) - P_k(F) - P_k(LF) dt - P_k(F h^j) psi^j_k dt``.  With
    ``compensate`` (default) the signal-noise martingale increment of the
    particle cloud is subtracted: the skeleton has no noise, so what remains is
    the discretization defect, which is first order in ``dt``.
    """
    K, dt = signal.grid.steps, signal.grid.dt
    r = np.empty(K)
    lw = skeleton.log_weights
    prev = None
    for k in range(K):
        mu, Fv, LF, H = _skeleton_terms(coeffs, signal, F, k)
        w = np.exp(lw[k])
        Pk = float(np.mean(w * Fv)) if prev is None else prev
        mu1 = signal.ensemble(k + 1)
        prev = float(np.mean(np.exp(lw[k + 1]) * F.value(mu1.points, mu1)))
        drive = float(np.mean(w[:, None] * Fv[:, None] * H, axis=0) @ psi.values[k]) * dt
        r[k] = prev - Pk - float(np.mean(w * LF)) * dt - drive
        if compensate:
            r[k] -= signal_martingale(F, signal, k, mu, w, coeffs)
    return ResidualStats(r)


def ks_skeleton_residual(skeleton, coeffs, signal, psi, F, compensate=True):
    """Telescoping defect of the noise-free KS equation.

    ``r_k = pi_{k+1}(F) - pi_k(F) - pi_k(LF) dt
    - [pi_k(F h^j) - pi_k(F) pi_k(h^j)] psi^j_k dt``; zero for ``F = 1``.
    """
    K, dt = signal.grid.steps, signal.grid.dt
    r = np.empty(K)
    lw = skeleton.log_weights

    def pi(w, s, v):
        return float(np.sum(w * v)) / s

    prev = None
    for k in range(K):
        mu, Fv, LF, H = _skeleton_terms(coeffs, signal, F, k)
        w = np.exp(lw[k] - lw[k].max())
        s = float(np.sum(w))
        piF = pi(w, s, Fv) if prev is None else prev
        w1 = np.exp(lw[k + 1] - lw[k + 1].max())
        mu1 = signal.ensemble(k + 1)
        prev = pi(w1, float(np.sum(w1)), F.value(mu1.points, mu1))
        gain = np.array([pi(w, s, Fv * H[:, j]) - piF * pi(w, s, H[:, j])
                         for j in range(H.shape[1])])
        r[k] = prev - piF - pi(w, s, LF) * dt - float(gain @ psi.values[k]) * dt
        if compensate:
            r[k] -= signal_martingale(F, signal, k, mu, w / s * mu.size, coeffs)
    return ResidualStats(r)


def mass_residual(skeleton, problem, psi):
    """Defect of ``P(1)_t = 1 + int P_s(h . psi) ds`` per step (no signal noise enters)."""
    K, dt = problem.grid.steps, problem.grid.dt
    w = np.exp(skeleton.log_weights[:K])
    drive = np.einsum("kn,knj,kj->k", w, problem.H[:K], psi.values) / problem.signal.N * dt
    return ResidualStats(np.diff(skeleton.mass) - drive)


# ---------------------------------------------------------------------------
# contraction identity

@dataclass
class ContractionReport:
    max_gap: float
    shuffled_gap: float

    @property
    def passed(self):
        return self.max_gap <= 1e-10 and self.shuffled_gap <= 1e-8

    def to_dict(self):
        return {"max_gap": self.max_gap, "shuffled_gap": self.shuffled_gap, "passed": self.passed}


def contraction_check(coeffs, signal, psi, family, shuffle_seed=0):
    """Normalizing the skeleton Zakai solution reproduces the skeleton KS solution.

    Also recomputes the KS solution on a relabelled particle cloud to bound
    reduction-order effects.
    """
    zk = solve_skeleton_zakai(coeffs, signal, psi, family)
    ks = solve_skeleton_ks(coeffs, signal, psi, family)
    gap = max(float(np.max(np.abs(zk.unnormalized[nm] / zk.mass - ks.normalized[nm])))
              for nm in zk.names)
    order = np.random.default_rng(shuffle_seed).permutation(signal.N)
    ks2 = solve_skeleton_ks(coeffs, signal.permuted(order), psi, family)
    sgap = max(float(np.max(np.abs(ks2.normalized[nm] - ks.normalized[nm]))) for nm in ks.names)
    return ContractionReport(gap, sgap)


# ---------------------------------------------------------------------------
# rate estimation

@dataclass
class OptimizerConfig:
    n_pieces: int = 10
    lambdas: tuple = (1e1, 1e2, 1e3, 1e4, 1e5, 1e6)
    max_iter: int = 60
    fd_step: float = 1e-4
    threads: int = 1


@dataclass
class RateEstimate:
    target: str
    psi: ControlPath
    cost: float
    matching_error: dict
    tol: float
    feasible: bool
    trace: list = field(default_factory=list)

    @property
    def max_matching_error(self):
        return max(self.matching_error.values())

    def to_dict(self):
        return {"target": self.target, "cost": self.cost, "tol": self.tol,
                "feasible": self.feasible, "matching_error": self.matching_error,
                "max_matching_error": self.max_matching_error,
                "control": self.psi.values.tolist(), "trace": self.trace}


def validate_target(problem, target):
    """Arrays per registered test function on the full grid, normalized, and started right."""
    K = problem.grid.steps
    out = {}
    for nm, v in target.items():
        if nm not in problem.names:
            raise TargetError(f"target test function {nm!r} is not in the family {problem.names}")
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        if v.shape[0] != K + 1:
            raise TargetError(f"target {nm!r} has {v.shape[0]} points, grid has {K + 1}")
        if not np.all(np.isfinite(v)):
            raise TargetError(f"target {nm!r} has non-finite values")
        out[nm] = v
    if not out:
        raise TargetError("empty target")
    F = problem.family
    for nm, v in out.items():
        if F[nm].g0.label == "1" and not F[nm].psis and np.max(np.abs(v - 1.0)) > 1e-12:
            raise TargetError(f"target {nm!r} is the constant test function but pi(1) != 1; "
                              "normalized paths always have unit mass")
    prior0 = problem.normalized_only(ControlPath.constant(problem.grid, 0.0, problem.coeffs.m))
    for nm, v in out.items():
        i = problem.names.index(nm)
        if abs(v[0] - prior0[i, 0]) > 1e-9 * max(1.0, abs(v[0])):
            raise TargetError(f"target {nm!r} starts at {v[0]!r} but every skeleton starts at "
                              f"{prior0[i, 0]!r}")
    return out


def estimate_rate(coeffs, signal, target, tol, config=None, family=None, problem=None,
                  description="custom"):
    """Estimate ``I2(target) = 1/2 inf ||psi||^2`` over controls whose skeleton KS path hits it.

    Penalty continuation on ``J = cost + lam * sum_{t,F} (pi^{0,psi} - target)^2``
    over piecewise-constant controls, with L-BFGS-B on central finite-difference
    gradients for each ``lam``.  The full schedule is always run, and every
    objective evaluation is booked; the reported control is the cheapest one
    whose max abs matching error is within ``tol`` (earliest on ties).  If none
    qualifies, the closest match is returned with ``feasible=False``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    cfg = config or OptimizerConfig()
    if problem is None:
        if family is None:
            family = resolve_family(list(target), coeffs.n)
        problem = SkeletonProblem(coeffs, signal, family)
    tgt = validate_target(problem, target)
    grid, m = problem.grid, problem.coeffs.m
    P = min(int(cfg.n_pieces), grid.steps)
    idx = piece_index(grid.steps, P)
    rows = [problem.names.index(nm) for nm in tgt]
    T_arr = np.stack([tgt[nm] for nm in tgt])
    names = list(tgt)
    dt = grid.dt

    def control(theta):
        return ControlPath(grid, theta.reshape(P, m)[idx])

    def pieces_cost(theta):
        counts = np.bincount(idx, minlength=P) * dt
        return 0.5 * float(np.sum(counts[:, None] * theta.reshape(P, m) ** 2))

    def deviation(theta):
        return problem.normalized_only(control(theta))[rows] - T_arr

    book = []

    def J(theta, lam, record=True):
        dev = deviation(theta)
        c = pieces_cost(theta)
        if record:
            book.append((c, np.max(np.abs(dev), axis=1), theta.copy()))
        return c + lam * float(np.sum(dev * dev))

    def grad(theta, lam):
        hstep = cfg.fd_step
        e = np.eye(theta.size)

        def one(i):
            return (J(theta + hstep * e[i], lam, False) - J(theta - hstep * e[i], lam, False)) \
                / (2 * hstep)

        with block_runner(cfg.threads) as run:
            return np.array(run(one, range(theta.size)))

    theta = np.zeros(P * m)
    trace = []
    J(theta, 0.0)
    for lam in cfg.lambdas:
        res = minimize(J, theta, args=(lam,), jac=lambda th, lam=lam: grad(th, lam),
                       method="L-BFGS-B", options={"maxiter": cfg.max_iter})
        theta = res.x
        dev = deviation(theta)
        trace.append({"lambda": float(lam), "iterations": int(res.nit), "nfev": int(res.nfev),
                      "grad_norm": float(np.linalg.norm(res.jac)),
                      "cost": pieces_cost(theta),
                      "matching_error": float(np.max(np.abs(dev))),
                      "status": str(res.message)})
    best = None
    for i, (c, err, th) in enumerate(book):
        if np.max(err) <= tol and (best is None or c < book[best][0]):
            best = i
    feasible = best is not None
    if not feasible:
        best = min(range(len(book)), key=lambda i: (float(np.max(book[i][1])), i))
    c, err, th = book[best]
    psi = control(th)
    return RateEstimate(description, psi, psi.cost, {nm: float(e) for nm, e in zip(names, err)},
                        float(tol), feasible, trace)


# ---------------------------------------------------------------------------
# Laplace decay check

class PathFunctional:
    """Bounded functional of the normalized filter path over named test functions."""
    names = ()

    def __call__(self, paths):
        raise NotImplementedError


class ZeroFunctional(PathFunctional):
    def __call__(self, paths):
        R = next(iter(paths.values())).shape[0] if paths else 1
        return np.zeros(R)


class ConstantFunctional(PathFunctional):
    def __init__(self, c):
        self.c = float(c)

    def __call__(self, paths):
        R = next(iter(paths.values())).shape[0] if paths else 1
        return np.full(R, self.c)


class SquaredDeviation(PathFunctional):
    """``min(sum_F sum_k (pi_k(F) - ref_k(F))^2 dt, cap)`` against a reference path."""

    def __init__(self, reference, dt, cap=10.0):
        self.reference = {nm: np.asarray(v, dtype=np.float64) for nm, v in reference.items()}
        self.names = tuple(self.reference)
        self.dt = float(dt)
        self.cap = float(cap)

    def __call__(self, paths):
        total = 0.0
        for nm, ref in self.reference.items():
            p = np.atleast_2d(paths[nm])
            total = total + np.sum((p[:, :-1] - ref[None, :-1]) ** 2, axis=1) * self.dt
        return np.minimum(total, self.cap)


def reference_filter_paths(problem, epsilon, seed, streams, names):
    """Normalized filter paths for a batch of reference-measure observation streams.

    Under the reference measure ``sigma2^-1 dY`` is a standard Brownian motion,
    so stream ``r`` uses the observation noise ``(seed, stream r)`` directly.
    Returns ``name -> (R, steps + 1)``.
    """
    grid = problem.grid
    K, dt, m = grid.steps, grid.dt, problem.coeffs.m
    streams = np.asarray(streams, dtype=np.uint32)
    R, N = streams.size, problem.signal.N
    rows = [problem.names.index(nm) for nm in names]
    Fv = problem.values[rows]                       # (nF, K+1, N)
    H = problem.H
    h2 = np.sum(H * H, axis=2)
    se = math.sqrt(epsilon)
    out = np.empty((len(rows), R, K + 1))
    lw = np.zeros((R, N))
    sqdt = math.sqrt(dt)
    for k in range(K + 1):
        w = np.exp(lw - lw.max(axis=1, keepdims=True))
        s = np.sum(w, axis=1)
        for i in range(len(rows)):
            out[i, :, k] = np.sum(w * Fv[i, k][None, :], axis=1) / s
        if k == K:
            break
        dW = sqdt * rng.normals(seed, rng.ROLE_OBSERVATION, k, streams, m)
        inc = np.zeros((R, N))
        for j in range(m):
            inc += dW[:, j, None] * H[k, None, :, j]
        lw += se * inc - 0.5 * epsilon * h2[k][None, :] * dt
    return {nm: out[i] for i, nm in enumerate(names)}


@dataclass
class LaplaceRow:
    epsilon: float
    value: float
    stderr: float
    ess: float
    degenerate: bool

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class LaplaceResult:
    rows: list
    bound: float
    bound_details: list

    @property
    def values(self):
        return np.array([r.value for r in self.rows])

    @property
    def differences(self):
        return np.diff(self.values)

    @property
    def bound_ok(self):
        return all(r.value <= self.bound + 2 * r.stderr for r in self.rows)

    @property
    def trend_ok(self):
        """Distance to the bound never grows by more than two combined standard errors."""
        ok = True
        for a, b in zip(self.rows, self.rows[1:]):
            slack = 2 * math.hypot(a.stderr, b.stderr)
            ok &= abs(b.value - self.bound) <= abs(a.value - self.bound) + slack
        return bool(ok)

    @property
    def passed(self):
        return self.bound_ok and self.trend_ok and not any(r.degenerate for r in self.rows)

    def to_dict(self):
        return {"rows": [r.to_dict() for r in self.rows],
                "differences": self.differences.tolist(), "bound": self.bound,
                "bound_details": self.bound_details, "bound_ok": self.bound_ok,
                "trend_ok": self.trend_ok, "passed": self.passed}


def log_mean_exp_value(G, epsilon):
    """``eps log mean exp(-G/eps)`` in the log domain, with a delta-method standard error."""
    v = -np.asarray(G, dtype=np.float64) / epsilon
    top = float(np.max(v))
    e = np.exp(v - top)
    mean = float(np.mean(e))
    value = epsilon * top + epsilon * math.log(mean)
    R = e.size
    se = epsilon * float(np.std(e, ddof=1)) / (math.sqrt(R) * mean) if R > 1 else float("inf")
    p = e / np.sum(e)
    ess = float(1.0 / np.sum(p * p))
    return value, se, ess, bool(np.max(p) > 0.5)


@dataclass
class RateSearch:
    """Coarse search for ``inf(G + I2)`` over skeleton paths of constant controls.

    Each candidate path's rate is estimated by :func:`estimate_rate` (when
    ``nested``) and capped by the generating control's own cost.
    """
    controls: tuple = (-1.0, -0.5, -0.25, 0.0, 0.25, 0.5, 1.0)
    nested: bool = True
    tol: float = 1e-3
    optimizer: OptimizerConfig = field(default_factory=lambda: OptimizerConfig(
        n_pieces=4, lambdas=(1e2, 1e4), max_iter=30))


def variational_bound(problem, G, search=None):
    search = search or RateSearch()
    grid, m = problem.grid, problem.coeffs.m
    details = []
    best = math.inf
    for c in search.controls:
        psi = ControlPath.constant(grid, c, m)
        path = problem.solve(psi)
        paths = {nm: path.normalized[nm][None, :] for nm in G.names}
        g = float(G(paths)[0]) if G.names else float(G({})[0])
        rate = psi.cost
        est = None
        if search.nested and G.names and c != 0.0:
            target = {nm: path.normalized[nm] for nm in G.names}
            r = estimate_rate(problem.coeffs, problem.signal, target, search.tol,
                              search.optimizer, problem=problem, description=f"constant {c}")
            if r.feasible:
                est = r.cost
                rate = min(rate, r.cost)
        details.append({"control": float(c), "G": g, "control_cost": psi.cost,
                        "rate_estimate": est, "total": g + rate})
        best = min(best, g + rate)
    return 0.0 - best, details


def laplace_check(coeffs, signal, G, eps_list, mc_samples, seed, family=None, search=None,
                  chunk=1000, threads=1, problem=None):
    """Empirical decay table ``eps log E[exp(-G(pi^eps)/eps)]`` for decreasing eps.

    Filter realizations are drawn under the reference measure from one shared
    signal cloud; observation streams are common across eps.  The variational
    bound ``-inf(G + I2)`` is estimated on skeleton paths.
    """
    eps_list = [float(e) for e in eps_list]
    if any(not 0 < e <= 1 for e in eps_list):
        raise ValueError("eps values must lie in (0, 1]")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps values must be strictly descending")
    names = G.names
    if problem is None:
        problem = SkeletonProblem(coeffs, signal, family if family is not None
                                  else resolve_family(names or ["one"], coeffs.n))
    rows = []
    for eps in eps_list:
        chunks = [np.arange(r0, min(r0 + chunk, mc_samples)) for r0 in range(0, mc_samples, chunk)]

        def run_chunk(st, eps=eps):
            if names:
                return G(reference_filter_paths(problem, eps, seed, st, names))
            return G({nm: np.zeros((st.size, 1)) for nm in ("_",)})

        with block_runner(threads) as run:
            Gs = np.concatenate(run(run_chunk, chunks))
        value, se, ess, degen = log_mean_exp_value(Gs, eps)
        rows.append(LaplaceRow(eps, value, se, ess, degen))
    bound, details = variational_bound(problem, G, search)
    return LaplaceResult(rows, bound, details)
