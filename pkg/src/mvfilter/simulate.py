"""Interacting-particle simulation of the McKean-Vlasov signal and its observation.

The law of the signal is replaced by the empirical measure of N particles
advanced together by Euler-Maruyama.  Particle 0 doubles as the physical
signal that generates the observation.  All noise comes from the
counter-based streams in :mod:`mvfilter.rng`, so results are identical for
any thread count.
"""
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from . import rng
from .lions import GeneratorContext, as_family
from .measure import Ensemble

BLOCK_SIZE = 2048


class SimulationError(RuntimeError):
    pass


@dataclass(frozen=True)
class TimeGrid:
    T: float
    steps: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError(f"horizon T must be positive, got {self.T}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")

    @property
    def dt(self):
        return self.T / self.steps

    @property
    def times(self):
        return np.arange(self.steps + 1) * self.dt

    def __len__(self):
        return self.steps + 1


def particle_blocks(N, block_size=BLOCK_SIZE):
    """Fixed particle slices; the decomposition never depends on thread count."""
    return [slice(s, min(s + block_size, N)) for s in range(0, N, block_size)]


@contextmanager
def block_runner(threads):
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=int(threads)) as pool:
            yield lambda fn, items: list(pool.map(fn, items))
    else:
        yield lambda fn, items: [fn(i) for i in items]


@dataclass
class SignalPath:
    grid: TimeGrid
    particles: np.ndarray  # (steps + 1, N, n)
    seed: int
    x0: np.ndarray
    noise_dim: int
    reference_index: int = 0
    _ensembles: dict = field(default_factory=dict, repr=False)

    @property
    def N(self):
        return self.particles.shape[1]

    @property
    def dim(self):
        return self.particles.shape[2]

    @property
    def reference_path(self):
        return self.particles[:, self.reference_index, :]

    def ensemble(self, k):
        ens = self._ensembles.get(k)
        if ens is None:
            ens = Ensemble(self.particles[k])
            if len(self._ensembles) < 4:
                self._ensembles[k] = ens
            else:
                self._ensembles.clear()
        return ens

    def increments(self, k):
        """Brownian increments ``dB`` driving step ``k`` -> ``k+1``, shape ``(N, d)``."""
        idx = np.arange(self.N, dtype=np.uint32)
        return np.sqrt(self.grid.dt) * rng.normals(self.seed, rng.ROLE_SIGNAL, k, idx,
                                                   self.noise_dim)

    def permuted(self, order):
        """Same cloud with particles relabelled by ``order`` (diagnostics only)."""
        order = np.asarray(order)
        return SignalPath(self.grid, self.particles[:, order, :], self.seed, self.x0,
                          self.noise_dim, int(np.flatnonzero(order == self.reference_index)[0]))


def simulate_signal(coeffs, x0, grid, N, seed, threads=1):
    """Euler-Maruyama for the N-particle approximation of the McKean-Vlasov signal.

    ``X^i_{k+1} = X^i_k + b1(t_k, X^i_k, mu_k) dt + sigma1(t_k, X^i_k, mu_k) dB^i_k``
    with ``mu_k`` the empirical measure of all particles at step ``k``.
    """
    N = int(N)
    if N < 2:
        raise ValueError("need at least two particles")
    n, d = coeffs.n, coeffs.d
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    if x0.shape[0] != n:
        raise ValueError(f"x0 has dimension {x0.shape[0]}, model has {n}")
    K, dt = grid.steps, grid.dt
    sqdt = np.sqrt(dt)
    times = grid.times
    X = np.empty((K + 1, N, n))
    X[0] = x0
    idx = np.arange(N, dtype=np.uint32)
    blocks = particle_blocks(N)
    with block_runner(threads) as run:
        for k in range(K):
            t = times[k]
            mu = Ensemble(X[k])

            def advance(sl, k=k, t=t, mu=mu):
                xb = mu.points[sl]
                drift = np.asarray(coeffs.b1(t, xb, mu), dtype=np.float64).reshape(xb.shape)
                sig = np.asarray(coeffs.sigma1(t, xb, mu), dtype=np.float64).reshape(-1, n, d)
                dB = sqdt * rng.normals(seed, rng.ROLE_SIGNAL, k, idx[sl], d)
                X[k + 1, sl] = xb + drift * dt + np.einsum("nij,nj->ni", sig, dB)

            run(advance, blocks)
            bad = ~np.all(np.isfinite(X[k + 1]), axis=1)
            if bad.any():
                raise SimulationError(
                    f"non-finite state at step {k + 1}, particle {int(np.flatnonzero(bad)[0])}")
    X.setflags(write=False)
    return SignalPath(grid, X, int(seed), x0, d)


@dataclass(frozen=True)
class ObservationPath:
    grid: TimeGrid
    dY: np.ndarray          # (steps, m) observation increments
    dW: np.ndarray          # (steps, m) standard Brownian increments used
    epsilon: float
    seed: int
    measure: str = "physical"
    stream: int = 0

    @property
    def values(self):
        m = self.dY.shape[1]
        return np.vstack((np.zeros((1, m)), np.cumsum(self.dY, axis=0)))


def observation_noise(seed, grid, m, stream=0):
    """Standard Brownian increments of the observation stream, shape ``(steps, m)``."""
    steps = np.arange(grid.steps, dtype=np.uint32)
    z = rng.normals(seed, rng.ROLE_OBSERVATION, steps, np.full(grid.steps, stream, np.uint32), m)
    return np.sqrt(grid.dt) * z


def simulate_observation(coeffs, signal, epsilon, seed, measure="physical", stream=0):
    """Observation ``dY = sqrt(eps) b2(t, X_ref, mu) dt + sigma2(t) dW``.

    ``measure='reference'`` drops the drift, giving the observation law under
    the reference measure (a ``sigma2``-Brownian motion independent of the
    signal).
    """
    if not 0 < epsilon <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {epsilon}")
    if measure not in ("physical", "reference"):
        raise ValueError(f"unknown observation measure {measure!r}")
    grid = signal.grid
    m = coeffs.m
    dW = observation_noise(seed, grid, m, stream)
    times = grid.times
    dY = np.empty_like(dW)
    se = np.sqrt(epsilon)
    ref = signal.reference_index
    for k in range(grid.steps):
        t = times[k]
        s2 = np.atleast_2d(coeffs.sigma2(t))
        coeffs.sigma2_inv(t)
        noise = s2 @ dW[k]
        if measure == "physical":
            mu = signal.ensemble(k)
            b2 = np.asarray(coeffs.b2(t, mu.points[ref:ref + 1], mu), dtype=np.float64).reshape(m)
            dY[k] = se * b2 * grid.dt + noise
        else:
            dY[k] = noise
    dY.setflags(write=False)
    dW.setflags(write=False)
    return ObservationPath(grid, dY, dW, float(epsilon), int(seed), measure, int(stream))


def evaluate_family(family, signal, k):
    """Values ``F(X^i_k, mu_k)`` for every test function; dict of ``(N,)`` arrays."""
    mu = signal.ensemble(k)
    return {name: F.value(mu.points, mu) for name, F in as_family(family).items()}


def prior_flow(family, signal, with_errors=False):
    """Ensemble averages ``E[F(X_t, mu_t)]`` along the signal cloud, per test function.

    With ``with_errors=True`` also returns the naive standard errors ``std/sqrt(N)``.
    """
    fam = as_family(family)
    K = signal.grid.steps
    means = {name: np.empty(K + 1) for name in fam}
    errs = {name: np.empty(K + 1) for name in fam}
    for k in range(K + 1):
        for name, vals in evaluate_family(fam, signal, k).items():
            means[name][k] = np.mean(vals)
            errs[name][k] = np.std(vals) / np.sqrt(vals.size)
    return (means, errs) if with_errors else means


@dataclass
class DynkinResult:
    name: str
    time_difference: float
    generator_mean: float
    gap: float
    stderr: float
    tolerance: float

    @property
    def passed(self):
        return abs(self.gap) <= self.tolerance


def generator_consistency(coeffs, family, x0, grid, N, seeds, window_steps=None,
                          bias_coef=10.0, threads=1):
    """Compare the averaged time difference of ``E[F(X_t, mu_t)]`` with ``E[LF]``.

    For each independent replicate (one per seed) the statistic is
    ``(mean F at step W - mean F at step 0) / (W dt) - (1/W) sum_{k<W} mean LF(X_k)``,
    i.e. the window average of per-step time differences minus the window
    average of the generator.  The tolerance is three standard errors of the
    replicate mean plus ``bias_coef * dt * max(1, |E LF|)`` for the O(dt)
    discretization bias.
    """
    fam = as_family(family)
    W = grid.steps if window_steps is None else int(window_steps)
    stats = {name: [] for name in fam}
    diffs = {name: [] for name in fam}
    gens = {name: [] for name in fam}
    for seed in seeds:
        sig = simulate_signal(coeffs, x0, TimeGrid(W * grid.dt, W), N, seed, threads)
        f0 = evaluate_family(fam, sig, 0)
        fW = evaluate_family(fam, sig, W)
        gsum = {name: 0.0 for name in fam}
        for k in range(W):
            ctx = GeneratorContext(coeffs, sig.grid.times[k], sig.ensemble(k))
            for name, F in fam.items():
                gsum[name] += float(np.mean(ctx.apply(F).value))
        for name in fam:
            D = (np.mean(fW[name]) - np.mean(f0[name])) / (W * grid.dt)
            A = gsum[name] / W
            stats[name].append(D - A)
            diffs[name].append(D)
            gens[name].append(A)
    out = []
    R = len(seeds)
    for name in fam:
        s = np.asarray(stats[name])
        se = float(np.std(s, ddof=1) / np.sqrt(R)) if R > 1 else float("inf")
        A = float(np.mean(gens[name]))
        tol = 3.0 * se + bias_coef * grid.dt * max(1.0, abs(A))
        out.append(DynkinResult(name, float(np.mean(diffs[name])), A, float(np.mean(s)), se, tol))
    return out
