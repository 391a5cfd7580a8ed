"""Weighted-particle Zakai filter and its Kushner-Stratonovich normalization.

The signal cloud is simulated under the reference measure, so the filter only
has to attach likelihood weights.  With ``dWt = sigma2^-1 dY`` the per-particle
log-weight obeys

    l_{k+1} = l_k + sqrt(eps) h(t_k, X_k, mu_k) . dWt_k - (eps / 2) |h|^2 dt

and ``P(F) = (1/N) sum_i exp(l_i) F(X_i, mu)``, ``pi(F) = P(F) / P(1)``.
Weights live in the log domain; every reduction is a numpy pairwise sum over
the full particle axis so results do not depend on the thread count.
"""
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import kernels, rng
from .lions import GeneratorContext, as_family
from .oracles import kalman_bucy
from .simulate import block_runner, particle_blocks


class FilterError(RuntimeError):
    pass


@dataclass
class FilterPath:
    grid: object
    epsilon: float
    names: tuple
    log_weights: np.ndarray         # (steps + 1, N)
    log_mass: np.ndarray            # log P(1), (steps + 1,)
    mass: np.ndarray                # P(1), (steps + 1,)
    unnormalized: dict              # name -> P(F), (steps + 1,)
    normalized: dict                # name -> pi(F), (steps + 1,)
    ess: np.ndarray
    signal: object = field(repr=False)
    points: Optional[np.ndarray] = field(default=None, repr=False)
    resampled_steps: tuple = ()

    def particles(self, k):
        return self.signal.particles[k] if self.points is None else self.points[k]

    def weighted_ensemble(self, k):
        from .measure import WeightedEnsemble
        lw = self.log_weights[k]
        return WeightedEnsemble(self.particles(k), np.exp(lw - lw.max()))

    def ks_identity_gap(self):
        """Largest ``|pi(F) P(1) - P(F)| / |P(1)|`` over steps and test functions."""
        mass = self.mass
        gaps = [np.max(np.abs(self.normalized[nm] * mass - self.unnormalized[nm]) / np.abs(mass))
                for nm in self.names]
        return float(max(gaps)) if gaps else 0.0


def _check_compatible(signal, obs):
    if signal.grid != obs.grid:
        raise FilterError(f"grid mismatch: signal {signal.grid} vs observation {obs.grid}")


def _weighted_means(lw, values):
    """Shifted weights and the raw sums ``sum w F`` for each array in ``values``."""
    shift = float(np.max(lw))
    w = np.exp(lw - shift)
    s = float(np.sum(w))
    sums = {nm: float(np.sum(w * v)) for nm, v in values.items()}
    return shift, w, s, sums


def run_zakai(coeffs, signal, obs, family, threads=1, resample=False, ess_threshold=0.5,
              epsilon=None):
    """Weighted-particle solution of the eps-scaled Zakai equation.

    Parameters
    ----------
    signal, obs : SignalPath, ObservationPath on the same grid.
    family : dict or sequence of cylindrical test functions to track.
    resample : optional systematic resampling when ESS < ``ess_threshold * N``.
        Resampled particles are then propagated by the filter itself (noise role
        ``ROLE_FILTER``) while the law proxy stays the signal cloud, and the
        weights are reset to the mean weight so ``P(1)`` is preserved.
    epsilon : override of ``obs.epsilon`` used only inside the weight update
        (``0`` switches the likelihood off; a test hook).
    """
    _check_compatible(signal, obs)
    eps = obs.epsilon if epsilon is None else float(epsilon)
    if epsilon is not None and not 0 <= eps <= 1:
        raise FilterError(f"epsilon override must lie in [0, 1], got {eps}")
    fam = as_family(family)
    grid = signal.grid
    K, N, dt = grid.steps, signal.N, grid.dt
    n, d = coeffs.n, coeffs.d
    times = grid.times
    se = np.sqrt(eps)
    lw = np.zeros((K + 1, N))
    log_mass = np.empty(K + 1)
    mass = np.empty(K + 1)
    ess = np.empty(K + 1)
    unnorm = {nm: np.empty(K + 1) for nm in fam}
    norm = {nm: np.empty(K + 1) for nm in fam}
    Z = None
    if resample:
        Z = np.empty((K + 1, N, n))
        Z[0] = signal.particles[0]
    resampled = []
    blocks = particle_blocks(N)
    fidx = np.arange(N, dtype=np.uint32)
    logN = np.log(N)

    def summarize(k):
        mu = signal.ensemble(k)
        pts = mu.points if Z is None else Z[k]
        vals = {nm: F.value(pts, mu) for nm, F in fam.items()}
        shift, w, s, sums = _weighted_means(lw[k], vals)
        log_mass[k] = shift + np.log(s) - logN
        scale = np.exp(shift) / N
        mass[k] = scale * s
        for nm in fam:
            unnorm[nm][k] = scale * sums[nm]
            norm[nm][k] = sums[nm] / s
        ess[k] = s * s / float(np.sum(w * w))

    with block_runner(threads) as run:
        for k in range(K):
            summarize(k)
            t = times[k]
            mu = signal.ensemble(k)
            pts = mu.points if Z is None else Z[k]
            dWt = coeffs.sigma2_inv(t) @ obs.dY[k]

            def update(sl, k=k, t=t, mu=mu, pts=pts, dWt=dWt):
                H = coeffs.h(t, pts[sl], mu)
                lw[k + 1, sl] = lw[k, sl] + se * (H @ dWt) - 0.5 * eps * np.sum(H * H, axis=1) * dt
                if Z is not None:
                    xb = pts[sl]
                    drift = np.asarray(coeffs.b1(t, xb, mu), dtype=np.float64).reshape(xb.shape)
                    sig = np.asarray(coeffs.sigma1(t, xb, mu), dtype=np.float64).reshape(-1, n, d)
                    dB = np.sqrt(dt) * rng.normals(signal.seed, rng.ROLE_FILTER, k, fidx[sl], d)
                    Z[k + 1, sl] = xb + drift * dt + np.einsum("nij,nj->ni", sig, dB)

            run(update, blocks)
            if not np.all(np.isfinite(lw[k + 1])):
                raise FilterError(
                    f"log-weight overflow at step {k + 1}; the model's h is pathological "
                    "(weights are already log-domain)")
            if Z is not None:
                w = np.exp(lw[k + 1] - lw[k + 1].max())
                if np.sum(w) ** 2 / np.sum(w * w) < ess_threshold * N:
                    u0 = rng.uniforms(signal.seed, rng.ROLE_RESAMPLE, k, 0)[0]
                    cdf = np.cumsum(w / np.sum(w))
                    cdf[-1] = 1.0
                    anc = np.searchsorted(cdf, (np.arange(N) + u0) / N, side="right")
                    anc = np.minimum(anc, N - 1)
                    Z[k + 1] = Z[k + 1][anc]
                    lw[k + 1] = lw[k + 1].max() + np.log(np.mean(w))
                    resampled.append(k + 1)
        summarize(K)
    lw.setflags(write=False)
    return FilterPath(grid, eps, tuple(fam), lw, log_mass, mass, unnorm, norm, ess, signal,
                      Z, tuple(resampled))


def normalize(path):
    """Kallianpur-Striebel normalization ``pi(F) = P(F) / P(1)`` per step."""
    mass = path.mass
    if not np.all(np.isfinite(mass)) or np.any(mass <= 0):
        raise FilterError("vanishing or non-finite total mass; cannot normalize")
    return {nm: path.unnormalized[nm] / mass for nm in path.names}


# ---------------------------------------------------------------------------
# residual diagnostics

@dataclass
class ResidualStats:
    residuals: np.ndarray

    @property
    def mean(self):
        return float(np.mean(self.residuals))

    @property
    def mean_abs(self):
        return float(np.mean(np.abs(self.residuals)))

    @property
    def rms(self):
        return float(np.sqrt(np.mean(self.residuals ** 2)))

    @property
    def max_abs(self):
        return float(np.max(np.abs(self.residuals)))

    def to_dict(self):
        return {"mean": self.mean, "mean_abs": self.mean_abs, "rms": self.rms,
                "max_abs": self.max_abs}


def signal_martingale(F, signal, k, mu, weights, coeffs):
    """``(1/N) sum_j c_j . sigma1(X_j) dB_j``: the signal-noise part of the step change."""
    pts = mu.points
    c = F.martingale_coefficients(pts, mu, weights)
    sig = np.asarray(coeffs.sigma1(signal.grid.times[k], pts, mu),
                     dtype=np.float64).reshape(pts.shape[0], coeffs.n, coeffs.d)
    dB = signal.increments(k)
    return float(np.mean(np.einsum("ni,nij,nj->n", c, sig, dB)))


def _step_terms(path, coeffs, F, k):
    signal = path.signal
    mu = signal.ensemble(k)
    pts = path.particles(k)
    t = signal.grid.times[k]
    ctx = GeneratorContext(coeffs, t, mu)
    LF = ctx.apply(F, pts).value
    Fv = F.value(pts, mu)
    H = coeffs.h(t, pts, mu)
    return mu, Fv, LF, H


def _require_plain(path):
    if path.points is not None:
        raise FilterError("residual checks need an unresampled path")


def zakai_residual(path, coeffs, F, obs, compensate=False):
    """Telescoping defect of the eps-Zakai integral equation.

    ``r_k = P_{k+1}(F) - P_k(F) - P_k(LF) dt - sqrt(eps) P_k(F h^j) dWt^j_k``
    with ``dWt = sigma2^-1 dY``.  ``compensate=True`` also subtracts the
    signal-noise martingale increment, leaving only the discretization defect.
    """
    _require_plain(path)
    _check_compatible(path.signal, obs)
    K, dt = path.grid.steps, path.grid.dt
    eps = path.epsilon
    r = np.empty(K)
    nxt = None
    for k in range(K):
        mu, Fv, LF, H = _step_terms(path, coeffs, F, k)
        w = np.exp(path.log_weights[k])
        Pk = float(np.mean(w * Fv)) if nxt is None else nxt
        mu1 = path.signal.ensemble(k + 1)
        nxt = float(np.mean(np.exp(path.log_weights[k + 1]) * F.value(mu1.points, mu1)))
        dWt = coeffs.sigma2_inv(path.grid.times[k]) @ obs.dY[k]
        gain = np.mean(w[:, None] * Fv[:, None] * H, axis=0)
        r[k] = nxt - Pk - float(np.mean(w * LF)) * dt - np.sqrt(eps) * float(gain @ dWt)
        if compensate:
            r[k] -= signal_martingale(F, path.signal, k, mu, w, coeffs)
    return ResidualStats(r)


def innovations(path, coeffs, obs):
    """Innovation increments ``dW_hat = dWt - sqrt(eps) pi_k(h) dt``; shape ``(steps, m)``."""
    K, dt = path.grid.steps, path.grid.dt
    out = np.empty((K, coeffs.m))
    for k in range(K):
        mu = path.signal.ensemble(k)
        pts = path.particles(k)
        t = path.grid.times[k]
        H = coeffs.h(t, pts, mu)
        lw = path.log_weights[k]
        w = np.exp(lw - lw.max())
        pih = np.sum(w[:, None] * H, axis=0) / np.sum(w)
        out[k] = coeffs.sigma2_inv(t) @ obs.dY[k] - np.sqrt(path.epsilon) * pih * dt
    return out


def ks_residual(path, coeffs, F, obs, compensate=False):
    """Telescoping defect of the eps-Kushner-Stratonovich equation.

    ``r_k = pi_{k+1}(F) - pi_k(F) - pi_k(LF) dt
    - sqrt(eps) [pi_k(F h^j) - pi_k(F) pi_k(h^j)] dW_hat^j_k``.
    """
    _require_plain(path)
    _check_compatible(path.signal, obs)
    K, dt = path.grid.steps, path.grid.dt
    eps = path.epsilon
    dWh = innovations(path, coeffs, obs)
    r = np.empty(K)

    def pi(w, s, v):
        return float(np.sum(w * v)) / s

    nxt = None
    for k in range(K):
        mu, Fv, LF, H = _step_terms(path, coeffs, F, k)
        lw = path.log_weights[k]
        shift = lw.max()
        w = np.exp(lw - shift)
        s = float(np.sum(w))
        piF = pi(w, s, Fv) if nxt is None else nxt
        lw1 = path.log_weights[k + 1]
        w1 = np.exp(lw1 - lw1.max())
        mu1 = path.signal.ensemble(k + 1)
        nxt = pi(w1, float(np.sum(w1)), F.value(mu1.points, mu1))
        gain = np.array([pi(w, s, Fv * H[:, j]) - piF * pi(w, s, H[:, j])
                         for j in range(H.shape[1])])
        r[k] = nxt - piF - pi(w, s, LF) * dt - np.sqrt(eps) * float(gain @ dWh[k])
        if compensate:
            # pi = P(F)/P(1) and P(1) carries no signal noise
            r[k] -= signal_martingale(F, path.signal, k, mu, w / s * mu.size, coeffs)
    return ResidualStats(r)


# ---------------------------------------------------------------------------
# batched reference-measure runs: mass martingale and moment diagnostics

def _h_cloud(coeffs, signal):
    K = signal.grid.steps
    H = np.empty((K, signal.N, coeffs.m))
    for k in range(K):
        mu = signal.ensemble(k)
        H[k] = coeffs.h(signal.grid.times[k], mu.points, mu)
    return H


@dataclass
class MassTestResult:
    epsilon: float
    n_runs: int
    mean: float
    stderr: float
    sup_mass_sq_mean: float
    terminal_mass: np.ndarray = field(repr=False)

    @property
    def z(self):
        return (self.mean - 1.0) / self.stderr

    @property
    def passed(self):
        return abs(self.z) <= 4.0

    def to_dict(self):
        return {"epsilon": self.epsilon, "n_runs": self.n_runs, "mean": self.mean,
                "stderr": self.stderr, "z": self.z, "sup_mass_sq_mean": self.sup_mass_sq_mean,
                "passed": self.passed}


def mass_martingale_test(coeffs, signal, epsilon, n_runs, seed, chunk=2000):
    """Sample ``P_T(1)`` over independent observation streams under the reference measure.

    Stream ``r`` is the observation ``simulate_observation(..., measure='reference',
    stream=r)``; its total mass equals what :func:`run_zakai` would report.
    Also records the mean of ``sup_t P_t(1)^2`` (a priori second-moment bound).
    """
    grid = signal.grid
    K, N, dt, m = grid.steps, signal.N, grid.dt, coeffs.m
    H = _h_cloud(coeffs, signal)
    h2 = np.sum(H * H, axis=2)
    se = np.sqrt(epsilon)
    terminal = np.empty(n_runs)
    supsq = np.empty(n_runs)
    logN = np.log(N)
    sqdt = np.sqrt(dt)
    for r0 in range(0, n_runs, chunk):
        streams = np.arange(r0, min(r0 + chunk, n_runs), dtype=np.uint32)
        R = streams.size
        lw = np.zeros((R, N))
        running = np.ones(R)
        for k in range(K):
            dW = sqdt * rng.normals(seed, rng.ROLE_OBSERVATION, k, streams, m)
            inc = np.zeros((R, N))
            for j in range(m):
                inc += dW[:, j, None] * H[k, None, :, j]
            lw += se * inc - 0.5 * epsilon * h2[k][None, :] * dt
            mass = np.exp(kernels.logsumexp_rows(lw) - logN)
            np.maximum(running, mass, out=running)
        terminal[r0:r0 + R] = mass
        supsq[r0:r0 + R] = running ** 2
    return MassTestResult(float(epsilon), int(n_runs), float(np.mean(terminal)),
                          float(np.std(terminal, ddof=1) / np.sqrt(n_runs)),
                          float(np.mean(supsq)), terminal)


def moment_diagnostic(coeffs, signal, eps_list, n_runs, seed):
    """Mean of ``sup_t P_t(1)^2`` for each eps, and the sup over the sweep."""
    rows = {float(e): mass_martingale_test(coeffs, signal, e, n_runs, seed).sup_mass_sq_mean
            for e in eps_list}
    return {"per_epsilon": rows, "sup": max(rows.values())}


# ---------------------------------------------------------------------------
# oracle comparison

def kalman_bucy_rmse(path, entry, obs, name="x"):
    """Path RMSE between ``pi(x)`` and the Kalman-Bucy mean integrated on the same grid."""
    p = entry.params
    mean, var = kalman_bucy(p["a"], p["s"], p["c"], p["g"], p["x0"], path.grid.dt,
                            obs.dY[:, 0], epsilon=path.epsilon)
    err = path.normalized[name] - mean
    return float(np.sqrt(np.mean(err ** 2))), mean, var
