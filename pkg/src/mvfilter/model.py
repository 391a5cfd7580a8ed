"""Coefficient sets for the McKean-Vlasov signal-observation system.

Coefficients are vectorized callables.  With ``x`` an ``(N, n)`` batch of
states and ``mu`` a :class:`~mvfilter.measure.WeightedEnsemble` law proxy:

* ``b1(t, x, mu)`` returns ``(N, n)``
* ``sigma1(t, x, mu)`` returns ``(N, n, d)``
* ``b2(t, x, mu)`` returns ``(N, m)``
* ``sigma2(t)`` returns ``(m, m)``

Each row may depend only on its own state and on ``mu``.
"""
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .measure import Ensemble, wasserstein2

SINGULAR_CONDITION = 1e12


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class CoefficientSet:
    b1: Callable
    sigma1: Callable
    b2: Callable
    sigma2: Callable
    dims: tuple
    lipschitz_L1: Optional[Callable] = None
    bound_L2: Optional[float] = None
    name: str = "custom"
    params: dict = field(default_factory=dict)

    @property
    def n(self):
        return self.dims[0]

    @property
    def d(self):
        return self.dims[1]

    @property
    def m(self):
        return self.dims[2]

    def sigma2_inv(self, t):
        s2 = np.atleast_2d(np.asarray(self.sigma2(t), dtype=np.float64))
        cond = np.linalg.cond(s2)
        if not np.isfinite(cond) or cond > SINGULAR_CONDITION:
            raise ModelError(f"sigma2({t}) is singular (condition number {cond:.3g})")
        return np.linalg.inv(s2)

    def h(self, t, x, mu):
        """Observation drift in noise units, ``sigma2(t)^-1 b2(t, x, mu)``; shape ``(N, m)``."""
        x = np.atleast_2d(x)
        b2 = np.asarray(self.b2(t, x, mu), dtype=np.float64).reshape(x.shape[0], self.m)
        return b2 @ self.sigma2_inv(t).T


def h(coeffs, t, x, mu):
    return coeffs.h(t, x, mu)


# ---------------------------------------------------------------------------
# assumption spot checks

@dataclass
class SampleSpec:
    t_range: tuple = (0.0, 1.0)
    x_box: float = 5.0
    n_samples: int = 400
    ensemble_size: int = 16
    seed: int = 0


@dataclass
class CheckResult:
    name: str
    status: str
    observed: float
    declared: Optional[float]
    witness: Optional[dict] = None

    def to_dict(self):
        return {"name": self.name, "status": self.status, "observed": self.observed,
                "declared": self.declared, "witness": self.witness}


@dataclass
class AssumptionReport:
    model: str
    checks: list
    sigma2_condition_max: float

    @property
    def passed(self):
        return all(c.status != "FAIL" for c in self.checks)

    @property
    def status(self):
        return "PASS" if self.passed else "FAIL"

    def to_dict(self):
        return {"model": self.model, "status": self.status,
                "sigma2_condition_max": self.sigma2_condition_max,
                "checks": [c.to_dict() for c in self.checks]}


def _random_ensemble(rng, n, size, box):
    centre = rng.uniform(-0.5 * box, 0.5 * box, size=n)
    spread = rng.uniform(0.05, 0.5) * box
    return Ensemble(centre + spread * rng.standard_normal((size, n)))


def check_assumptions(coeffs, spec=None):
    """Monte Carlo spot check of the Lipschitz and boundedness hypotheses.

    The Lipschitz ratio is ``(|db1|^2 + ||dsigma1||^2) / (|dx|^2 + W2^2)``
    over sampled pairs; half the pairs are local perturbations.  Sup bounds are
    taken for ``|b2|``, ``||sigma2||`` and ``||sigma2^-1||``.  Undeclared
    constants yield status ``SKIP``.
    """
    spec = spec or SampleSpec()
    rng = np.random.default_rng(spec.seed)
    n = coeffs.n
    worst_ratio, worst_lip = 0.0, None
    over_L1 = None
    worst_b2, witness_b2 = 0.0, None
    cond_max, s2_norm, s2_inv_norm = 0.0, 0.0, 0.0
    for k in range(spec.n_samples):
        t = float(rng.uniform(*spec.t_range))
        x1 = rng.uniform(-spec.x_box, spec.x_box, size=(1, n))
        mu1 = _random_ensemble(rng, n, spec.ensemble_size, spec.x_box)
        if k % 2:
            x2 = x1 + 1e-3 * spec.x_box * rng.standard_normal((1, n))
            mu2 = mu1.pushforward(1e-3 * spec.x_box * rng.standard_normal(mu1.points.shape))
        else:
            x2 = rng.uniform(-spec.x_box, spec.x_box, size=(1, n))
            mu2 = _random_ensemble(rng, n, spec.ensemble_size, spec.x_box)
        db1 = np.asarray(coeffs.b1(t, x1, mu1)) - np.asarray(coeffs.b1(t, x2, mu2))
        ds1 = np.asarray(coeffs.sigma1(t, x1, mu1)) - np.asarray(coeffs.sigma1(t, x2, mu2))
        num = float(np.sum(db1 ** 2) + np.sum(ds1 ** 2))
        den = float(np.sum((x1 - x2) ** 2) + wasserstein2(mu1, mu2).value ** 2)
        ratio = num / den if den > 0 else 0.0
        if ratio > worst_ratio:
            worst_ratio = ratio
            worst_lip = {"t": t, "x1": x1.ravel().tolist(), "x2": x2.ravel().tolist(), "ratio": ratio}
        if coeffs.lipschitz_L1 is not None:
            L = float(coeffs.lipschitz_L1(t))
            if ratio > L * (1 + 1e-9) and over_L1 is None:
                over_L1 = worst_lip
        for x, mu in ((x1, mu1), (x2, mu2)):
            b2 = float(np.max(np.linalg.norm(np.atleast_2d(coeffs.b2(t, x, mu)), axis=1)))
            if b2 > worst_b2:
                worst_b2, witness_b2 = b2, {"t": t, "x": x.ravel().tolist(), "value": b2}
        s2 = np.atleast_2d(np.asarray(coeffs.sigma2(t), dtype=np.float64))
        cond = float(np.linalg.cond(s2))
        cond_max = max(cond_max, cond)
        s2_norm = max(s2_norm, float(np.linalg.norm(s2, 2)))
        s2_inv_norm = max(s2_inv_norm, float(np.linalg.norm(coeffs.sigma2_inv(t), 2)))

    checks = []
    if coeffs.lipschitz_L1 is None:
        checks.append(CheckResult("lipschitz_b1_sigma1", "SKIP", worst_ratio, None, worst_lip))
    else:
        declared = float(max(coeffs.lipschitz_L1(t) for t in np.linspace(*spec.t_range, 5)))
        checks.append(CheckResult("lipschitz_b1_sigma1", "FAIL" if over_L1 else "PASS",
                                  worst_ratio, declared, over_L1 or worst_lip))
    L2 = coeffs.bound_L2
    for name, observed, wit in (("bound_b2", worst_b2, witness_b2),
                                ("bound_sigma2", s2_norm, None),
                                ("bound_sigma2_inv", s2_inv_norm, None)):
        if L2 is None:
            checks.append(CheckResult(name, "SKIP", observed, None, wit))
        else:
            status = "PASS" if observed <= L2 * (1 + 1e-12) else "FAIL"
            checks.append(CheckResult(name, status, observed, float(L2), wit))
    return AssumptionReport(coeffs.name, checks, cond_max)


# ---------------------------------------------------------------------------
# gallery

@dataclass(frozen=True)
class GalleryEntry:
    name: str
    coeffs: CoefficientSet
    x0: np.ndarray
    oracle: str
    params: dict


def _const_sigma(n, d, s):
    def sigma1(t, x, mu, _s=s):
        out = np.zeros((x.shape[0], n, d))
        for i in range(min(n, d)):
            out[:, i, i] = _s
        return out
    return sigma1


def _scaled_identity(m, g):
    mat = g * np.eye(m)
    mat.setflags(write=False)
    return lambda t: mat


def linear_gaussian(a=-1.0, s=1.0, c=1.0, g=1.0, x0=1.0, clip_radius=None):
    """Scalar linear signal with linear sensor clipped outside ``|x| <= clip_radius``.

    Inside the box the model is exactly linear-Gaussian and admits the
    Kalman-Bucy filter as oracle.  The default radius is ten stationary
    standard deviations (``s / sqrt(2|a|)``, or ``s`` when ``a >= 0``), and
    at least ``|x0| + 10 s``.
    """
    if clip_radius is None:
        std = s / np.sqrt(2 * abs(a)) if a < 0 else s
        clip_radius = max(10.0 * std, abs(x0) + 10.0 * s)
    R = float(clip_radius)

    coeffs = CoefficientSet(
        b1=lambda t, x, mu: a * x,
        sigma1=_const_sigma(1, 1, s),
        b2=lambda t, x, mu: c * np.clip(x, -R, R),
        sigma2=_scaled_identity(1, g),
        dims=(1, 1, 1),
        lipschitz_L1=lambda t: a * a,
        bound_L2=float(max(abs(c) * R, g, 1.0 / g)),
        name="linear-gaussian",
        params={"a": a, "s": s, "c": c, "g": g, "x0": x0, "clip_radius": R},
    )
    return GalleryEntry("linear-gaussian", coeffs, np.array([float(x0)]), "kalman-bucy",
                        dict(coeffs.params))


def mean_field_linear(a=0.0, abar=1.0, s=0.3, beta=1.0, g=1.0, x0=1.0):
    """``b1 = a x + abar <mu, id>`` with a bounded ``beta tanh`` sensor.

    The signal mean solves ``m' = (a + abar) m``.
    """
    def b1(t, x, mu):
        return a * x + abar * mu.mean[None, :]

    coeffs = CoefficientSet(
        b1=b1,
        sigma1=_const_sigma(1, 1, s),
        b2=lambda t, x, mu: beta * np.tanh(x),
        sigma2=_scaled_identity(1, g),
        dims=(1, 1, 1),
        # |db1|^2 <= 2 a^2 |dx|^2 + 2 abar^2 |dmean|^2 and |dmean| <= W2
        lipschitz_L1=lambda t: 2.0 * max(a * a, abar * abar),
        bound_L2=float(max(abs(beta), g, 1.0 / g)),
        name="mean-field-linear",
        params={"a": a, "abar": abar, "s": s, "beta": beta, "g": g, "x0": x0},
    )
    return GalleryEntry("mean-field-linear", coeffs, np.array([float(x0)]), "mean-ode",
                        dict(coeffs.params))


def bounded_sensor(theta=1.0, s=1.0, beta=1.0, g=1.0, x0=0.5, dim=1):
    """Ornstein-Uhlenbeck signal observed through ``beta tanh(x)`` componentwise."""
    coeffs = CoefficientSet(
        b1=lambda t, x, mu: -theta * x,
        sigma1=_const_sigma(dim, dim, s),
        b2=lambda t, x, mu: beta * np.tanh(x),
        sigma2=_scaled_identity(dim, g),
        dims=(dim, dim, dim),
        lipschitz_L1=lambda t: theta * theta,
        bound_L2=float(max(abs(beta) * np.sqrt(dim), g, 1.0 / g)),
        name="bounded-sensor",
        params={"theta": theta, "s": s, "beta": beta, "g": g, "x0": x0, "dim": dim},
    )
    return GalleryEntry("bounded-sensor", coeffs, np.full(dim, float(x0)), "none",
                        dict(coeffs.params))


GALLERY = {
    "linear-gaussian": linear_gaussian,
    "mean-field-linear": mean_field_linear,
    "bounded-sensor": bounded_sensor,
}


def gallery(name, **params):
    try:
        factory = GALLERY[name]
    except KeyError:
        raise ModelError(f"unknown gallery model {name!r}; choose from {sorted(GALLERY)}") from None
    return factory(**params)
