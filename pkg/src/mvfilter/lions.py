"""Cylindrical test functions on R^n x P_2(R^n) and the mean-field generator.

A cylindrical function has the form ``F(x, mu) = g0(x) * phi(<mu, psi_1>, ...,
<mu, psi_k>)``.  Its derivatives, including the L-derivative
``d_mu F(x, mu)(u) = g0(x) sum_l d_l phi * grad psi_l(u)``, are available in
closed form from the gradient and Hessian oracles of the pieces.
"""
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .measure import WeightedEnsemble


@dataclass(frozen=True)
class ScalarField:
    """A function R^n -> R with gradient and Hessian oracles, batched over rows."""
    f: Callable
    grad: Callable
    hess: Callable
    label: str = ""

    def __call__(self, x):
        return self.f(x)


def constant_field(c=1.0, label="const"):
    return ScalarField(
        lambda x: np.full(x.shape[0], float(c)),
        lambda x: np.zeros(x.shape),
        lambda x: np.zeros(x.shape + (x.shape[1],)),
        label,
    )


def monomial(alpha):
    """``x^alpha = prod_i x_i^alpha_i`` for a multi-index ``alpha``."""
    alpha = np.asarray(alpha, dtype=int)
    n = alpha.size

    def f(x):
        return np.prod(x ** alpha, axis=1)

    def grad(x):
        out = np.zeros(x.shape)
        for i in range(n):
            if alpha[i]:
                a = alpha.copy()
                a[i] -= 1
                out[:, i] = alpha[i] * np.prod(x ** a, axis=1)
        return out

    def hess(x):
        out = np.zeros(x.shape + (n,))
        for i in range(n):
            for j in range(n):
                a = alpha.copy()
                coef = a[i]
                a[i] -= 1
                coef *= a[j]
                a[j] -= 1
                if coef and np.all(a >= 0):
                    out[:, i, j] = coef * np.prod(x ** a, axis=1)
        return out

    return ScalarField(f, grad, hess, "x^" + "".join(map(str, alpha)))


def bump(radius):
    """Smooth bump ``exp(1 - 1/(1 - |x|^2/R^2))`` supported in the open ball of radius R."""
    R2 = float(radius) ** 2

    def parts(x):
        r2 = np.sum(x ** 2, axis=1) / R2
        inside = r2 < 1.0
        q = np.where(inside, 1.0 - r2, 1.0)
        b = np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)
        return b, q, inside

    def f(x):
        return parts(x)[0]

    def grad(x):
        b, q, _ = parts(x)
        return (b * -2.0 / (R2 * q * q))[:, None] * x

    def hess(x):
        b, q, _ = parts(x)
        n = x.shape[1]
        xx = x[:, :, None] * x[:, None, :]
        eye = np.eye(n)[None]
        coef_xx = b * (4.0 / (R2 * R2 * q ** 4) - 8.0 / (R2 * R2 * q ** 3))
        coef_id = b * -2.0 / (R2 * q * q)
        return coef_xx[:, None, None] * xx + coef_id[:, None, None] * eye

    return ScalarField(f, grad, hess, f"bump({radius:g})")


def product_field(a, b):
    def f(x):
        return a.f(x) * b.f(x)

    def grad(x):
        return a.f(x)[:, None] * b.grad(x) + b.f(x)[:, None] * a.grad(x)

    def hess(x):
        ga, gb = a.grad(x), b.grad(x)
        return (a.f(x)[:, None, None] * b.hess(x) + b.f(x)[:, None, None] * a.hess(x)
                + ga[:, :, None] * gb[:, None, :] + gb[:, :, None] * ga[:, None, :])

    return ScalarField(f, grad, hess, f"{a.label}*{b.label}")


def _rows(x):
    x = np.asarray(x, dtype=np.float64)
    return x[None, :] if x.ndim == 1 else x


class CylindricalTestFunction:
    """``F(x, mu) = g0(x) * phi(<mu, psi_1>, ..., <mu, psi_k>)``.

    With ``k = 0`` (no ``psis``) the outer function is the constant 1 and F
    does not depend on the measure.  ``support_radius`` multiplies ``g0`` by a
    smooth bump so that F vanishes for ``|x| >= support_radius``.
    """

    def __init__(self, name, g0, psis=(), phi=None, phi_grad=None, support_radius=None):
        self.name = name
        self.psis = tuple(psis)
        if self.psis and (phi is None or phi_grad is None):
            raise ValueError("measure-dependent test functions need phi and phi_grad")
        if support_radius is not None:
            g0 = product_field(g0, bump(support_radius))
        self.g0 = g0
        self.phi = phi
        self.phi_grad = phi_grad
        self.support_radius = support_radius

    @property
    def k(self):
        return len(self.psis)

    @property
    def depends_on_measure(self):
        return bool(self.psis)

    def __repr__(self):
        return f"CylindricalTestFunction({self.name!r}, k={self.k})"

    # -- outer pieces -------------------------------------------------------
    def moments(self, mu):
        p = mu.probabilities
        return np.array([float(p @ psi.f(mu.points)) for psi in self.psis])

    def outer(self, mu):
        """``(phi(m), grad phi(m))`` at the moments of ``mu``."""
        if not self.psis:
            return 1.0, np.zeros(0)
        m = self.moments(mu)
        return float(self.phi(m)), np.asarray(self.phi_grad(m), dtype=np.float64)

    # -- evaluation ---------------------------------------------------------
    def value(self, x, mu, outer=None):
        phi, _ = outer or self.outer(mu)
        return self.g0.f(_rows(x)) * phi

    def grad_x(self, x, mu, outer=None):
        phi, _ = outer or self.outer(mu)
        return self.g0.grad(_rows(x)) * phi

    def hess_x(self, x, mu, outer=None):
        phi, _ = outer or self.outer(mu)
        return self.g0.hess(_rows(x)) * phi

    def measure_field_grad(self, u, mu, outer=None):
        """``sum_l d_l phi(m) grad psi_l(u)``; multiply by ``g0(x)`` for d_mu F."""
        u = _rows(u)
        _, dphi = outer or self.outer(mu)
        out = np.zeros(u.shape)
        for c, psi in zip(dphi, self.psis):
            if c:
                out += c * psi.grad(u)
        return out

    def measure_field_hess(self, u, mu, outer=None):
        u = _rows(u)
        _, dphi = outer or self.outer(mu)
        out = np.zeros(u.shape + (u.shape[1],))
        for c, psi in zip(dphi, self.psis):
            if c:
                out += c * psi.hess(u)
        return out

    def l_derivative(self, x, mu, u):
        """L-derivative ``d_mu F(x, mu)(u)`` for a single ``x``; shape ``(len(u), n)``."""
        g = float(self.g0.f(_rows(x))[0])
        return g * self.measure_field_grad(u, mu)

    def du_l_derivative(self, x, mu, u):
        """``d_u d_mu F(x, mu)(u)``; shape ``(len(u), n, n)``."""
        g = float(self.g0.f(_rows(x))[0])
        return g * self.measure_field_hess(u, mu)

    def martingale_coefficients(self, points, mu, weights):
        """Coefficients ``c_j`` of the noise term of ``(1/N) sum_i w_i F(X_i, mu_N)``.

        For the uniform N-particle cloud ``points`` with law proxy ``mu``, the
        Ito martingale increment of the weighted average is
        ``(1/N) sum_j c_j . sigma1(X_j) dB_j`` with
        ``c_j = w_j d_x F(X_j) + (1/N) sum_i w_i d_mu F(X_i)(X_j)``.
        """
        outer = self.outer(mu)
        c = weights[:, None] * self.grad_x(points, mu, outer)
        if self.psis:
            gbar = float(np.mean(weights * self.g0.f(points)))
            c = c + gbar * self.measure_field_grad(points, mu, outer)
        return c


def evaluate(F, x, mu):
    """``F(x, mu)``; scalar for a single point, array for a batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1 and x.shape[0] != mu.dim:
        raise ValueError(f"point has dimension {x.shape[0]}, measure has {mu.dim}")
    if x.ndim == 2 and x.shape[1] != mu.dim:
        raise ValueError(f"points have dimension {x.shape[1]}, measure has {mu.dim}")
    vals = F.value(x, mu)
    return float(vals[0]) if x.ndim == 1 else vals


def l_derivative(F, x, mu, u):
    return F.l_derivative(x, mu, u)


@dataclass
class GeneratorValue:
    drift: np.ndarray
    diffusion: np.ndarray
    measure_drift: np.ndarray
    measure_diffusion: np.ndarray

    @property
    def value(self):
        return self.drift + self.diffusion + self.measure_drift + self.measure_diffusion


def _diffusion_matrix(sig):
    return np.einsum("nid,njd->nij", sig, sig)


class GeneratorContext:
    """Coefficients at time ``t`` evaluated once on the law cloud ``mu``."""

    def __init__(self, coeffs, t, mu):
        self.coeffs = coeffs
        self.t = t
        self.mu = mu
        u = mu.points
        self.b1_u = np.asarray(coeffs.b1(t, u, mu), dtype=np.float64).reshape(u.shape)
        self.a_u = _diffusion_matrix(np.asarray(coeffs.sigma1(t, u, mu), dtype=np.float64)
                                     .reshape(u.shape[0], coeffs.n, coeffs.d))

    def coefficients_at(self, x):
        if x is self.mu.points:
            return self.b1_u, self.a_u
        c = self.coeffs
        b1 = np.asarray(c.b1(self.t, x, self.mu), dtype=np.float64).reshape(x.shape)
        a = _diffusion_matrix(np.asarray(c.sigma1(self.t, x, self.mu), dtype=np.float64)
                              .reshape(x.shape[0], c.n, c.d))
        return b1, a

    def apply(self, F, x=None):
        mu = self.mu
        x = mu.points if x is None else _rows(x)
        b1x, ax = self.coefficients_at(x)
        outer = F.outer(mu)
        drift = np.einsum("ni,ni->n", F.grad_x(x, mu, outer), b1x)
        diffusion = 0.5 * np.einsum("nij,nij->n", F.hess_x(x, mu, outer), ax)
        if F.depends_on_measure:
            p = mu.probabilities
            g = F.g0.f(x)
            md = float(p @ np.einsum("ni,ni->n", F.measure_field_grad(mu.points, mu, outer),
                                     self.b1_u))
            mv = 0.5 * float(p @ np.einsum("nij,nij->n",
                                           F.measure_field_hess(mu.points, mu, outer), self.a_u))
            measure_drift = g * md
            measure_diffusion = g * mv
        else:
            measure_drift = np.zeros(x.shape[0])
            measure_diffusion = np.zeros(x.shape[0])
        return GeneratorValue(drift, diffusion, measure_drift, measure_diffusion)


def apply_generator(coeffs, F, t, x, mu):
    """Mean-field generator applied to ``F`` at the points ``x``.

    ``LF = d_x F . b1 + 1/2 tr(d_x^2 F a) + int d_mu F(x, mu)(u) . b1(t, u, mu) mu(du)
    + 1/2 int tr(d_u d_mu F(x, mu)(u) a(t, u, mu)) mu(du)`` with
    ``a = sigma1 sigma1^T`` and the integrals taken as normalized averages over
    ``mu``.
    """
    return GeneratorContext(coeffs, t, mu).apply(F, x)


# ---------------------------------------------------------------------------
# L-derivative finite-difference validation

@dataclass
class LDerivativeReport:
    steps: np.ndarray
    quotients: np.ndarray
    observed_order: Optional[float]
    converged: bool


def check_l_derivative(F, mu, direction, steps=(1e-1, 1e-2, 1e-3, 1e-4), x=None):
    """Frechet quotient of the L-derivative along the pushforward ``mu o (I + h phi)^-1``.

    ``q(h) = [F(x, mu_h) - F(x, mu) - h <mu, d_mu F(x, mu) . phi>] / (h sqrt(<mu, |phi|^2>))``.
    A zero direction gives ``q = 0`` by convention.
    """
    x = np.asarray(mu.mean if x is None else x, dtype=np.float64).reshape(1, -1)
    phi = np.asarray(direction(mu.points), dtype=np.float64).reshape(mu.points.shape)
    p = mu.probabilities
    norm = float(np.sqrt(p @ np.sum(phi ** 2, axis=1)))
    steps = np.asarray(steps, dtype=np.float64)
    if norm == 0.0:
        return LDerivativeReport(steps, np.zeros_like(steps), None, True)
    base = float(F.value(x, mu)[0])
    lin = float(p @ np.sum(F.l_derivative(x[0], mu, mu.points) * phi, axis=1))
    q = np.empty_like(steps)
    for i, hstep in enumerate(steps):
        moved = WeightedEnsemble(mu.points + hstep * phi, mu.weights)
        q[i] = (float(F.value(x, moved)[0]) - base - hstep * lin) / (hstep * norm)
    aq = np.abs(q)
    usable = aq > 1e-9
    order = None
    if np.count_nonzero(usable) >= 2:
        order = float(np.polyfit(np.log(steps[usable]), np.log(aq[usable]), 1)[0])
    converged = bool(np.all(aq < 1e-9) or (aq[-1] < aq[0] and (order is None or order > 0.5)))
    return LDerivativeReport(steps, q, order, converged)


def check_oracles(F, x, mu, h=1e-5):
    """Largest relative disagreement between each analytic oracle and central differences."""
    x = _rows(x)
    n = x.shape[1]
    eye = np.eye(n)

    def rel(a, b):
        return float(np.max(np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))))

    out = {}
    g_fd = np.stack([(F.value(x + h * eye[j], mu) - F.value(x - h * eye[j], mu)) / (2 * h)
                     for j in range(n)], axis=1)
    out["grad_x"] = rel(F.grad_x(x, mu), g_fd)
    H_fd = np.stack([(F.grad_x(x + h * eye[j], mu) - F.grad_x(x - h * eye[j], mu)) / (2 * h)
                     for j in range(n)], axis=2)
    out["hess_x"] = rel(F.hess_x(x, mu), H_fd)
    if F.depends_on_measure:
        p = mu.probabilities
        pts = mu.points
        ld = F.l_derivative(x[0], mu, pts)
        ld_fd = np.zeros_like(ld)
        for j in range(mu.size):
            for c in range(n):
                plus = pts.copy()
                minus = pts.copy()
                plus[j, c] += h
                minus[j, c] -= h
                fp = F.value(x[:1], WeightedEnsemble(plus, mu.weights))[0]
                fm = F.value(x[:1], WeightedEnsemble(minus, mu.weights))[0]
                ld_fd[j, c] = (fp - fm) / (2 * h * p[j])
        out["l_derivative"] = rel(ld, ld_fd)
        dl_fd = np.stack([(F.l_derivative(x[0], mu, pts + h * eye[j])
                           - F.l_derivative(x[0], mu, pts - h * eye[j])) / (2 * h)
                          for j in range(n)], axis=2)
        out["du_l_derivative"] = rel(F.du_l_derivative(x[0], mu, pts), dl_fd)
        m = F.moments(mu)
        k = m.size
        e = np.eye(k)
        pg_fd = np.array([(F.phi(m + h * e[i]) - F.phi(m - h * e[i])) / (2 * h) for i in range(k)])
        out["phi_grad"] = rel(np.asarray(F.phi_grad(m)), pg_fd)
    return out


# ---------------------------------------------------------------------------
# registry

def _coordinate_alpha(n, *idx):
    alpha = np.zeros(n, dtype=int)
    for i in idx:
        alpha[i] += 1
    return alpha


def standard_family(dim=1, support_radius=None):
    """Named standard test functions, acting on the first coordinate.

    ``one``, ``x``, ``x2`` (monomials up to order two), ``mean`` = <mu, u>,
    ``moment2`` = <mu, u^2>, ``var`` = <mu, u^2> - <mu, u>^2 and the mixed
    ``x_mean`` = x <mu, u>.
    """
    n = dim
    one = constant_field(1.0, "1")
    x1 = monomial(_coordinate_alpha(n, 0))
    x2 = monomial(_coordinate_alpha(n, 0, 0))
    r = support_radius
    fam = {
        "one": CylindricalTestFunction("one", one),
        "x": CylindricalTestFunction("x", x1, support_radius=r),
        "x2": CylindricalTestFunction("x2", x2, support_radius=r),
        "mean": CylindricalTestFunction("mean", one, (x1,), lambda m: m[0],
                                        lambda m: np.array([1.0])),
        "moment2": CylindricalTestFunction("moment2", one, (x2,), lambda m: m[0],
                                           lambda m: np.array([1.0])),
        "var": CylindricalTestFunction("var", one, (x1, x2), lambda m: m[1] - m[0] ** 2,
                                       lambda m: np.array([-2.0 * m[0], 1.0])),
        "x_mean": CylindricalTestFunction("x_mean", x1, (x1,), lambda m: m[0],
                                          lambda m: np.array([1.0]), support_radius=r),
    }
    return fam


REGISTRY_NAMES = ("one", "x", "x2", "mean", "moment2", "var", "x_mean")


def resolve_family(names, dim=1):
    """Look up registry names, preserving order; ``None`` means the full registry."""
    fam = standard_family(dim)
    if names is None:
        return fam
    unknown = [nm for nm in names if nm not in fam]
    if unknown:
        raise KeyError(f"unknown test functions {unknown}; registry has {list(fam)}")
    return {nm: fam[nm] for nm in names}


def as_family(family):
    if isinstance(family, dict):
        return family
    return {F.name: F for F in family}
