"""Closed-form references used to validate the particle solvers."""
import numpy as np


def kalman_bucy(a, s, c, g, x0, dt, dY, epsilon=1.0, P0=0.0):
    """Euler integration of the scalar Kalman-Bucy filter on a uniform grid.

    Model ``dX = a X dt + s dB``, ``dY = sqrt(eps) c X dt + g dW`` with
    ``X_0 = x0`` known.  ``dY`` holds the observation increments, one per step.

    Returns ``(mean, variance)`` arrays of length ``len(dY) + 1``.
    """
    dY = np.asarray(dY, dtype=np.float64).reshape(-1)
    ce = np.sqrt(epsilon) * c
    K = dY.shape[0]
    m = np.empty(K + 1)
    P = np.empty(K + 1)
    m[0], P[0] = x0, P0
    for k in range(K):
        gain = P[k] * ce / (g * g)
        m[k + 1] = m[k] + a * m[k] * dt + gain * (dY[k] - ce * m[k] * dt)
        P[k + 1] = P[k] + (2 * a * P[k] + s * s - (P[k] * ce / g) ** 2) * dt
    return m, P


def mean_field_linear_mean(a, abar, x0, times):
    return x0 * np.exp((a + abar) * np.asarray(times))


def ou_mean(theta, x0, times):
    return x0 * np.exp(-theta * np.asarray(times))
