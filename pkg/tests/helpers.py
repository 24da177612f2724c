"""Shared builders and small independent oracles for the test suite."""

import numpy as np

from selfstab.model import ModelSpec, RadialProfile


def linear_model(rate=1.0, phi_slope=1.0):
    """V(x) = -rate*x in one dimension with phi(u) = phi_slope*u."""

    def potential(x):
        return 0.5 * rate * x[..., 0] ** 2

    def grad(x):
        return rate * np.asarray(x, dtype=float)

    def hessian(x):
        shape = np.shape(x)[:-1]
        return np.broadcast_to(rate * np.eye(1), shape + (1, 1)).copy()

    return ModelSpec.gradient(1, potential, grad,
                              RadialProfile.polynomial([0.0, phi_slope]),
                              growth_order=0, hessian=hessian)


def double_well_model():
    """U = x^4/4 - x^2/2, minima at +-1."""

    def potential(x):
        return x[..., 0] ** 4 / 4.0 - x[..., 0] ** 2 / 2.0

    def grad(x):
        return np.asarray(x, dtype=float) ** 3 - np.asarray(x, dtype=float)

    def hessian(x):
        return (3.0 * x[..., 0] ** 2 - 1.0)[..., None, None]

    return ModelSpec.gradient(1, potential, grad,
                              RadialProfile.polynomial([0.0, 1.0]),
                              growth_order=2, hessian=hessian)


def quartic_model():
    """U = x^4/4: contracting but with vanishing curvature at the origin."""

    def potential(x):
        return x[..., 0] ** 4 / 4.0

    def grad(x):
        return np.asarray(x, dtype=float) ** 3

    def hessian(x):
        return (3.0 * x[..., 0] ** 2)[..., None, None]

    return ModelSpec.gradient(1, potential, grad,
                              RadialProfile.polynomial([0.0, 1.0]),
                              growth_order=2, hessian=hessian)


def expanding_model():
    """V(x) = +x: violates dissipativity everywhere."""

    def grad(x):
        return -np.asarray(x, dtype=float)

    return ModelSpec.gradient(1, lambda x: -0.5 * x[..., 0] ** 2, grad,
                              RadialProfile.polynomial([0.0, 1.0]),
                              growth_order=0)


def ou_selfstab_variance(times, rate, phi_slope, epsilon):
    """Second moment of the deviation from the flow for the linear
    self-stabilizing process: vdot = -2(rate+phi_slope) v + epsilon."""
    a = 2.0 * (rate + phi_slope)
    return (epsilon / a) * (1.0 - np.exp(-a * times))


def euler_ou_variance(n_steps, dt, rate, epsilon):
    """Exact discrete-scheme variance of Euler steps on dX = -rate*X dt
    + sqrt(eps) dW from 0; oracle for weak-convergence checks."""
    q = (1.0 - rate * dt) ** 2
    out = np.empty(n_steps + 1)
    v = 0.0
    out[0] = v
    for k in range(n_steps):
        v = q * v + epsilon * dt
        out[k + 1] = v
    return out


def central_difference_gradient(f, x, h=1e-5):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = h
        out[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return out
