"""Deterministic flows of the drift field and stability diagnostics.

Fixed-step classic Runge-Kutta is used throughout: every consumer
(drift tabulation, action evaluation, path dumps) wants a uniform time
grid, and adaptivity would only complicate them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import qmc

from .model import interaction_force

__all__ = [
    "PathSample",
    "DivergenceError",
    "EquilibriumError",
    "StabilityReport",
    "integrate_flow",
    "integrate_relaxed_flow",
    "find_equilibrium",
    "verify_domain_stability",
]


class DivergenceError(RuntimeError):
    """Trajectory left the divergence guard; usually a model that is not
    dissipative on the integration range."""

    def __init__(self, message, step, state):
        self.step = step
        self.state = state
        super().__init__(message)


class EquilibriumError(RuntimeError):
    pass


@dataclass(frozen=True)
class PathSample:
    """A trajectory on a uniform time grid: states[k] at t0 + k*dt."""

    t0: float
    dt: float
    states: np.ndarray

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        object.__setattr__(self, "states", states)
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if states.shape[0] < 1:
            raise ValueError("path needs at least one state")
        if not np.all(np.isfinite(states)):
            raise ValueError("path contains non-finite states")

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.states.shape[0])

    @property
    def horizon(self):
        return self.t0 + self.dt * (self.states.shape[0] - 1)

    @property
    def final(self):
        return self.states[-1]

    @property
    def dim(self):
        return self.states.shape[1]

    def state_at(self, t):
        """Linear interpolation on the grid; t may be scalar or array."""
        t = np.asarray(t, dtype=float)
        s = (t - self.t0) / self.dt
        n = self.states.shape[0] - 1
        if np.any(s < -1e-9) or np.any(s > n + 1e-9):
            raise ValueError("time %s outside path horizon [%g, %g]"
                             % (t, self.t0, self.horizon))
        s = np.clip(s, 0.0, n)
        i0 = np.minimum(s.astype(int), n - 1) if n > 0 else np.zeros_like(s, dtype=int)
        w = s - i0
        if t.ndim == 0:
            return (1.0 - w) * self.states[int(i0)] + w * self.states[min(int(i0) + 1, n)]
        return (1.0 - w[..., None]) * self.states[i0] + w[..., None] * self.states[np.minimum(i0 + 1, n)]


def _steps_for(horizon, dt):
    n = max(1, int(round(horizon / dt)))
    return n, horizon / n


def _rk4(f, x0, n_steps, dt, bound):
    """Classic fourth-order steps; x0 may be (d,) or a batch (m, d)."""
    x = np.array(x0, dtype=float)
    out = np.empty((n_steps + 1,) + x.shape)
    out[0] = x
    for k in range(n_steps):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if np.any(np.linalg.norm(np.atleast_2d(x), axis=-1) > bound):
            raise DivergenceError(
                "flow exceeded divergence bound %g at step %d" % (bound, k + 1),
                step=k + 1, state=x,
            )
        out[k + 1] = x
    return out


def integrate_flow(model, x0, horizon, dt=1e-3, bound=1e6):
    """Integrate xdot = V(x) from x0 over [0, horizon]."""
    if horizon <= 0 or dt <= 0:
        raise ValueError("horizon and dt must be positive")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n, dt_eff = _steps_for(horizon, dt)
    states = _rk4(model.drift, x0, n, dt_eff, bound)
    return PathSample(t0=0.0, dt=dt_eff, states=states)


def integrate_relaxed_flow(model, x_stable, y0, horizon, dt=1e-3, bound=1e6):
    """Flow of the interaction-relaxed field V(x) - F(x - x_stable)."""
    x_stable = np.atleast_1d(np.asarray(x_stable, dtype=float))

    def f(x):
        return model.drift(x) - interaction_force(model, x - x_stable)

    if horizon <= 0 or dt <= 0:
        raise ValueError("horizon and dt must be positive")
    y0 = np.atleast_1d(np.asarray(y0, dtype=float))
    n, dt_eff = _steps_for(horizon, dt)
    states = _rk4(f, y0, n, dt_eff, bound)
    return PathSample(t0=0.0, dt=dt_eff, states=states)


def find_equilibrium(model, guess, tol=1e-10, max_iter=60):
    """Locate a zero of V by damped Newton, verifying local stability.

    Falls back to a long flow integration when Newton stalls. Raises
    EquilibriumError on non-convergence or if the located zero is not
    attracting (some symmetrized-Jacobian eigenvalue >= 0).
    """
    x = np.atleast_1d(np.asarray(guess, dtype=float))

    def newton(x):
        for _ in range(max_iter):
            v = np.asarray(model.drift(x), dtype=float)
            if np.linalg.norm(v) <= tol:
                return x, True
            J = model.drift_jacobian(x)
            try:
                step = np.linalg.solve(J, -v)
            except np.linalg.LinAlgError:
                return x, False
            lam = 1.0
            base = np.linalg.norm(v)
            for _ in range(30):
                trial = x + lam * step
                if np.linalg.norm(model.drift(trial)) < base:
                    x = trial
                    break
                lam *= 0.5
            else:
                return x, False
        return x, np.linalg.norm(model.drift(x)) <= tol

    def attracting(x):
        J = model.drift_jacobian(x)
        return np.linalg.eigvalsh(0.5 * (J + J.T))

    x1, ok1 = newton(x)
    eigs1 = attracting(x1) if ok1 else None
    if ok1 and eigs1[-1] < 0.0:
        return x1
    # Newton stalled or landed on a repeller; ride the flow toward the
    # attractor of the guess's basin and retry
    try:
        path = integrate_flow(model, np.atleast_1d(guess), horizon=50.0, dt=1e-2)
        x2, ok2 = newton(path.final)
    except DivergenceError:
        x2, ok2 = None, False
    if ok2:
        eigs2 = attracting(x2)
        if eigs2[-1] < 0.0:
            return x2
        raise EquilibriumError(
            "located zero %s is not attracting: symmetrized-Jacobian eigenvalues %s"
            % (x2, eigs2)
        )
    if ok1:
        raise EquilibriumError(
            "located zero %s is not attracting: symmetrized-Jacobian eigenvalues %s"
            % (x1, eigs1)
        )
    raise EquilibriumError(
        "no equilibrium within tolerance %g from guess %s" % (tol, np.asarray(guess))
    )


@dataclass(frozen=True)
class StabilityReport:
    n_checked: int
    escaped: tuple       # start points whose trajectory left the domain
    not_attracted: tuple  # start points that missed the target ball by horizon
    reach_tol: float

    @property
    def passed(self):
        return not self.escaped and not self.not_attracted

    def __str__(self):
        if self.passed:
            return "domain stability: PASS (%d trajectories)" % self.n_checked
        return ("domain stability: FAIL (%d escaped, %d not attracted of %d)"
                % (len(self.escaped), len(self.not_attracted), self.n_checked))


def verify_domain_stability(model, domain, x_stable, n_boundary=64, horizon=20.0,
                            dt=1e-3, inward_offset=None, reach_tol=None,
                            n_interior=64, seed=0):
    """Check that the relaxed flow keeps the domain invariant and pulls
    every start toward x_stable.

    Integrates from points just inside the boundary and from a
    quasi-random interior sample; the report lists any trajectory that
    leaves the domain or fails to enter the ball of radius ``reach_tol``
    around x_stable by the horizon.
    """
    x_stable = np.atleast_1d(np.asarray(x_stable, dtype=float))
    if not domain.contains(x_stable):
        raise ValueError("x_stable %s is not inside the domain" % x_stable)
    scale = domain.scale
    offset = 1e-3 * scale if inward_offset is None else inward_offset
    tol = 1e-2 * scale if reach_tol is None else reach_tol

    boundary = domain.boundary_points(n_boundary)
    starts = [boundary + (x_stable - boundary) * (offset / np.maximum(
        np.linalg.norm(boundary - x_stable, axis=-1, keepdims=True), 1e-12))]
    if n_interior > 0:
        sampler = qmc.Halton(d=model.dim, seed=seed)
        lo, hi = domain.bounding_box()
        raw = qmc.scale(sampler.random(4 * n_interior), lo, hi)
        inside = raw[domain.contains(raw)][:n_interior]
        if len(inside):
            starts.append(inside)
    starts = np.concatenate(starts, axis=0)

    def f(x):
        return model.drift(x) - interaction_force(model, x - x_stable)

    n, dt_eff = _steps_for(horizon, dt)
    x = starts.copy()
    ever_left = np.zeros(len(starts), dtype=bool)
    for _ in range(n):
        k1 = f(x)
        k2 = f(x + 0.5 * dt_eff * k1)
        k3 = f(x + 0.5 * dt_eff * k2)
        k4 = f(x + dt_eff * k3)
        x = x + (dt_eff / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ever_left |= ~domain.contains(x)
    final_dist = np.linalg.norm(x - x_stable, axis=-1)
    missed = (final_dist > tol) & ~ever_left
    return StabilityReport(
        n_checked=len(starts),
        escaped=tuple(map(tuple, starts[ever_left])),
        not_attracted=tuple(map(tuple, starts[missed])),
        reach_tol=tol,
    )
