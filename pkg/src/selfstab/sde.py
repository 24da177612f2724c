"""Euler-Maruyama engines for the process family.

Five modes share one stepping scheme:

* classical      -- drift V only
* particle       -- N interacting copies, pairwise mean attraction
* frozen         -- V minus a precomputed drift field, with time offset
* limiting       -- V minus attraction to a fixed stable point
* tracking       -- V minus attraction to the deterministic flow

Strong order is 1/2 and that is deliberate: everything downstream is
about exponential asymptotics, not pathwise accuracy.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .flow import PathSample
from .model import interaction_force
from .noise import NoisePlan

__all__ = [
    "Classical",
    "Particle",
    "Frozen",
    "Limiting",
    "Tracking",
    "BlowupError",
    "MomentCurve",
    "MomentReport",
    "simulate",
    "simulate_ensemble",
    "empirical_moment",
    "moment_bound_check",
]


class BlowupError(RuntimeError):
    def __init__(self, message, trial, step):
        self.trial = trial
        self.step = step
        super().__init__(message)


@dataclass(frozen=True)
class Classical:
    pass


@dataclass(frozen=True)
class Particle:
    n_particles: int

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("particle mode needs N >= 1")


@dataclass(frozen=True)
class Frozen:
    field: object          # DriftField
    s: float = 0.0         # time offset into the field


@dataclass(frozen=True)
class Limiting:
    x_stable: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "x_stable",
                           np.atleast_1d(np.asarray(self.x_stable, dtype=float)))


@dataclass(frozen=True)
class Tracking:
    flow_path: PathSample  # cached deterministic flow psi(x0)
    s: float = 0.0


def make_drift(model, mode):
    """Batched drift function f(t, X) for every non-particle mode."""
    if isinstance(mode, Classical):
        return lambda t, X: model.drift(X)
    if isinstance(mode, Frozen):
        def f(t, X, _field=mode.field, _s=mode.s):
            return model.drift(X) - _field.eval(t + _s, X)
        return f
    if isinstance(mode, Limiting):
        def f(t, X, _x=mode.x_stable):
            return model.drift(X) - interaction_force(model, X - _x)
        return f
    if isinstance(mode, Tracking):
        def f(t, X, _path=mode.flow_path, _s=mode.s):
            ref = _path.state_at(t + _s)
            return model.drift(X) - interaction_force(model, X - ref)
        return f
    raise TypeError("unsupported mode %r" % (mode,))


def _check_frozen_horizon(mode, horizon):
    if isinstance(mode, (Frozen, Tracking)):
        limit = mode.field.horizon if isinstance(mode, Frozen) else mode.flow_path.horizon
        if mode.s + horizon > limit + 1e-9:
            raise ValueError(
                "horizon %g with offset %g overruns the cached drift horizon %g"
                % (horizon, mode.s, limit)
            )


def _pairwise_mean_force(model, X):
    """(1/N) sum_j F(X_i - X_j) for every i; direct O(N^2) summation."""
    diff = X[:, None, :] - X[None, :, :]
    return interaction_force(model, diff).mean(axis=1)


def simulate(model, mode, x_init, epsilon, horizon, noise: NoisePlan, trial=0,
             guard=1e6, record=True):
    """Simulate one trial; returns a PathSample, or a list of N
    PathSamples in particle mode.

    The noise stream of (trial, particle) is fixed by the plan, so
    identical arguments reproduce identical paths bitwise.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    _check_frozen_horizon(mode, horizon)
    dt = noise.dt
    n_steps = max(1, int(round(horizon / dt)))
    dt = horizon / n_steps
    sqrt_eps_dt = np.sqrt(epsilon) * np.sqrt(dt)
    d = model.dim
    x_init = np.asarray(x_init, dtype=float)

    if isinstance(mode, Particle):
        N = mode.n_particles
        X = np.tile(x_init, (N, 1)) if x_init.ndim == 1 else x_init.copy()
        if X.shape != (N, d):
            raise ValueError("particle initial condition must be (d,) or (N, d)")
        out = np.empty((n_steps + 1, N, d))
        out[0] = X
        chunk = 1024
        for s0 in range(0, n_steps, chunk):
            n = min(chunk, n_steps - s0)
            dW = noise.particle_block(trial, np.arange(N), s0, n, d)
            for k in range(n):
                s = s0 + k
                drift = model.drift(X) - _pairwise_mean_force(model, X)
                X = X + drift * dt + sqrt_eps_dt * dW[k]
                _guard_state(X, trial, s + 1, guard)
                out[s + 1] = X
        return [PathSample(t0=0.0, dt=dt, states=out[:, i, :]) for i in range(N)]

    f = make_drift(model, mode)
    X = np.atleast_1d(x_init).astype(float)
    out = np.empty((n_steps + 1, d))
    out[0] = X
    chunk = 4096
    for s0 in range(0, n_steps, chunk):
        n = min(chunk, n_steps - s0)
        dW = noise.gaussian_increments(trial, 0, n, d, start_step=s0)
        for k in range(n):
            s = s0 + k
            X = X + f(s * dt, X) * dt + sqrt_eps_dt * dW[k]
            _guard_state(X, trial, s + 1, guard)
            out[s + 1] = X
    return PathSample(t0=0.0, dt=dt, states=out)


def _guard_state(X, trial, step, guard):
    norms = np.linalg.norm(np.atleast_2d(X), axis=-1)
    if not np.all(np.isfinite(norms)) or np.any(norms > guard):
        raise BlowupError(
            "state exceeded guard %g at step %d (trial %d)" % (guard, step, trial),
            trial=trial, step=step,
        )


def simulate_ensemble(model, mode, x_init, epsilon, horizon, noise: NoisePlan,
                      trials, guard=1e6, keep_every=1):
    """Many independent trials of a non-particle mode, stepped together.

    Returns (times, states) with states of shape
    (n_trials, n_kept_times, d). Bitwise equal to running the trials one
    at a time through `simulate`.
    """
    if isinstance(mode, Particle):
        raise TypeError("use simulate() per trial for particle mode")
    _check_frozen_horizon(mode, horizon)
    trials = np.asarray(list(trials), dtype=int)
    dt = noise.dt
    n_steps = max(1, int(round(horizon / dt)))
    dt = horizon / n_steps
    sqrt_eps_dt = np.sqrt(epsilon) * np.sqrt(dt)
    d = model.dim
    f = make_drift(model, mode)
    X = np.tile(np.atleast_1d(np.asarray(x_init, dtype=float)), (len(trials), 1))
    kept = [0] + [s for s in range(1, n_steps + 1) if s % keep_every == 0 or s == n_steps]
    states = np.empty((len(trials), len(kept), d))
    states[:, 0] = X
    keep_pos = {s: i for i, s in enumerate(kept)}
    chunk = 2048
    for s0 in range(0, n_steps, chunk):
        n = min(chunk, n_steps - s0)
        dW = noise.gaussian_block(trials, 0, s0, n, d)
        for k in range(n):
            s = s0 + k
            X = X + f(s * dt, X) * dt + sqrt_eps_dt * dW[k]
            if s + 1 in keep_pos:
                states[:, keep_pos[s + 1]] = X
        _guard_state(X, int(trials[0]), s0 + n, guard)
    times = np.array(kept) * dt
    return times, states


# ---------------------------------------------------------------------------
# moment diagnostics


@dataclass(frozen=True)
class MomentCurve:
    times: np.ndarray
    values: np.ndarray   # sample mean of |X_t - ref_t|^order
    stderr: np.ndarray
    order: int
    n_samples: int


def empirical_moment(paths, reference: PathSample, order=2):
    """Per-time estimate of E |X_t - ref_t|^order with standard errors.

    ``paths`` is either a list of PathSample on the reference grid or a
    stacked array (M, n_times, d); grids must match exactly.
    """
    if order < 2 or order % 2 != 0:
        raise ValueError("order must be a positive even integer")
    if isinstance(paths, np.ndarray):
        stack = paths
        times = reference.times
        if stack.shape[1] != len(times):
            raise ValueError("path grid does not match the reference grid")
    else:
        paths = list(paths)
        if not paths:
            raise ValueError("no paths given")
        for p in paths:
            if abs(p.dt - reference.dt) > 1e-12 or p.states.shape != reference.states.shape:
                raise ValueError("path grid does not match the reference grid")
        stack = np.stack([p.states for p in paths])
        times = reference.times
    dev = np.linalg.norm(stack - reference.states[None], axis=-1) ** order
    mean = dev.mean(axis=0)
    se = dev.std(axis=0, ddof=1) / np.sqrt(stack.shape[0])
    return MomentCurve(times=times, values=mean, stderr=se, order=order,
                       n_samples=stack.shape[0])


@dataclass(frozen=True)
class MomentReport:
    curve_bound_ok: bool
    uniform_bound_ok: Optional[bool]
    worst_curve_excess: float
    worst_uniform_excess: float
    uniform_bound: Optional[float]

    @property
    def passed(self):
        return self.curve_bound_ok and (self.uniform_bound_ok in (True, None))


def moment_bound_check(model, constants, curve: MomentCurve, epsilon,
                       global_convexity=False, slack=0.1):
    """Check the second-moment growth bound eps*t*d*exp(2Kt) and, under
    global convexity, the uniform plateau bound eps*d/(2 K_V).

    Tolerance is a multiplicative ``slack`` plus three standard errors.
    """
    if curve.order != 2:
        raise ValueError("bounds apply to the second moment")
    d = model.dim
    K = constants.k_upper
    bound = epsilon * curve.times * d * np.exp(2.0 * K * curve.times)
    allowance = bound * slack + 3.0 * curve.stderr
    curve_excess = curve.values - (bound + allowance)
    curve_ok = bool(np.all(curve_excess <= 0))
    uniform_ok = None
    uniform_bound = None
    worst_uniform = 0.0
    if global_convexity:
        uniform_bound = epsilon * d / (2.0 * constants.k_convex)
        u_allow = uniform_bound * slack + 3.0 * curve.stderr
        u_excess = curve.values - (uniform_bound + u_allow)
        uniform_ok = bool(np.all(u_excess <= 0))
        worst_uniform = float(np.max(u_excess))
    return MomentReport(
        curve_bound_ok=curve_ok,
        uniform_bound_ok=uniform_ok,
        worst_curve_excess=float(np.max(curve_excess)),
        worst_uniform_excess=worst_uniform,
        uniform_bound=uniform_bound,
    )
