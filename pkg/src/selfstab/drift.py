"""Self-consistent interaction drift via fixed-point iteration.

The drift b(t, x) that averages the attraction force against the law of
the process is constructed by iterating the map b -> mean of
F(x - X^(b)_t) over an ensemble of trajectories driven by b. One
ensemble of M paths serves every (t, x): the expectation is over the
law of the process and does not depend on the query point, so the map
is tabulated on a time-space grid with multilinear interpolation and an
exact-for-linear-F tail fallback outside the box.

The iteration reuses the same noise in every sweep (common random
numbers), which makes the empirical map deterministic and the recorded
contraction ratios meaningful. A fresh-noise mode exists for bias
diagnostics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field as dc_field
from typing import Optional

import numpy as np

from .flow import PathSample, integrate_flow
from .model import interaction_force
from .noise import NoisePlan

__all__ = [
    "DriftField",
    "DriftGridSpec",
    "EnsembleSnapshot",
    "ConvergenceLog",
    "DriftConvergenceError",
    "TrajectoryBlowupError",
    "drift_eval",
    "lambda_norm",
    "field_difference",
    "gamma_apply",
    "solve_self_consistent_drift",
    "limit_drift",
    "save_drift_field",
    "load_drift_field",
]


class DriftConvergenceError(RuntimeError):
    def __init__(self, message, log):
        self.log = log
        super().__init__(message)


class TrajectoryBlowupError(RuntimeError):
    def __init__(self, message, seed, trajectory):
        self.seed = seed
        self.trajectory = trajectory
        super().__init__(message)


@dataclass(frozen=True)
class EnsembleSnapshot:
    """Monte Carlo sample of the process law at one time."""

    time: float
    particles: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.particles, dtype=float)
        if p.ndim != 2 or p.shape[0] < 2:
            raise ValueError("snapshot needs at least two particles, shape (M, d)")
        if not np.all(np.isfinite(p)):
            raise ValueError("snapshot contains non-finite particles")

    @property
    def mean(self):
        return self.particles.mean(axis=0)


@dataclass
class DriftField:
    """Tabulated time-space drift with interpolation and tail fallback.

    values has shape (n_times, *grid_shape, d) on the uniform axes;
    ensemble_mean has shape (n_times, d). Outside the spatial box the
    field evaluates to F(x - ensemble_mean(t)), which is exact when the
    interaction force is linear.
    """

    model: object
    times: np.ndarray
    axes: tuple
    values: np.ndarray
    ensemble_mean: np.ndarray
    weight_order: int

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.ensemble_mean = np.asarray(self.ensemble_mean, dtype=float)
        if len(self.times) < 2:
            raise ValueError("field needs at least two time nodes")
        steps = np.diff(self.times)
        if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * steps[0]:
            raise ValueError("time grid must be uniform and increasing")
        for ax in self.axes:
            if len(ax) > 1:
                d = np.diff(ax)
                if np.any(d <= 0) or np.ptp(d) > 1e-9 * d[0]:
                    raise ValueError("spatial grids must be uniform and increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        if self.ensemble_mean.shape != (len(self.times), self.dim):
            raise ValueError("need one ensemble mean per time node")

    @property
    def dim(self):
        return len(self.axes)

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def t_step(self):
        return float(self.times[1] - self.times[0])

    @property
    def grid_shape(self):
        return tuple(len(ax) for ax in self.axes)

    def nodes(self):
        """All grid nodes as a flat (n_nodes, d) array, C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def box(self):
        return [(float(ax[0]), float(ax[-1])) for ax in self.axes]

    def _time_blend(self, t):
        if t < -1e-9 or t > self.horizon + 1e-9:
            raise ValueError("time %g outside field horizon [0, %g]" % (t, self.horizon))
        s = np.clip(t / self.t_step, 0.0, len(self.times) - 1)
        i0 = min(int(s), len(self.times) - 2)
        w = s - i0
        return i0, w

    def eval(self, t, x):
        """Drift at scalar time t and points x of shape (d,) or (m, d)."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        X = np.atleast_2d(x)
        i0, w = self._time_blend(float(t))
        slab = (1.0 - w) * self.values[i0] + w * self.values[i0 + 1]
        mean_t = (1.0 - w) * self.ensemble_mean[i0] + w * self.ensemble_mean[i0 + 1]

        inside = np.ones(len(X), dtype=bool)
        for a, ax in enumerate(self.axes):
            inside &= (X[:, a] >= ax[0] - 1e-12) & (X[:, a] <= ax[-1] + 1e-12)
        out = np.empty_like(X)
        if np.any(inside):
            out[inside] = _multilinear(self.axes, slab, X[inside])
        if not np.all(inside):
            out[~inside] = interaction_force(self.model, X[~inside] - mean_t)
        return out[0] if single else out

    def node_norms(self):
        return np.linalg.norm(self.nodes(), axis=-1)


def _multilinear(axes, slab, X):
    """Multilinear interpolation of slab (shape grid_shape + (d,)) at X (m, d)."""
    m, d = X.shape
    idx, frac = [], []
    for a, ax in enumerate(axes):
        n = len(ax)
        if n == 1:
            idx.append(np.zeros(m, dtype=int))
            frac.append(np.zeros(m))
            continue
        step = ax[1] - ax[0]
        s = (X[:, a] - ax[0]) / step
        i = np.clip(s.astype(int), 0, n - 2)
        idx.append(i)
        frac.append(np.clip(s - i, 0.0, 1.0))
    out = np.zeros((m, slab.shape[-1]))
    for corner in range(2 ** d):
        weight = np.ones(m)
        ix = []
        for a in range(d):
            bit = (corner >> a) & 1
            weight = weight * (frac[a] if bit else (1.0 - frac[a]))
            ix.append(np.minimum(idx[a] + bit, len(axes[a]) - 1))
        out += weight[:, None] * slab[tuple(ix)]
    return out


def drift_eval(field, t, x):
    """Function-style access to DriftField.eval."""
    return field.eval(t, x)


def lambda_norm(field, q=None):
    """Weighted sup norm over the grid: max |b| / (1 + |x|^(2q)).

    A discrete under-approximation of the continuum supremum over all of
    space; documented as such.
    """
    q = field.weight_order if q is None else q
    weights = 1.0 + field.node_norms() ** (2 * q)
    flat = field.values.reshape(len(field.times), -1, field.dim)
    mags = np.linalg.norm(flat, axis=-1)
    return float(np.max(mags / weights[None, :]))


def field_difference(a, b):
    """Field holding a - b on the shared grid (means taken from a)."""
    if a.grid_shape != b.grid_shape or len(a.times) != len(b.times):
        raise ValueError("fields must share their grids")
    if abs(a.horizon - b.horizon) > 1e-9:
        raise ValueError("fields must share their horizon")
    return DriftField(
        model=a.model,
        times=a.times,
        axes=a.axes,
        values=a.values - b.values,
        ensemble_mean=a.ensemble_mean,
        weight_order=a.weight_order,
    )


@dataclass(frozen=True)
class DriftGridSpec:
    """Resolution of the tabulation grid; box=None derives it from the
    deterministic flow's bounding box inflated by max(3 sqrt(eps T), 1)."""

    n_times: int = 41
    nodes_per_axis: int = 33
    box: Optional[tuple] = None


def _auto_box(flow_path, epsilon, horizon):
    lo = flow_path.states.min(axis=0)
    hi = flow_path.states.max(axis=0)
    pad = max(3.0 * np.sqrt(max(epsilon, 0.0) * horizon), 1.0)
    return [(float(l - pad), float(h + pad)) for l, h in zip(lo, hi)]


def _tabulate_force_mean(model, nodes, particles, chunk=4000):
    """Mean over particles of F(node - particle), for all nodes."""
    total = np.zeros((len(nodes), particles.shape[-1]))
    for start in range(0, len(particles), chunk):
        batch = particles[start:start + chunk]
        diff = nodes[:, None, :] - batch[None, :, :]
        total += interaction_force(model, diff).sum(axis=1)
    return total / len(particles)


def _simulate_gamma_ensemble(model, b_field, x0, epsilon, M, plan, dt, n_steps,
                             slab_steps, trial_offset, guard=1e6,
                             memory_budget=48_000_000):
    """Euler ensemble under drift V - b; returns snapshots (n_times, M, d)."""
    d = model.dim
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    n_times = n_steps // slab_steps + 1
    snapshots = np.empty((n_times, M, d))
    sqeps = np.sqrt(epsilon)
    block = max(1, min(M, memory_budget // max(1, n_steps * d * 8)))
    for start in range(0, M, block):
        stop = min(M, start + block)
        ids = np.arange(start, stop)
        dW = plan.gaussian_block(ids + trial_offset, 0, 0, n_steps, d)
        X = np.tile(x0, (stop - start, 1))
        snapshots[0, start:stop] = X
        for s in range(n_steps):
            t = s * dt
            drift = model.drift(X) - b_field.eval(t, X)
            X = X + drift * dt + sqeps * np.sqrt(dt) * dW[s]
            if (s + 1) % slab_steps == 0:
                snapshots[(s + 1) // slab_steps, start:stop] = X
            bad = ~np.isfinite(X).all(axis=-1)
            bad |= np.linalg.norm(X, axis=-1) > guard
            if np.any(bad):
                j = int(ids[np.argmax(bad)])
                raise TrajectoryBlowupError(
                    "ensemble trajectory %d exceeded guard %g at step %d "
                    "(base seed %d)" % (j, guard, s + 1, plan.base_seed),
                    seed=plan.base_seed, trajectory=j,
                )
    return snapshots


def gamma_apply(model, b_field, x0, epsilon, M, noise_seed, dt=1e-3,
                trial_offset=0, guard=1e6):
    """One sweep of the drift map: simulate M trajectories under b, then
    tabulate the ensemble-averaged attraction force on b's grid.

    Returns the new field and the list of ensemble snapshots (one per
    grid time). Noise stream j derives from (noise_seed, trial_offset+j).
    """
    if epsilon < 0:
        raise ValueError("epsilon must be nonnegative")
    if M < 2:
        raise ValueError("need at least two trajectories")
    plan = NoisePlan(base_seed=noise_seed, dt=dt)
    slab_steps = max(1, int(round(b_field.t_step / dt)))
    # align the step count with the field grid so snapshots land on nodes
    n_steps = slab_steps * (len(b_field.times) - 1)
    dt_eff = b_field.horizon / n_steps
    snaps = _simulate_gamma_ensemble(model, b_field, x0, epsilon, M, plan, dt_eff,
                                     n_steps, slab_steps, trial_offset, guard)
    nodes = b_field.nodes()
    values = np.empty_like(b_field.values)
    means = snaps.mean(axis=1)
    flat = values.reshape(len(b_field.times), -1, model.dim)
    for i in range(len(b_field.times)):
        flat[i] = _tabulate_force_mean(model, nodes, snaps[i])
    new_field = DriftField(
        model=model,
        times=b_field.times,
        axes=b_field.axes,
        values=flat.reshape(b_field.values.shape),
        ensemble_mean=means,
        weight_order=b_field.weight_order,
    )
    snapshots = [EnsembleSnapshot(time=float(t), particles=snaps[i])
                 for i, t in enumerate(b_field.times)]
    return new_field, snapshots


@dataclass
class ConvergenceLog:
    increments: list = dc_field(default_factory=list)  # lambda norm of b_{i+1}-b_i
    ratios: list = dc_field(default_factory=list)      # empirical contraction
    iterate_norms: list = dc_field(default_factory=list)
    converged: bool = False
    iterations: int = 0

    def record(self, increment, iterate_norm):
        if self.increments:
            prev = self.increments[-1]
            self.ratios.append(increment / prev if prev > 0 else np.nan)
        self.increments.append(increment)
        self.iterate_norms.append(iterate_norm)
        self.iterations += 1


def initial_drift_field(model, flow_path, epsilon, grid=None, weight_order=None):
    """Zeroth iterate: the small-noise limit F(x - psi_t(x0)) tabulated
    on the grid, with the flow itself as the ensemble mean."""
    grid = grid or DriftGridSpec()
    box = grid.box or _auto_box(flow_path, epsilon, flow_path.horizon)
    axes = tuple(np.linspace(lo, hi, grid.nodes_per_axis) for lo, hi in box)
    times = np.linspace(0.0, flow_path.horizon, grid.n_times)
    mesh = np.meshgrid(*axes, indexing="ij")
    nodes = np.stack([m.ravel() for m in mesh], axis=-1)
    q = model.weight_order if weight_order is None else weight_order
    values = np.empty((len(times),) + tuple(len(a) for a in axes) + (model.dim,))
    flat = values.reshape(len(times), -1, model.dim)
    means = flow_path.state_at(times)
    for i in range(len(times)):
        flat[i] = interaction_force(model, nodes - means[i])
    return DriftField(model=model, times=times, axes=axes,
                      values=flat.reshape(values.shape),
                      ensemble_mean=means, weight_order=q)


def solve_self_consistent_drift(model, x0, epsilon, horizon, grid=None, M=10_000,
                                noise_seed=0, tol=1e-3, max_iter=20, dt=1e-3,
                                common_noise=True, flow_dt=None):
    """Picard iteration of the drift map starting from the small-noise
    limit drift.

    With common_noise (the default) every sweep reuses the same
    increment streams, so the iteration is a deterministic map and the
    logged increments measure true contraction. Set common_noise=False
    to redraw noise each sweep (bias diagnostics only).

    Returns (field, log); raises DriftConvergenceError with the log
    attached when max_iter sweeps do not bring the weighted-sup-norm
    increment below tol.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    grid = grid or DriftGridSpec()
    # keep slab width an exact multiple of dt so snapshots land on nodes
    slab = max(1, int(round((horizon / (grid.n_times - 1)) / dt)))
    n_steps = slab * (grid.n_times - 1)
    dt_eff = horizon / n_steps
    flow_path = integrate_flow(model, x0, horizon, dt=flow_dt or dt_eff)
    b = initial_drift_field(model, flow_path, epsilon, grid)
    log = ConvergenceLog()
    for it in range(max_iter):
        offset = 0 if common_noise else it * M
        b_next, snaps = gamma_apply(model, b, x0, epsilon, M, noise_seed,
                                    dt=dt_eff, trial_offset=offset)
        inc = lambda_norm(field_difference(b_next, b))
        log.record(inc, lambda_norm(b_next))
        b = b_next
        if inc <= tol:
            log.converged = True
            return b, log
    raise DriftConvergenceError(
        "drift iteration did not converge in %d sweeps (last increment %.3g, tol %.3g)"
        % (max_iter, log.increments[-1], tol),
        log=log,
    )


def limit_drift(model, x0, t, x, flow_path=None, dt=1e-3):
    """Small-noise limit of the interaction drift: F(x - psi_t(x0)).

    Pass a cached flow (flow_path) for repeated queries; it must reach
    at least time t or a horizon error is raised.
    """
    if flow_path is None:
        flow_path = integrate_flow(model, x0, horizon=max(float(t), dt), dt=dt)
    ref = flow_path.state_at(float(t))
    return interaction_force(model, np.atleast_1d(np.asarray(x, dtype=float)) - ref)


# ---------------------------------------------------------------------------
# serialization: flat text table, one row per (time index, node index)


def save_drift_field(field, path):
    """Write the field as CSV: rows `t_index,node_index,c1..cd`.

    node_index >= 0 is the C-order flat index into the spatial grid and
    the components are the drift vector there; node_index = -1 rows
    carry the ensemble mean at that time. Grid metadata travels in a
    JSON comment header.
    """
    meta = {
        "dim": field.dim,
        "weight_order": field.weight_order,
        "horizon": field.horizon,
        "n_times": len(field.times),
        "axes": [[float(ax[0]), float(ax[-1]), int(len(ax))] for ax in field.axes],
    }
    flat = field.values.reshape(len(field.times), -1, field.dim)
    with open(path, "w") as fh:
        fh.write("# selfstab-drift-field %s\n" % json.dumps(meta))
        fh.write("t_index,node_index," + ",".join("c%d" % (i + 1) for i in range(field.dim)) + "\n")
        for i in range(len(field.times)):
            fh.write("%d,-1,%s\n" % (i, ",".join("%.17g" % v for v in field.ensemble_mean[i])))
            for j in range(flat.shape[1]):
                fh.write("%d,%d,%s\n" % (i, j, ",".join("%.17g" % v for v in flat[i, j])))


def load_drift_field(path, model):
    """Rebuild a DriftField saved by save_drift_field; the model supplies
    the interaction force for the tail fallback."""
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("# selfstab-drift-field "):
            raise ValueError("not a drift field table: %s" % path)
        meta = json.loads(header[len("# selfstab-drift-field "):])
        fh.readline()  # column header
        data = np.loadtxt(fh, delimiter=",")
    dim = meta["dim"]
    n_times = meta["n_times"]
    axes = tuple(np.linspace(lo, hi, n) for lo, hi, n in meta["axes"])
    grid_size = int(np.prod([len(a) for a in axes]))
    values = np.empty((n_times, grid_size, dim))
    means = np.empty((n_times, dim))
    for row in np.atleast_2d(data):
        i, j = int(row[0]), int(row[1])
        if j < 0:
            means[i] = row[2:2 + dim]
        else:
            values[i, j] = row[2:2 + dim]
    times = np.linspace(0.0, meta["horizon"], n_times)
    return DriftField(
        model=model,
        times=times,
        axes=axes,
        values=values.reshape((n_times,) + tuple(len(a) for a in axes) + (dim,)),
        ensemble_mean=means,
        weight_order=meta["weight_order"],
    )
