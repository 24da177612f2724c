"""Exit-time and exit-location Monte Carlo, plus the Kramers regression.

Trials step in one vectorized batch and drop out as they cross the
boundary. The crossing instant is located by bisection of the membership
function along the offending Euler segment, and for parametrized
domains the exit point is then snapped onto the boundary through the
parametrization, so recorded exit points satisfy |g| <= 1e-6. Censored
trials (horizon reached inside the domain) are flagged and reported,
never dropped.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .domain import Implicit
from .model import interaction_force
from .noise import NoisePlan
from .sde import Classical, Frozen, Limiting, Particle, Tracking, make_drift

__all__ = [
    "ExitRecord",
    "ExitStatistics",
    "KramersFit",
    "run_exit_trials",
    "exit_statistics",
    "kramers_fit",
    "write_exit_records",
    "read_exit_records",
    "write_kramers_series",
    "read_kramers_series",
]

EXIT_CSV_COLUMNS = "trial,seed,exit_time,{xcols},boundary_param,censored"
KRAMERS_CSV_HEADER = "epsilon,n_trials,n_censored,mean_exit_time,stderr,eps_log_mean"

_BISECTION_STEPS = 30  # enough for |g| <= 1e-6 on desk-scale Euler segments


@dataclass(frozen=True)
class ExitRecord:
    trial: int
    seed: int
    exit_time: float
    exit_point: np.ndarray
    boundary_param: float
    censored: bool

    def __post_init__(self):
        object.__setattr__(self, "exit_point",
                           np.atleast_1d(np.asarray(self.exit_point, dtype=float)))


def _bisect_crossing(domain, x_prev, x_next):
    """Crossing fraction theta in (0, 1] along the segment with g = 0."""
    lo, hi = 0.0, 1.0
    for _ in range(_BISECTION_STEPS):
        mid = 0.5 * (lo + hi)
        point = x_prev + mid * (x_next - x_prev)
        if float(domain.g(point)) < 0.0:
            lo = mid
        else:
            hi = mid
    return hi


def _finalize_exit(domain, x_prev, x_next, t_prev, dt):
    theta = _bisect_crossing(domain, x_prev, x_next)
    point = x_prev + theta * (x_next - x_prev)
    param = float(np.atleast_1d(domain.boundary_param(point))[0])
    if not isinstance(domain, Implicit) and np.isfinite(param):
        point = domain.boundary_point(param)  # exactly on the boundary
    return t_prev + theta * dt, np.atleast_1d(point), param


def run_exit_trials(model, mode, domain, x_init, epsilon, dt, n_trials,
                    max_horizon, noise: Optional[NoisePlan] = None, base_seed=0,
                    trial_offset=0, guard=1e6):
    """Simulate trials until the (tagged) state first leaves the domain.

    In particle mode only particle 0 is tagged and recorded; the others
    keep evolving freely wherever they are. Returns one ExitRecord per
    trial, censored records included.
    """
    x_init = np.atleast_1d(np.asarray(x_init, dtype=float))
    if not domain.contains(x_init):
        raise ValueError("initial state %s is not inside the domain" % x_init)
    if max_horizon <= 0:
        raise ValueError("max_horizon must be positive")
    plan = noise or NoisePlan(base_seed=base_seed, dt=dt)
    if isinstance(mode, Particle):
        records = _run_particle_exits(model, mode, domain, x_init, epsilon, plan,
                                      n_trials, max_horizon, trial_offset, guard)
    else:
        records = _run_plain_exits(model, mode, domain, x_init, epsilon, plan,
                                   n_trials, max_horizon, trial_offset, guard)
    if records and all(r.censored for r in records):
        warnings.warn("all %d trials censored at horizon %g; statistics are "
                      "lower bounds only" % (len(records), max_horizon))
    return records


def _run_plain_exits(model, mode, domain, x_init, epsilon, plan, n_trials,
                     max_horizon, trial_offset, guard):
    dt = plan.dt
    n_steps = int(np.ceil(max_horizon / dt - 1e-12))
    f = make_drift(model, mode)
    d = model.dim
    sq = np.sqrt(epsilon) * np.sqrt(dt)

    trials = np.arange(n_trials) + trial_offset
    alive = np.arange(n_trials)
    X = np.tile(x_init, (n_trials, 1))
    records = {}
    chunk = 2048
    step = 0
    while len(alive) and step < n_steps:
        n_chunk = min(chunk, n_steps - step)
        dW = plan.gaussian_block(trials[alive], 0, step, n_chunk, d)
        for k in range(n_chunk):
            t = (step + k) * dt
            X_new = X + f(t, X) * dt + sq * dW[k]
            g = np.atleast_1d(domain.g(X_new))
            crossed = g >= 0.0
            if np.any(crossed):
                for pos in np.flatnonzero(crossed):
                    idx = alive[pos]
                    exit_t, point, param = _finalize_exit(
                        domain, X[pos], X_new[pos], t, dt)
                    records[idx] = ExitRecord(
                        trial=int(trials[idx]), seed=plan.base_seed,
                        exit_time=exit_t, exit_point=point,
                        boundary_param=param, censored=False)
                keep = ~crossed
                alive = alive[keep]
                X = X_new[keep]
                dW = dW[:, keep]
            else:
                X = X_new
            if np.any(np.linalg.norm(X, axis=-1) > guard):
                raise RuntimeError("exit trial state exceeded guard %g" % guard)
            if not len(alive):
                break
        step += n_chunk
    for pos, idx in enumerate(alive):
        records[idx] = ExitRecord(trial=int(trials[idx]), seed=plan.base_seed,
                                  exit_time=max_horizon, exit_point=X[pos],
                                  boundary_param=np.nan, censored=True)
    return [records[i] for i in range(n_trials)]


def _run_particle_exits(model, mode, domain, x_init, epsilon, plan, n_trials,
                        max_horizon, trial_offset, guard):
    dt = plan.dt
    n_steps = int(np.ceil(max_horizon / dt - 1e-12))
    N = mode.n_particles
    d = model.dim
    sq = np.sqrt(epsilon) * np.sqrt(dt)
    trials = np.arange(n_trials) + trial_offset

    alive = np.arange(n_trials)
    X = np.tile(x_init, (n_trials, N, 1))
    records = {}
    chunk = 512
    step = 0
    particles = np.arange(N)
    while len(alive) and step < n_steps:
        n_chunk = min(chunk, n_steps - step)
        dW = np.stack([plan.particle_block(int(trials[i]), particles, step, n_chunk, d)
                       for i in alive], axis=1)  # (chunk, n_alive, N, d)
        for k in range(n_chunk):
            t = (step + k) * dt
            drift = model.drift(X)
            for i in range(len(alive)):
                diff = X[i][:, None, :] - X[i][None, :, :]
                drift[i] -= interaction_force(model, diff).mean(axis=1)
            X_new = X + drift * dt + sq * dW[k]
            g = np.atleast_1d(domain.g(X_new[:, 0, :]))
            crossed = g >= 0.0
            if np.any(crossed):
                for pos in np.flatnonzero(crossed):
                    idx = alive[pos]
                    exit_t, point, param = _finalize_exit(
                        domain, X[pos, 0], X_new[pos, 0], t, dt)
                    records[idx] = ExitRecord(
                        trial=int(trials[idx]), seed=plan.base_seed,
                        exit_time=exit_t, exit_point=point,
                        boundary_param=param, censored=False)
                keep = ~crossed
                alive = alive[keep]
                X = X_new[keep]
                dW = dW[:, keep]
            else:
                X = X_new
            if not len(alive):
                break
        step += n_chunk
    for pos, idx in enumerate(alive):
        records[idx] = ExitRecord(trial=int(trials[idx]), seed=plan.base_seed,
                                  exit_time=max_horizon, exit_point=X[pos, 0],
                                  boundary_param=np.nan, censored=True)
    return [records[i] for i in range(n_trials)]


# ---------------------------------------------------------------------------
# statistics


@dataclass(frozen=True)
class ExitStatistics:
    n_trials: int
    n_censored: int
    mean_exit_time: float          # uncensored only; NaN if none
    median_exit_time: float
    stderr: float
    mean_lower_bound: float        # censored trials counted at the horizon
    histogram_edges: np.ndarray
    histogram_counts: np.ndarray
    neighborhood_probability: dict
    horizon: float

    @property
    def censored_fraction(self):
        return self.n_censored / self.n_trials if self.n_trials else np.nan


def exit_statistics(records, n_bins=36, neighborhoods=None):
    """Summaries of a trial collection: timing, location histogram over
    the boundary parameter, and named-neighborhood exit probabilities.

    ``neighborhoods`` maps a name to (param_center, half_width); the
    probability is the fraction of uncensored exits with boundary
    parameter within the window. Censored trials enter only the count
    and the lower-bound mean.
    """
    records = list(records)
    if not records:
        raise ValueError("no exit records")
    horizon = max(r.exit_time for r in records)
    times = np.array([r.exit_time for r in records if not r.censored])
    params = np.array([r.boundary_param for r in records if not r.censored])
    n_cens = sum(1 for r in records if r.censored)
    all_times = np.array([r.exit_time for r in records])

    if len(times):
        mean = float(times.mean())
        median = float(np.median(times))
        se = float(times.std(ddof=1) / np.sqrt(len(times))) if len(times) > 1 else 0.0
        finite = params[np.isfinite(params)]
        if len(finite):
            edges = np.histogram_bin_edges(finite, bins=n_bins)
            counts, edges = np.histogram(finite, bins=edges)
        else:
            edges, counts = np.array([0.0, 1.0]), np.array([0])
    else:
        mean = median = se = float("nan")
        edges, counts = np.array([0.0, 1.0]), np.array([0])

    probs = {}
    if neighborhoods:
        for name, (center, width) in neighborhoods.items():
            if len(params):
                hits = np.abs(_wrap_angle(params - center)) <= width
                probs[name] = float(np.mean(hits))
            else:
                probs[name] = float("nan")

    return ExitStatistics(
        n_trials=len(records),
        n_censored=n_cens,
        mean_exit_time=mean,
        median_exit_time=median,
        stderr=se,
        mean_lower_bound=float(all_times.mean()),
        histogram_edges=edges,
        histogram_counts=counts,
        neighborhood_probability=probs,
        horizon=horizon,
    )


def _wrap_angle(x):
    return (np.asarray(x) + np.pi) % (2.0 * np.pi) - np.pi


# ---------------------------------------------------------------------------
# Kramers regression


@dataclass(frozen=True)
class KramersFit:
    q_estimate: float
    intercept: float
    residuals: np.ndarray
    epsilons: np.ndarray
    eps_log_mean: np.ndarray
    max_abs_residual: float


def kramers_fit(series):
    """Weighted least squares of log(mean exit time) against 1/epsilon.

    ``series`` is a list of (epsilon, mean_exit_time, stderr) triples;
    the slope estimates the exit energy. Needs at least three distinct
    epsilons and positive means. Zero/absent standard errors fall back
    to equal weights.
    """
    series = [(float(e), float(m), float(s)) for e, m, s in series]
    eps = np.array([e for e, _, _ in series])
    means = np.array([m for _, m, _ in series])
    ses = np.array([s for _, _, s in series])
    if len(np.unique(eps)) < 3:
        raise ValueError("need at least 3 distinct epsilon values")
    if np.any(means <= 0):
        raise ValueError("mean exit times must be positive")
    x = 1.0 / eps
    ylog = np.log(means)
    if np.all(ses > 0):
        w = (means / ses) ** 2  # delta method: var(log m) ~ (se/m)^2
    else:
        w = np.ones_like(eps)
    W = np.sqrt(w)
    A = np.stack([x * W, W], axis=-1)
    coef, *_ = np.linalg.lstsq(A, ylog * W, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = ylog - (slope * x + intercept)
    return KramersFit(
        q_estimate=slope,
        intercept=intercept,
        residuals=resid,
        epsilons=eps,
        eps_log_mean=eps * ylog,
        max_abs_residual=float(np.max(np.abs(resid))),
    )


# ---------------------------------------------------------------------------
# CSV schemas (normative)


def write_exit_records(records, path, dim):
    xcols = ",".join("exit_x%d" % (i + 1) for i in range(dim))
    with open(path, "w", newline="") as fh:
        fh.write(EXIT_CSV_COLUMNS.format(xcols=xcols) + "\n")
        writer = csv.writer(fh)
        for r in records:
            writer.writerow(
                [r.trial, r.seed, "%.17g" % r.exit_time]
                + ["%.17g" % v for v in r.exit_point]
                + ["%.17g" % r.boundary_param, int(r.censored)]
            )


def read_exit_records(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = sum(1 for c in header if c.startswith("exit_x"))
        records = []
        for row in reader:
            records.append(ExitRecord(
                trial=int(row[0]),
                seed=int(row[1]),
                exit_time=float(row[2]),
                exit_point=np.array([float(v) for v in row[3:3 + dim]]),
                boundary_param=float(row[3 + dim]),
                censored=bool(int(row[4 + dim])),
            ))
    return records


def write_kramers_series(rows, path):
    """rows: iterables (epsilon, n_trials, n_censored, mean, stderr)."""
    with open(path, "w", newline="") as fh:
        fh.write(KRAMERS_CSV_HEADER + "\n")
        writer = csv.writer(fh)
        for eps, n, nc, mean, se in rows:
            eln = eps * np.log(mean) if mean > 0 else float("nan")
            writer.writerow([eps, n, nc, "%.17g" % mean, "%.17g" % se, "%.17g" % eln])


def read_kramers_series(path):
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            out.append((float(row["epsilon"]), float(row["mean_exit_time"]),
                        float(row["stderr"])))
    return out
