"""Execution of config run sections: each function takes the built model
and domain plus one section's parameters, runs the corresponding library
operation, and writes its outputs (CSV always, figure when plotting is
on). All writes are atomic: a temp file in the target directory is
renamed into place only when complete.
"""

from __future__ import annotations

import csv
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .action import (ActionSpec, boundary_min, quasipotential_closed_form,
                     quasipotential_numeric)
from .config import ConfigError
from .drift import DriftGridSpec, lambda_norm, save_drift_field, solve_self_consistent_drift
from .exits import (exit_statistics, kramers_fit, read_kramers_series,
                    run_exit_trials, write_exit_records, write_kramers_series)
from .flow import PathSample, find_equilibrium, integrate_flow, integrate_relaxed_flow, verify_domain_stability
from .model import check_assumptions, estimate_constants
from .noise import NoisePlan
from .sde import Classical, Limiting, Particle, simulate

__all__ = ["RunContext", "execute_section", "write_path_dump", "read_path_dump",
           "atomic_write_text"]

PATH_DUMP_HEADER = "trial,t_index,time,{xcols}"


@dataclass
class RunContext:
    model: object
    domain: object
    out_dir: Path
    seed_override: int | None = None
    workers: int = 1
    plots: bool = True
    quick: bool = False

    def resolve(self, name):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def seed(self, section_seed):
        return self.seed_override if self.seed_override is not None else section_seed

    def trials(self, n):
        return max(4, n // 10) if self.quick else n


def atomic_write_text(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic(path, write_fn):
    """Run write_fn(tmp_path) and rename the result into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    os.close(fd)
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def write_path_dump(path, samples, trials=None):
    """One record per (trial, time index): trial,t_index,time,x1..xd."""
    samples = samples if isinstance(samples, list) else [samples]
    trials = trials if trials is not None else list(range(len(samples)))
    dim = samples[0].dim
    xcols = ",".join("x%d" % (i + 1) for i in range(dim))

    def write(tmp):
        with open(tmp, "w", newline="") as fh:
            fh.write(PATH_DUMP_HEADER.format(xcols=xcols) + "\n")
            w = csv.writer(fh)
            for trial, s in zip(trials, samples):
                for k, t in enumerate(s.times):
                    w.writerow([trial, k, "%.17g" % t]
                               + ["%.17g" % v for v in s.states[k]])

    return _atomic(path, write)


def read_path_dump(path):
    """Inverse of write_path_dump: {trial: PathSample}."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = sum(1 for c in header if c.startswith("x"))
        rows = {}
        for row in reader:
            rows.setdefault(int(row[0]), []).append(
                (float(row[2]), [float(v) for v in row[3:3 + dim]]))
    out = {}
    for trial, entries in rows.items():
        entries.sort()
        times = np.array([t for t, _ in entries])
        states = np.array([s for _, s in entries])
        dt = times[1] - times[0] if len(times) > 1 else 1.0
        out[trial] = PathSample(t0=times[0], dt=dt, states=states)
    return out


def _mode_from_params(ctx, params):
    mode = params.get("mode", "classical")
    if mode == "classical":
        return Classical()
    if mode == "limiting":
        x_stable = find_equilibrium(ctx.model, _guess_interior(ctx))
        return Limiting(x_stable)
    if mode == "particle":
        return Particle(params.get("n_particles", 100))
    raise ConfigError("mode", "unsupported mode %r here" % mode)


def _guess_interior(ctx):
    if ctx.domain is not None:
        lo, hi = ctx.domain.bounding_box()
        return 0.5 * (np.asarray(lo) + np.asarray(hi))
    return np.zeros(ctx.model.dim)


# ---------------------------------------------------------------------------
# section executors


def _run_check(ctx, section):
    p = section.params
    flat = p["box"]
    if len(flat) != 2 * ctx.model.dim:
        raise ConfigError(section.name + ".box", "need lo,hi per axis")
    box = [(flat[2 * i], flat[2 * i + 1]) for i in range(ctx.model.dim)]
    constants = estimate_constants(ctx.model, box, r0_candidate=p["r0"])
    report = check_assumptions(ctx.model, box, r0=p["r0"])
    out = ctx.resolve(p["output"])

    def write(tmp):
        with open(tmp, "w", newline="") as fh:
            fh.write("quantity,value\n")
            fh.write("k_upper,%.17g\n" % constants.k_upper)
            fh.write("k_convex,%.17g\n" % constants.k_convex)
            fh.write("eta,%.17g\n" % constants.eta)
            fh.write("r0,%.17g\n" % constants.r0)
            fh.write("r1,%.17g\n" % constants.r1)
            fh.write("k_raw,%.17g\n" % constants.k_raw)
            for clause in report.clauses:
                fh.write("clause_%s,%s\n" % (clause.name, "pass" if clause.passed else "fail"))
            fh.write("global_convexity,%s\n" % report.global_convexity)

    _atomic(out, write)
    return {"constants": constants, "report": report, "output": out}


def _run_flow(ctx, section):
    p = section.params
    if p["kind"] == "relaxed":
        x_stable = find_equilibrium(ctx.model, _guess_interior(ctx))
        sample = integrate_relaxed_flow(ctx.model, x_stable, p["x_init"],
                                        p["horizon"], dt=p["dt"])
    else:
        sample = integrate_flow(ctx.model, p["x_init"], p["horizon"], dt=p["dt"])
    out = ctx.resolve(p["output"])
    write_path_dump(out, sample)
    if ctx.plots:
        from .report import plot_path
        plot_path(sample.times, sample.states, out, title="flow " + section.name)
    return {"path": sample, "output": out}


def _run_drift(ctx, section):
    p = section.params
    grid = DriftGridSpec(n_times=p["n_times"], nodes_per_axis=p["nodes_per_axis"])
    field, log = solve_self_consistent_drift(
        ctx.model, p["x_init"], p["epsilon"], p["horizon"], grid=grid,
        M=p["m_trajectories"] if not ctx.quick else max(200, p["m_trajectories"] // 20),
        noise_seed=ctx.seed(p["seed"]), tol=p["tol"], max_iter=p["max_iter"],
        dt=p["dt"])
    out = ctx.resolve(p["output"])
    _atomic(out, lambda tmp: save_drift_field(field, tmp))
    log_out = out.with_name(out.stem + "_convergence.csv")

    def write_log(tmp):
        with open(tmp, "w", newline="") as fh:
            fh.write("sweep,increment,ratio,iterate_norm\n")
            for i, inc in enumerate(log.increments):
                ratio = log.ratios[i - 1] if i >= 1 else float("nan")
                fh.write("%d,%.17g,%.17g,%.17g\n" % (i + 1, inc, ratio, log.iterate_norms[i]))

    _atomic(log_out, write_log)
    if ctx.plots:
        from .report import plot_drift_convergence
        plot_drift_convergence(log, log_out)
    return {"field": field, "log": log, "output": out,
            "lambda_norm": lambda_norm(field)}


def _run_simulate(ctx, section):
    p = section.params
    plan = NoisePlan(base_seed=ctx.seed(p["seed"]), dt=p["dt"])
    mode = _mode_from_params(ctx, p)
    samples, trials = [], []
    for trial in range(p["trials"]):
        res = simulate(ctx.model, mode, p["x_init"], p["epsilon"], p["horizon"],
                       plan, trial=trial)
        if isinstance(res, list):  # particle mode: dump every particle
            samples.extend(res)
            trials.extend([trial] * len(res))
        else:
            samples.append(res)
            trials.append(trial)
    out = ctx.resolve(p["output"])
    keep = max(1, p.get("keep_every", 1))
    thinned = [PathSample(t0=s.t0, dt=s.dt * keep, states=s.states[::keep])
               for s in samples] if keep > 1 else samples
    write_path_dump(out, thinned, trials)
    if ctx.plots:
        from .report import plot_path
        stack = np.stack([s.states for s in thinned])
        plot_path(thinned[0].times, stack, out, title="simulate " + section.name)
    return {"paths": samples, "output": out}


def _run_action(ctx, section):
    p = section.params
    dumps = read_path_dump(ctx.resolve(p["path_file"]))
    from .action import action as action_value
    if p["variant"] == "classical":
        spec = ActionSpec.classical(ctx.model)
    else:
        x_stable = find_equilibrium(ctx.model, _guess_interior(ctx))
        spec = ActionSpec.limiting(ctx.model, x_stable)
    out = ctx.resolve(p["output"])

    def write(tmp):
        with open(tmp, "w", newline="") as fh:
            fh.write("trial,action\n")
            for trial, sample in sorted(dumps.items()):
                fh.write("%d,%.17g\n" % (trial, action_value(spec, sample)))

    _atomic(out, write)
    return {"output": out}


def _quasipotential_points(ctx):
    """Boundary points of interest: parametrized scan for the figure."""
    dom = ctx.domain
    pts = dom.boundary_points(64 if dom.dim > 1 else 2)
    params = np.atleast_1d(dom.boundary_param(pts))
    return pts, params


def _run_quasipotential(ctx, section):
    p = section.params
    if ctx.domain is None:
        raise ConfigError(section.name, "quasipotential needs a domain")
    x_stable = find_equilibrium(ctx.model, _guess_interior(ctx))
    variants = ("classical", "stabilized") if p["variant"] == "both" else (p["variant"],)
    methods = ("closed-form", "numeric") if p["method"] == "both" else (p["method"],)
    rows = []
    results = {}
    n_scan = p["n_scan"]
    t_grid = tuple(t for t in (1.0, 2.0, 3.0, 5.0, 8.0, 12.0, 20.0, 35.0, 50.0)
                   if t <= p["t_max"]) or (p["t_max"],)
    scan_pts, scan_params = _quasipotential_points(ctx)
    for variant in variants:
        include = variant == "stabilized"
        if "closed-form" in methods:
            if ctx.model.potential is None:
                raise ConfigError(section.name, "closed form needs a gradient model")
            bm = boundary_min(
                lambda z: quasipotential_closed_form(ctx.model, x_stable, z,
                                                     include_interaction=include),
                ctx.domain, n_scan=n_scan)
            results[(variant, "closed-form")] = bm
            for point, param in zip(bm.argmin_points, bm.argmin_params):
                rows.append((variant, "closed-form", bm.value, param,
                             ",".join("%.12g" % v for v in point)))
        if "numeric" in methods:
            spec = (ActionSpec.limiting(ctx.model, x_stable) if include
                    else ActionSpec.classical(ctx.model))
            # evaluate at the closed-form argmins when the model is a
            # gradient one (targeting only; closed-form rows are emitted
            # above when requested), else scan a coarse boundary sample
            if (variant, "closed-form") in results:
                bm_target = results[(variant, "closed-form")]
            elif ctx.model.potential is not None:
                bm_target = boundary_min(
                    lambda z: quasipotential_closed_form(ctx.model, x_stable, z,
                                                         include_interaction=include),
                    ctx.domain, n_scan=n_scan)
            else:
                bm_target = None
            if bm_target is not None:
                targets = [np.asarray(pt) for pt in bm_target.argmin_points]
            else:
                targets = list(ctx.domain.boundary_points(12))
            best = None
            for z in targets:
                qr = quasipotential_numeric(spec, x_stable, z, t_grid=t_grid,
                                            n_nodes=p["n_nodes"], seed=ctx.seed(p["seed"]))
                if best is None or qr.value < best[0].value:
                    best = (qr, z)
                rows.append((variant, "numeric", qr.value,
                             float(np.atleast_1d(ctx.domain.boundary_param(z))[0]),
                             ",".join("%.12g" % v for v in z)))
            results[(variant, "numeric")] = best[0]
    out = ctx.resolve(p["output"])

    def write(tmp):
        with open(tmp, "w", newline="") as fh:
            fh.write("variant,method,value,boundary_param,point\n")
            for variant, method, value, param, point in rows:
                fh.write("%s,%s,%.17g,%.17g,\"%s\"\n" % (variant, method, value, param, point))

    _atomic(out, write)
    if ctx.plots and ctx.model.potential is not None and ctx.domain.dim <= 2:
        from .report import plot_quasipotential_boundary
        for variant in variants:
            include = variant == "stabilized"
            vals = [quasipotential_closed_form(ctx.model, x_stable, z, include_interaction=include)
                    for z in scan_pts]
            argmins = [param for (v, m, value, param, pt) in rows if v == variant]
            plot_quasipotential_boundary(
                scan_params, vals, argmins,
                out.with_name(out.stem + "_" + variant + ".csv"),
                title="exit energy over the boundary (%s)" % variant)
    return {"results": results, "rows": rows, "output": out}


_NEIGHBORHOOD_WIDTH = 0.5


def _default_neighborhoods(domain):
    if domain.dim == 1:
        return {"left": (-1.0, 0.5), "right": (1.0, 0.5)}
    return {"angle_0": (0.0, _NEIGHBORHOOD_WIDTH),
            "angle_pi/2": (np.pi / 2, _NEIGHBORHOOD_WIDTH),
            "angle_pi": (np.pi, _NEIGHBORHOOD_WIDTH),
            "angle_-pi/2": (-np.pi / 2, _NEIGHBORHOOD_WIDTH)}


def _exit_worker(args):
    """Module-level so process pools can pickle it: reruns a trial chunk."""
    (config_path, section_name, out_dir, seed_override, offset, count) = args
    from .config import load_config
    cfg = load_config(config_path)
    section = next(r for r in cfg.runs if r.name == section_name)
    ctx = RunContext(model=cfg.build_model(), domain=cfg.build_domain(),
                     out_dir=Path(out_dir), seed_override=seed_override,
                     plots=False)
    p = section.params
    plan = NoisePlan(base_seed=ctx.seed(p["seed"]), dt=p["dt"])
    mode = _mode_from_params(ctx, p)
    return run_exit_trials(ctx.model, mode, ctx.domain, p["x_init"], p["epsilon"],
                           p["dt"], count, p["max_horizon"], plan,
                           trial_offset=offset)


def _collect_exits(ctx, section, epsilon, trials, seed, config_path=None):
    p = section.params
    plan = NoisePlan(base_seed=seed, dt=p["dt"])
    mode = _mode_from_params(ctx, p)
    if ctx.workers > 1 and config_path is not None:
        from concurrent.futures import ProcessPoolExecutor
        chunk = (trials + ctx.workers - 1) // ctx.workers
        tasks = [(config_path, section.name, str(ctx.out_dir), ctx.seed_override,
                  off, min(chunk, trials - off))
                 for off in range(0, trials, chunk)]
        records = []
        with ProcessPoolExecutor(max_workers=ctx.workers) as pool:
            for part in pool.map(_exit_worker, tasks):
                records.extend(part)
        records.sort(key=lambda r: r.trial)
        return records
    return run_exit_trials(ctx.model, mode, ctx.domain, p["x_init"], epsilon,
                           p["dt"], trials, p["max_horizon"], plan)


def _run_exit(ctx, section, config_path=None):
    p = section.params
    if ctx.domain is None:
        raise ConfigError(section.name, "exit experiments need a domain")
    trials = ctx.trials(p["trials"])
    records = _collect_exits(ctx, section, p["epsilon"], trials,
                             ctx.seed(p["seed"]), config_path)
    stats = exit_statistics(records, neighborhoods=_default_neighborhoods(ctx.domain))
    out = ctx.resolve(p["output"])
    _atomic(out, lambda tmp: write_exit_records(records, tmp, ctx.model.dim))
    if ctx.plots:
        from .report import plot_exit_report
        plot_exit_report(records, stats, out, title="exit " + section.name)
    return {"records": records, "stats": stats, "output": out}


def _run_kramers(ctx, section, config_path=None):
    p = section.params
    out = ctx.resolve(p["output"])
    if p.get("input"):
        series = read_kramers_series(ctx.resolve(p["input"]))
        fit = kramers_fit(series)
        rows = [(e, 0, 0, m, s) for e, m, s in series]
    else:
        if ctx.domain is None:
            raise ConfigError(section.name, "kramers sweeps need a domain")
        rows = []
        series = []
        trials = ctx.trials(p["trials"])
        for i, eps in enumerate(p["epsilons"]):
            records = _collect_exits(ctx, section, eps, trials,
                                     ctx.seed(p["seed"]) + i, config_path)
            stats = exit_statistics(records)
            mean = stats.mean_exit_time
            if not np.isfinite(mean):
                mean = stats.mean_lower_bound
            rows.append((eps, stats.n_trials, stats.n_censored, mean, stats.stderr))
            series.append((eps, mean, stats.stderr))
        fit = kramers_fit(series)
    _atomic(out, lambda tmp: write_kramers_series(rows, tmp))
    if ctx.plots:
        from .report import plot_kramers_fit
        plot_kramers_fit(fit, out, title="Kramers regression " + section.name)
    return {"fit": fit, "rows": rows, "output": out}


_EXECUTORS = {
    "check": _run_check,
    "flow": _run_flow,
    "drift": _run_drift,
    "simulate": _run_simulate,
    "action": _run_action,
    "quasipotential": _run_quasipotential,
}


def execute_section(ctx, section, config_path=None):
    """Dispatch one run section; returns its result dictionary."""
    if section.kind == "exit":
        return _run_exit(ctx, section, config_path)
    if section.kind == "kramers":
        return _run_kramers(ctx, section, config_path)
    return _EXECUTORS[section.kind](ctx, section)


def run_stability_check(ctx, horizon=20.0, dt=2e-3):
    """Equilibrium location plus the domain-invariance report."""
    x_stable = find_equilibrium(ctx.model, _guess_interior(ctx))
    report = verify_domain_stability(ctx.model, ctx.domain, x_stable,
                                     n_boundary=32, horizon=horizon, dt=dt,
                                     n_interior=32)
    return x_stable, report
