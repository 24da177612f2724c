"""Command-line front end.

Subcommands bind one-to-one to library operations driven by a scenario
config (a file path or a built-in name like ``paper-5.2``); the
``scenario`` subcommand runs a whole built-in pipeline: model checks,
stability, closed-form and numeric exit energies, exit Monte Carlo, and
the Kramers regression, ending in a summary table.

Every invocation echoes the resolved config (defaults filled) to a
sidecar file in the output directory; re-running from the sidecar
reproduces the outputs byte for byte.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import builtin_config_names, load_config, render_config
from .exits import kramers_fit, read_kramers_series
from .runner import RunContext, atomic_write_text, execute_section, run_stability_check

SUBCOMMANDS = ("check-model", "flow", "solve-drift", "simulate", "action",
               "quasipotential", "exit", "kramers", "scenario")

_KIND_FOR = {
    "check-model": "check",
    "flow": "flow",
    "solve-drift": "drift",
    "simulate": "simulate",
    "action": "action",
    "quasipotential": "quasipotential",
    "exit": "exit",
    "kramers": "kramers",
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="selfstab",
        description="Numerical laboratory for self-stabilizing diffusions",
    )
    parser.add_argument("--seed", type=int, default=None,
                        help="override every section seed")
    parser.add_argument("--workers", type=int, default=1,
                        help="parallel worker bound for trial fan-out")
    parser.add_argument("--out-dir", type=Path, default=Path("."),
                        help="directory for CSV and figure outputs")
    parser.add_argument("--no-plots", action="store_true",
                        help="skip figure rendering")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in SUBCOMMANDS:
        if name == "scenario":
            p = sub.add_parser(name, help="run a full built-in pipeline")
            p.add_argument("name", choices=builtin_config_names())
            p.add_argument("--quick", action="store_true",
                           help="smoke preset: trials cut to a tenth")
        elif name == "kramers":
            p = sub.add_parser(name, help="Kramers regression")
            p.add_argument("--config", "-c", default=None)
            p.add_argument("--input", default=None,
                           help="fit an existing epsilon/mean/stderr CSV")
            p.add_argument("--label", default=None,
                           help="run only the section with this label")
        else:
            p = sub.add_parser(name)
            p.add_argument("--config", "-c", required=True,
                           help="config file path or built-in name")
            p.add_argument("--label", default=None,
                           help="run only the section with this label")
            if name == "quasipotential":
                p.add_argument("--closed-form", action="store_true",
                               help="restrict to the closed-form method")
    return parser


def _echo_sidecar(cfg, out_dir):
    src = Path(cfg.source_path) if cfg.source_path else Path("config.cfg")
    stem = src.stem if src.suffix == ".cfg" else src.name
    sidecar = Path(out_dir) / (stem + ".resolved.cfg")
    atomic_write_text(sidecar, render_config(cfg))
    return sidecar


def _context(cfg, args, quick=False):
    model = cfg.build_model()
    domain = cfg.build_domain()
    return RunContext(model=model, domain=domain, out_dir=Path(args.out_dir),
                      seed_override=args.seed, workers=args.workers,
                      plots=not args.no_plots, quick=quick)


def _sections_for(cfg, kind, label=None):
    sections = [r for r in cfg.runs if r.kind == kind]
    if label is not None:
        sections = [r for r in sections if r.label == label]
    if not sections:
        raise SystemExit("config has no %s section%s" %
                         (kind, " labelled %r" % label if label else ""))
    return sections


def _run_plain(args):
    kind = _KIND_FOR[args.command]
    cfg = load_config(args.config)
    _echo_sidecar(cfg, args.out_dir)
    ctx = _context(cfg, args)
    for section in _sections_for(cfg, kind, args.label):
        result = execute_section(ctx, section, config_path=cfg.source_path)
        _print_result(args.command, section, result)
    return 0


def _print_result(command, section, result):
    if command == "check-model":
        constants = result["constants"]
        print("[%s] k_upper=%.6g k_convex=%.6g eta=%.6g r1=%.6g"
              % (section.name, constants.k_upper, constants.k_convex,
                 constants.eta, constants.r1))
        print(result["report"])
    elif command == "quasipotential":
        for variant, method, value, param, point in result["rows"]:
            print("[%s] %s %s: %.10g at (%s)"
                  % (section.name, variant, method, value, point))
    elif command == "exit":
        stats = result["stats"]
        print("[%s] mean exit time %.6g (stderr %.3g), %d/%d censored"
              % (section.name, stats.mean_exit_time, stats.stderr,
                 stats.n_censored, stats.n_trials))
        for name, prob in stats.neighborhood_probability.items():
            print("    P(exit near %s) = %.3f" % (name, prob))
    elif command == "kramers":
        fit = result["fit"]
        print("[%s] Q estimate %.10g, intercept %.6g, max |residual| %.3g"
              % (section.name, fit.q_estimate, fit.intercept, fit.max_abs_residual))
    elif command == "solve-drift":
        log = result["log"]
        print("[%s] converged in %d sweeps; final increment %.3g; lambda norm %.6g"
              % (section.name, log.iterations, log.increments[-1],
                 result["lambda_norm"]))
    else:
        print("[%s] wrote %s" % (section.name, result["output"]))


def _run_kramers(args):
    if args.input and not args.config:
        series = read_kramers_series(args.input)
        fit = kramers_fit(series)
        print("Q estimate %.12g, intercept %.12g, max |residual| %.3g"
              % (fit.q_estimate, fit.intercept, fit.max_abs_residual))
        return 0
    if not args.config:
        raise SystemExit("kramers needs --config or --input")
    return _run_plain(args)


def _run_scenario(args):
    cfg = load_config(args.name)
    _echo_sidecar(cfg, args.out_dir)
    ctx = _context(cfg, args, quick=args.quick)
    summary = []

    def note(section, key, value):
        summary.append((section, key, value))
        print("  %-28s %-24s %s" % (section, key, value))

    print("== scenario %s ==" % args.name)
    for section in cfg.run_sections("check"):
        res = execute_section(ctx, section, cfg.source_path)
        c = res["constants"]
        note(section.name, "k_convex", "%.6g" % c.k_convex)
        note(section.name, "eta", "%.6g" % c.eta)
        note(section.name, "assumptions",
             "pass" if res["report"].passed else "FAIL")
        note(section.name, "global_convexity", res["report"].global_convexity)

    x_stable, stability = run_stability_check(ctx)
    note("stability", "x_stable", np.array2string(x_stable, precision=6))
    note("stability", "domain_invariant", "pass" if stability.passed else "FAIL")

    for section in cfg.run_sections("quasipotential"):
        res = execute_section(ctx, section, cfg.source_path)
        for variant, method, value, param, point in res["rows"]:
            note(section.name, "%s %s (%s)" % (variant, method, point), "%.6g" % value)

    for section in cfg.run_sections("drift"):
        res = execute_section(ctx, section, cfg.source_path)
        note(section.name, "sweeps", res["log"].iterations)
        note(section.name, "final_increment", "%.3g" % res["log"].increments[-1])

    for section in cfg.run_sections("exit"):
        res = execute_section(ctx, section, cfg.source_path)
        stats = res["stats"]
        note(section.name, "mean_exit_time", "%.6g" % stats.mean_exit_time)
        note(section.name, "censored", "%d/%d" % (stats.n_censored, stats.n_trials))
        for name, prob in stats.neighborhood_probability.items():
            note(section.name, "P(%s)" % name, "%.3f" % prob)

    for section in cfg.run_sections("kramers"):
        res = execute_section(ctx, section, cfg.source_path)
        note(section.name, "Q_estimate", "%.6g" % res["fit"].q_estimate)

    out = Path(args.out_dir) / "summary.csv"
    text = "section,key,value\n" + "\n".join(
        "%s,%s,\"%s\"" % (s, k, v) for s, k, v in summary) + "\n"
    atomic_write_text(out, text)
    print("summary written to %s" % out)
    return 0


def main(argv=None):
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "scenario":
            return _run_scenario(args)
        if args.command == "kramers":
            return _run_kramers(args)
        return _run_plain(args)
    except SystemExit:
        raise
    except Exception as e:  # one machine-readable line, nonzero status
        print(json.dumps({"error": str(e), "type": type(e).__name__}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
