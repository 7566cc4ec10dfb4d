"""Command-line interface: validate, solve-invariant, simulate, estimate, study, report."""
from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import warnings
from pathlib import Path

import numpy as np

from .deconvolution import DeconvolutionSettings, estimate_interaction
from .errors import MvdError, NumericalError
from .experiments import ExperimentConfig, load, load_config, persist, report, run_convergence_study
from .invariant import residual, solve_invariant
from .kernels import derive_config, export_estimates
from .particles import ParticleEnsemble, simulate_system
from .potentials import builtin_model, validate_assumptions

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    over = {}
    if getattr(args, "seed", None) is not None:
        over["seed0"] = args.seed
    if getattr(args, "out", None) is not None:
        over["output_dir"] = args.out
    if getattr(args, "mode", None) is not None:
        over["mode"] = args.mode
    if getattr(args, "a", None) is not None:
        over["a"] = args.a
    return dataclasses.replace(cfg, **over) if over else cfg


def _out(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_validate(args) -> int:
    cfg = _config(args)
    pm = builtin_model(cfg.model, cfg.params)
    rep = validate_assumptions(pm)
    for name, ok in rep.checks.items():
        print(f"{name}: {'pass' if ok else 'FAIL'}")
    print(f"lambda = {pm.lam:.6g}")
    return EXIT_OK if rep.passed else EXIT_CONFIG


def cmd_solve(args) -> int:
    cfg = _config(args)
    pm = builtin_model(cfg.model, cfg.params)
    pi = solve_invariant(pm, cfg.grid)
    out = _out(cfg)
    pi.to_csv(out / "pi.csv")
    pi.save(out / "pi.bin")
    print(f"pi(0) = {np.interp(0.0, pi.x, pi.values):.12g}; residual = {residual(pm, pi):.3g}")
    return EXIT_OK


def _first_N(cfg: ExperimentConfig, args) -> int:
    return args.N if getattr(args, "N", None) else cfg.N_list[0]


def cmd_simulate(args) -> int:
    cfg = _config(args)
    pm = builtin_model(cfg.model, cfg.params)
    N = _first_N(cfg, args)
    e = simulate_system(pm, N, cfg.horizon(pm, N), cfg.dt, cfg.seed0, cfg.init, mesh_dx=cfg.mesh_dx)
    path = _out(cfg) / f"ensemble_N{N}.csv"
    e.save(path)
    print(f"wrote {path} (N={N}, T={e.T:g}, seed={e.seed})")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _config(args)
    pm = builtin_model(cfg.model, cfg.params)
    if args.ensemble:
        e = ParticleEnsemble.load(args.ensemble)
    else:
        N = _first_N(cfg, args)
        e = simulate_system(pm, N, cfg.horizon(pm, N), cfg.dt, cfg.seed0, cfg.init, mesh_dx=cfg.mesh_dx)
    ecfg = derive_config(pm, e.N, e.T, cfg.m, cfg.eps, cfg.a)
    settings = DeconvolutionSettings(a=cfg.a, y_max=cfg.y_max, n_freq=cfg.n_freq, mode=cfg.mode)
    pi = solve_invariant(pm, cfg.grid) if cfg.mode == "oracle_shift" else None
    tv = None if pm.confinement.tilde_v is None else (lambda x: pm.confinement.tilde(x, 1))
    w, rep = estimate_interaction(e, ecfg, settings, tilde_v_prime=tv, pi_oracle=pi, truth=pm.interaction.w_prime)
    out = _out(cfg)
    w.to_csv(out / "wprime_estimate.csv", header="x,wprime_hat")
    export_estimates(out / "kernel_estimates.csv", rep["pi_hat"].x, rep["pi_hat"], rep["pi_prime_hat"], rep["l_hat"])
    rep["psi"].to_csv(out / "psi.csv", header="y,psi")
    scalars = {k: v for k, v in rep.items() if isinstance(v, (int, float, str, bool)) or v is None}
    scalars["psi"] = "psi.csv"
    (out / "estimate.json").write_text(json.dumps(scalars, indent=2, sort_keys=True))
    print(f"alpha_hat = {rep['alpha_hat']:.6g}; W' L2 error = {rep.get('wprime_l2_error', float('nan')):.4g}; "
          f"min|den| = {rep['min_abs_denominator']:.4g} >= eps_NT = {rep['eps_NT']:.4g}")
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = _config(args)
    res = run_convergence_study(cfg, progress=(lambda m: print(m, file=sys.stderr)) if args.verbose else None)
    out = persist(res, cfg.output_dir)
    text, table = report(res)
    (out / "report.txt").write_text(text)
    (out / "report.csv").write_text(table)
    print(text, end="")
    return EXIT_OK


def cmd_report(args) -> int:
    res = load(args.directory)
    text, table = report(res)
    if args.csv:
        Path(args.csv).write_text(table)
    print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvdecon", description="McKean-Vlasov interaction estimation toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(name, fn, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("config", help="YAML or JSON experiment config")
        s.add_argument("--seed", type=int, help="override seed0")
        s.add_argument("--out", help="override output_dir")
        s.add_argument("--mode", choices=["oracle", "oracle_shift", "clip"], help="regularization mode")
        s.add_argument("--a", type=float, help="complex line offset")
        s.set_defaults(func=fn)
        return s

    with_config("validate", cmd_validate, "check model assumptions")
    with_config("solve-invariant", cmd_solve, "solve for the stationary density")
    with_config("simulate", cmd_simulate, "simulate a particle ensemble").add_argument("--N", type=int)
    est = with_config("estimate", cmd_estimate, "estimate W' from one ensemble")
    est.add_argument("--N", type=int)
    est.add_argument("--ensemble", help="saved ensemble to use instead of simulating")
    with_config("study", cmd_study, "run the convergence study").add_argument("-v", "--verbose", action="store_true")
    r = sub.add_parser("report", help="summarize a persisted study")
    r.add_argument("directory")
    r.add_argument("--csv", help="write plot-ready CSV here")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except NumericalError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (MvdError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
