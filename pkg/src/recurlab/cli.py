"""Command-line interface.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 certification below target (with ``--require``).
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import asdict, replace

import numpy as np

from .certification import (check_dissipation, check_sandwich, theoretical_gamma_star,
                            theoretical_horizon)
from .config import load_config
from .errors import ConfigError, DetectabilityError, GridExitError, NumericalError, RecurlabError
from .experiments import ExperimentContext, _run_row, emit_outputs, run_experiment
from .policy import EtaBound, check_level_boundedness
from .riccati_lqr import (detectability_for_spec, lqr_oracle, verify_detectability)
from .simulator import record_to_csv, rollout_perturbed

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_BELOW_TARGET = 0, 2, 3, 4


def _dump(obj):
    def clean(v):
        if isinstance(v, dict):
            return {k: clean(x) for k, x in v.items()}
        if isinstance(v, (list, tuple)):
            return [clean(x) for x in v]
        if isinstance(v, np.ndarray):
            return clean(v.tolist())
        if isinstance(v, (np.floating, float)):
            v = float(v)
            return v if math.isfinite(v) else str(v)
        if isinstance(v, np.integer):
            return int(v)
        if isinstance(v, np.bool_):
            return bool(v)
        return v

    print(json.dumps(clean(obj), indent=2))


def _gamma(args, cfg):
    return args.gamma if args.gamma is not None else cfg.certification.gammas[0]


def _eta(args, cfg):
    if getattr(args, "eta0", None) is not None or getattr(args, "eta1", None) is not None:
        return EtaBound(args.eta0 or 0.0, args.eta1 or 0.0)
    return cfg.policy.etas[0]


def cmd_solve_riccati(args, cfg, ctx):
    g = _gamma(args, cfg)
    o = lqr_oracle(cfg.system, g)
    _dump({"gamma": g, "P": o.P, "K": o.K, "c_gamma": o.c_gamma, "noise_offset": o.noise_offset,
           "residual": o.riccati.residual, "iterations": o.riccati.iterations})
    return EXIT_OK


def cmd_simulate(args, cfg, ctx):
    g = _gamma(args, cfg)
    eta = _eta(args, cfg)
    oracle = ctx.oracle(g, eta)
    x0 = np.array(args.x0 if args.x0 is not None else [cfg.certification.Delta0] + [0.0] * (cfg.system.n - 1))
    T = args.T if args.T is not None else ctx.horizons()[1]
    eps = args.epsilon or 0.0
    pert = cfg.certification.perturbation_for(eps)
    params = ctx.recurrence_params(g, oracle.eta, eps)
    rec = rollout_perturbed(cfg.system, oracle, x0, T, pert, cfg.certification.seed, args.traj)
    text = record_to_csv(rec, params.contains)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, "trajectory.csv")
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        print(path)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_policy_check(args, cfg, ctx):
    g = _gamma(args, cfg)
    oracle = ctx.oracle(g, _eta(args, cfg))
    x = np.array(args.x, dtype=float)
    u = np.array(args.u, dtype=float)
    res = float(oracle.residual(x, u))
    _dump({"gamma": g, "x": x, "u": u, "member": oracle.membership(x, u), "residual": res,
           "eta": float(oracle.eta(x, oracle.metric)), "selected": oracle.select(x[None])[0]})
    return EXIT_OK


def _certify(args, cfg, ctx, estimand):
    cert = cfg.certification
    overrides = {"estimand": estimand}
    if args.T is not None:
        overrides["T"] = args.T
    if getattr(args, "Delta", None) is not None:
        overrides["Delta"] = args.Delta
    cfg2 = replace(cfg, certification=replace(cert, **overrides))
    ctx2 = ExperimentContext(cfg2, ctx.workers)
    row = _run_row(ctx2, _gamma(args, cfg), args.epsilon or 0.0, _eta(args, cfg))
    if row.error:
        print(row.error, file=sys.stderr)
        return EXIT_NUMERICAL
    _dump({"estimate": row.estimate, "ci_low": row.ci_low, "ci_high": row.ci_high, "N": row.N, "S": row.S,
           "T": row.T_used, "gamma": row.gamma, "delta": row.delta_eff, "epsilon": row.epsilon,
           "seed": row.seed, "config_hash": row.config_hash, "Delta": row.Delta})
    if args.require and row.ci_high <= 1 - cert.p:
        return EXIT_BELOW_TARGET
    return EXIT_OK


def cmd_theoretical_bounds(args, cfg, ctx):
    cert = cfg.certification
    b = ctx.bundle()
    T_th, T_used = ctx.horizons()
    eta = _eta(args, cfg)
    rows = []
    for g in cert.gammas:
        oracle = ctx.oracle(g, eta)
        D, how = ctx.delta_for(oracle, T_th)
        params = ctx.recurrence_params(g, oracle.eta, 0.0)
        rows.append({"gamma": g, "c_gamma": b.c_gamma(g), "radius": params.radius, "Delta": D,
                     "Delta_kind": how, "gamma_star": theoretical_gamma_star(D, cert.delta, b)})
    _dump({"T_theoretical": T_th, "T_used": T_used, "Delta0": cert.Delta0, "delta": cert.delta, "p": cert.p,
           "alphabar_Y_Delta0": b.alphabar_Y(cert.Delta0), "c": b.c, "d": b.d, "e": b.e,
           "per_gamma": rows, "notes": list(b.notes)})
    return EXIT_OK


def cmd_check_assumptions(args, cfg, ctx):
    spec, cert = cfg.system, cfg.certification
    b = ctx.bundle()
    out, ok = {"notes": list(b.notes) + [
        "equi-continuity of the near-optimal set map is not tested"]}, True
    gam = [g for g in ctx.gamma_grid if g >= 0.5]
    out["c_gamma_bounded"] = b.c_gamma_bounded(gam)
    ok &= out["c_gamma_bounded"]
    if spec.is_linear and spec.is_quadratic:
        dc = detectability_for_spec(spec)
        lam = verify_detectability(dc, spec.A, spec.B, spec.Q, spec.R)
        diss = check_dissipation(dc, spec, 10_000, seed=cert.seed)
        out["detectability"] = {"lambda_max": lam, "a_W": dc.a_W, "d": dc.d, "ok": lam <= 1e-9}
        out["dissipation"] = {"max_scaled_violation": diss, "ok": diss <= 1e-9}
        ok &= lam <= 1e-9 and diss <= 1e-9
    gen = np.random.default_rng(cert.seed)
    X = gen.normal(scale=cert.Delta0, size=(2000, spec.n))
    if cfg.policy.oracle == "grid":
        g = cfg.policy.grid
        X = gen.uniform([lo for lo, _ in g.bounds], [hi for _, hi in g.bounds], size=(2000, spec.n))
        value = lambda gm: ctx.grid_value(gm)[0]
        gam = [x for x in cert.gammas if x >= 0.5]
    else:
        value = lambda gm: lqr_oracle(spec, gm)
    if gam:
        sw = check_sandwich(b, value, gam, X)
        out["sandwich"] = {"max_violation": sw.max_violation, "max_scaled_violation": sw.max_scaled_violation,
                           "worst_gamma": sw.worst_gamma, "ok": sw.max_scaled_violation <= 1e-6}
        ok &= sw.max_scaled_violation <= 1e-6
    box = [[-cert.Delta0, cert.Delta0]] * spec.n
    lb = check_level_boundedness(lambda gm: ctx.oracle(gm, _eta(args, cfg)), box, cert.gammas,
                                 n_samples=50, seed=cert.seed, bundle=b)
    out["level_boundedness"] = asdict(lb)
    out["ok"] = bool(ok)
    _dump(out)
    return EXIT_BELOW_TARGET if args.require and not ok else EXIT_OK


def cmd_run(args, cfg, ctx):
    table = run_experiment(cfg, ctx.workers)
    paths = emit_outputs(table, cfg.output.dir, cfg.output.formats, cfg.output.stem)
    _dump({"rows": len(table), "errors": sum(bool(r.error) for r in table.rows), "outputs": paths})
    if args.require and any(r.ci_high is None or r.ci_high <= 1 - cfg.certification.p for r in table.rows):
        return EXIT_BELOW_TARGET
    return EXIT_OK


COMMANDS = {
    "solve-riccati": cmd_solve_riccati,
    "simulate": cmd_simulate,
    "policy-check": cmd_policy_check,
    "certify-boundedness": lambda a, c, x: _certify(a, c, x, "boundedness"),
    "certify-recurrence": lambda a, c, x: _certify(a, c, x, "recurrence"),
    "theoretical-bounds": cmd_theoretical_bounds,
    "check-assumptions": cmd_check_assumptions,
    "run": cmd_run,
}


def _u64(text):
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _global_flags(p, suppress):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--config", default=d(None), help="experiment config (TOML)")
    p.add_argument("--seed", type=_u64, default=d(None), help="override certification.seed")
    p.add_argument("--workers", type=int, default=d(1), help="parallel workers for ensembles")
    p.add_argument("--out", default=d(None), help="output directory")
    p.add_argument("--require", action="store_true", default=d(False),
                   help="exit 4 when a certificate's upper CI bound is <= 1-p")


def build_parser():
    parser = argparse.ArgumentParser(prog="recurlab", description=__doc__.splitlines()[0])
    _global_flags(parser, False)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        _global_flags(p, True)
        p.add_argument("--gamma", type=float)
        if name in ("simulate", "policy-check", "certify-boundedness", "certify-recurrence",
                    "theoretical-bounds", "check-assumptions"):
            p.add_argument("--eta0", type=float)
            p.add_argument("--eta1", type=float)
        if name in ("simulate", "certify-boundedness", "certify-recurrence"):
            p.add_argument("--epsilon", type=float)
            p.add_argument("--T", type=int)
        if name == "simulate":
            p.add_argument("--x0", type=float, nargs="+")
            p.add_argument("--traj", type=int, default=0)
        if name == "certify-boundedness":
            p.add_argument("--Delta", type=float)
        if name == "policy-check":
            p.add_argument("--x", type=float, nargs="+", required=True)
            p.add_argument("--u", type=float, nargs="+", required=True)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if not args.config:
            raise ConfigError(["--config is required"])
        cfg = load_config(args.config).with_overrides(seed=args.seed, out_dir=args.out)
        if args.gamma is not None and not 0 < args.gamma < 1:
            raise ConfigError(["gamma must lie in (0,1)"])
        ctx = ExperimentContext(cfg, max(1, args.workers))
        return COMMANDS[args.command](args, cfg, ctx)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, DetectabilityError, GridExitError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except RecurlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
