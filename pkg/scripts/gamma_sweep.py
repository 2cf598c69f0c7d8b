"""Recurrence estimate vs discount factor on the scalar fixture.

    python3 scripts/gamma_sweep.py --N 2000 --out results/gamma_sweep
"""
import argparse
import dataclasses
import pathlib

from recurlab.config import load_config
from recurlab.experiments import emit_outputs, run_experiment

ROOT = pathlib.Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "scalar.cfg"))
    ap.add_argument("--gammas", type=float, nargs="+", default=[0.5, 0.8, 0.9, 0.95, 0.99, 0.995])
    ap.add_argument("--N", type=int, default=2000)
    ap.add_argument("--T", type=int, default=None, help="fixed horizon (default: theoretical, capped)")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="results/gamma_sweep")
    args = ap.parse_args()

    cfg = load_config(args.config)
    cert = dataclasses.replace(cfg.certification, gammas=tuple(args.gammas), N=args.N,
                               T=args.T if args.T is not None else cfg.certification.T)
    cfg = dataclasses.replace(cfg, certification=cert)
    table = run_experiment(cfg, args.workers)
    print(f"{'gamma':>7} {'estimate':>9} {'ci_low':>8} {'ci_high':>8} {'T':>5} {'radius':>7}")
    for r in table.rows:
        if r.error:
            print(f"{r.gamma:7.4g}  error: {r.error}")
            continue
        print(f"{r.gamma:7.4g} {r.estimate:9.4f} {r.ci_low:8.4f} {r.ci_high:8.4f} {r.T_used:5d} {r.radius:7.3f}")
    for p in emit_outputs(table, args.out, ("csv", "svg"), "gamma_sweep"):
        print(p)


if __name__ == "__main__":
    main()
