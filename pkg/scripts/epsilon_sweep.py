"""Robustness of recurrence to bounded perturbations at a fixed discount.

Each epsilon is run twice: against the nominal set and against the set
whose sigma-radius is grown by epsilon.

    python3 scripts/epsilon_sweep.py --gamma 0.995 --mode adversarial
"""
import argparse

from recurlab.certification import RecurrenceSetParams, auto_bundle, estimate_recurrence, theoretical_horizon
from recurlab.experiments import inflate_for_epsilon
from recurlab.policy import EtaBound, lqr_policy
from recurlab.simulator import PerturbationSpec
from recurlab.system_model import NoiseSpec, linear_system


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--gamma", type=float, default=0.995)
    ap.add_argument("--epsilons", type=float, nargs="+", default=[0.0, 0.01, 0.05, 0.1, 0.2, 0.4])
    ap.add_argument("--mode", choices=("uniform", "adversarial"), default="adversarial")
    ap.add_argument("--Delta0", type=float, default=5.0)
    ap.add_argument("--delta", type=float, default=0.5)
    ap.add_argument("--p", type=float, default=0.1)
    ap.add_argument("--T", type=int, default=None)
    ap.add_argument("--N", type=int, default=5000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    spec = linear_system([[1.0]], [[1.0]], [[0.2]], [[1.0]], [[1.0]], NoiseSpec.gaussian([0.0], [[1.0]]))
    bundle, _, _ = auto_bundle(spec, [args.gamma])
    T = args.T or min(theoretical_horizon(args.Delta0, args.delta, args.p, bundle), 500)
    pol = lqr_policy(spec, args.gamma)
    base = RecurrenceSetParams(args.gamma, args.delta, EtaBound(), bundle)
    print(f"gamma={args.gamma} T={T} N={args.N} perturbation={args.mode}")
    print(f"{'eps':>6} {'nominal':>9} {'ci_low':>8} {'inflated':>9} {'ci_low':>8} {'radius':>7}")
    for eps in args.epsilons:
        pert = getattr(PerturbationSpec, args.mode)(eps)
        out = []
        for params in (base, inflate_for_epsilon(base, eps)):
            e = estimate_recurrence(spec, pol, params, ("ball", args.Delta0), T, args.N, args.seed, pert)
            out.append((e.estimate, e.ci_low, params.radius))
        (e0, l0, _), (e1, l1, r1) = out
        print(f"{eps:6.3g} {e0:9.4f} {l0:8.4f} {e1:9.4f} {l1:8.4f} {r1:7.3f}")


if __name__ == "__main__":
    main()
