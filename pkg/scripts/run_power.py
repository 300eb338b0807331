"""Size-versus-power curve with empirically calibrated critical values.

    python3 scripts/run_power.py --n 50 --reps 500 --effects 0 0.25 0.5 1
"""

import argparse
import sys

from castpanel.synth import ExperimentConfig, default_params, power_experiment


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=50, help="N = T")
    parser.add_argument("--reps", type=int, default=500)
    parser.add_argument("--effects", type=float, nargs="+", default=[0.0, 0.25, 0.5, 1.0])
    parser.add_argument("--alphas", type=float, nargs="+", default=[0.01, 0.05, 0.1, 0.2, 0.3, 0.5])
    parser.add_argument("--target", choices=["ite", "atet"], default="ite")
    parser.add_argument("--noise-var", type=float, default=1.0)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    print("effect,alpha,critical_value,power,power_se")
    for effect in args.effects:
        cfg = ExperimentConfig(N=args.n, T=args.n, reps=args.reps, seed=args.seed, alphas=tuple(args.alphas),
                               effect_size=effect, target=args.target, params=default_params(2, args.noise_var))
        for pt in power_experiment(cfg):
            print(f"{effect},{pt.alpha},{pt.critical_value:.6g},{pt.power:.6g},{pt.power_se:.3g}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
