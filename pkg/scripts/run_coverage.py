"""Coverage, interval width and variance-estimate error across panel sizes.

    python3 scripts/run_coverage.py --sizes 100 200 400 --reps 200
"""

import argparse
import csv
import sys
import time

from castpanel.synth import ExperimentConfig, coverage_experiment, default_params


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[100, 200, 400], help="N = T values")
    parser.add_argument("--reps", type=int, default=200)
    parser.add_argument("--alpha", type=float, default=0.05)
    parser.add_argument("--rank", type=int, default=2)
    parser.add_argument("--noise-var", type=float, default=1.0)
    parser.add_argument("--noise", choices=["homoskedastic", "heteroskedastic"], default="homoskedastic")
    parser.add_argument("--design", choices=["four_block", "staggered"], default="four_block")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--jobs", type=int, default=1)
    parser.add_argument("--out", default=None, help="optional CSV path")
    args = parser.parse_args(argv)

    rows = []
    for n in args.sizes:
        cfg = ExperimentConfig(N=n, T=n, r=args.rank, alpha=args.alpha, reps=args.reps, seed=args.seed,
                               design=args.design, noise=args.noise, n_jobs=args.jobs,
                               params=default_params(args.rank, args.noise_var))
        start = time.perf_counter()
        res = coverage_experiment(cfg).to_dict()
        res["N"] = n
        res["seconds"] = round(time.perf_counter() - start, 2)
        rows.append(res)
        print(f"N=T={n}: ITE {res['ite_coverage']:.4f} (se {res['ite_coverage_se_rep']:.4f}), "
              f"ATET {res['atet_coverage']:.4f}, median var rel err {res['variance_rel_error_median']:.4f}, "
              f"{res['seconds']}s", flush=True)

    if args.out:
        with open(args.out, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
