"""Empirical minimal n for the GHR shuffle protocol across k and eps.

For each (k, eps) sweeps a geometric grid of n around the planner's value, fits a
probit curve to each of the two error rates and reports where both reach 2/3.
Writes one CSV row per sweep point plus a summary of the n* ratios.

    python scripts/scaling_sweep.py --out scaling.csv
"""

import argparse
import csv
import sys
import time

import numpy as np

from shufflepriv import harness
from shufflepriv.amplify import required_n_protocol2


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ks", default="64,128,256")
    ap.add_argument("--eps", default="0.5")
    ap.add_argument("--halved-eps-k", type=int, default=64, help="k at which eps/2 is also run")
    ap.add_argument("--alpha", type=float, default=0.1)
    ap.add_argument("--delta", type=float, default=1e-4)
    ap.add_argument("--trials", type=int, default=400)
    ap.add_argument("--points", type=int, default=7)
    ap.add_argument("--span", default="0.4,0.95", help="grid range as fractions of the planner n")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default=None)
    args = ap.parse_args(argv)

    eps = float(args.eps)
    lo, hi = (float(v) for v in args.span.split(","))
    cases = [(int(k), eps) for k in args.ks.split(",")] + [(args.halved_eps_k, eps / 2)]
    rows, stars = [], {}
    for k, e in cases:
        t0 = time.perf_counter()
        cfg = harness.ExperimentConfig(protocol="p2", k=k, alpha=args.alpha, eps=e, delta=args.delta,
                                       trials=args.trials, seed=args.seed, workers=args.workers)
        plan = required_n_protocol2(k, args.alpha, e, args.delta)
        grid = [float(round(x)) for x in np.geomspace(lo * plan, hi * plan, args.points)]
        est = harness.estimate_min_n(cfg, grid)
        stars[(k, e)] = est.n_star
        for r in est.rows:
            rows.append([k, e, r.n, r.accept_rate_uniform, r.reject_rate_far, est.n_star])
        print(f"k={k:4d} eps={e:<5} planner={plan:7d} n*={est.n_star:9.0f} "
              f"(uniform side {est.n_uniform:.0f}, far side {est.n_far:.0f}) "
              f"{'bracketed' if est.bracketed else 'EXTRAPOLATED'} {time.perf_counter() - t0:.0f}s",
              file=sys.stderr)

    ks = [k for k, e in cases if e == eps]
    for a, b in zip(ks, ks[1:]):
        print(f"n*(k={b}) / n*(k={a}) = {stars[(b, eps)] / stars[(a, eps)]:.3f}  (2^(3/4) = {2**0.75:.3f})",
              file=sys.stderr)
    k0 = args.halved_eps_k
    print(f"n*(eps={eps / 2}) / n*(eps={eps}) at k={k0} = {stars[(k0, eps / 2)] / stars[(k0, eps)]:.3f}",
          file=sys.stderr)

    out = open(args.out, "w", newline="") if args.out else sys.stdout
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["k", "eps", "n", "accept_rate_uniform", "reject_rate_far", "n_star"])
    w.writerows(rows)
    if args.out:
        out.close()


if __name__ == "__main__":
    main()
