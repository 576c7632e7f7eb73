"""Check the LDP planner's safety constant against end-to-end error rates.

For each k, runs the local-only GHR tester at n = required_n_ldp(k, alpha, eps_l, C)
for a range of C and prints the accept rate under uniform and the reject rate under
the default far alternative. Both rates should clear 2/3 at the default C for every k.
"""

import argparse

from shufflepriv import harness
from shufflepriv.ghr import DEFAULT_SAFETY_CONST, required_n_ldp


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ks", default="8,16")
    ap.add_argument("--alpha", type=float, default=0.4)
    ap.add_argument("--eps-l", type=float, default=1.0)
    ap.add_argument("--consts", default="0.5,1,2,4,8")
    ap.add_argument("--trials", type=int, default=300)
    ap.add_argument("--seed", type=int, default=8)
    args = ap.parse_args(argv)

    print(f"{'k':>4} {'C':>5} {'n':>8} {'accept(U)':>10} {'reject(far)':>12}")
    for k in (int(v) for v in args.ks.split(",")):
        for c in (float(v) for v in args.consts.split(",")):
            n = required_n_ldp(k, args.alpha, args.eps_l, c)
            cfg = harness.ExperimentConfig(protocol="ldp-only", k=k, alpha=args.alpha, eps=args.eps_l,
                                           eps_l=args.eps_l, trials=args.trials, seed=args.seed,
                                           safety_const=c)
            row = harness.evaluate_n(cfg, n)
            mark = "  <- default" if c == DEFAULT_SAFETY_CONST else ""
            print(f"{k:>4} {c:>5g} {n:>8} {row.accept_rate_uniform:>10.3f} {row.reject_rate_far:>12.3f}{mark}")


if __name__ == "__main__":
    main()
