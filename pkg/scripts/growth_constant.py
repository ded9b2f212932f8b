"""Empirical growth constant b in |F_m| ~ b m^(p/a) for the cyclic-window construction.

|F_m| counts ordered tuples, p! per unordered support.
"""

import argparse
import math

from ustat_fclt.kernels import fractional_growth_constant, integer_root


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--p", type=int, default=3)
    ap.add_argument("--a", type=int, default=2)
    ap.add_argument("--sizes", type=int, nargs="+", default=[10**2, 10**3, 10**4, 10**5, 10**6])
    args = ap.parse_args(argv)

    print(f"{'m':>10} {'|F_m|':>12} {'b':>10}")
    for m in args.sizes:
        count = math.factorial(args.p) * math.comb(integer_root(m, args.a), args.p)
        print(f"{m:>10} {count:>12} {fractional_growth_constant(args.p, args.a, m):>10.6f}")


if __name__ == "__main__":
    main()
