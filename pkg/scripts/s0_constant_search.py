"""Smallest constant C with S_0(V, W) >= -C max(sigma_V^2 rho_W^2, sigma_W^2 rho_V^2) on random pairs.

The lower bound has an unspecified constant depending on the orders, so this
only reports the empirical worst ratio per (q, p); nothing is asserted.
"""

import argparse
from collections import defaultdict

from ustat_fclt.quadruples import degenerate, rho_sq, s0_value, sigma_sq
from ustat_fclt.verification import instance_rng, random_pair


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--instances", type=int, default=400)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--max-order", type=int, default=2)
    ap.add_argument("--max-size", type=int, default=5)
    args = ap.parse_args(argv)

    worst = defaultdict(float)
    seen = defaultdict(int)
    for i in range(args.instances):
        inst = random_pair(instance_rng(args.seed, i), args.max_order, args.max_size)
        V = degenerate(inst.V, inst.space, inst.q, inst.m)
        W = degenerate(inst.W, inst.space, inst.p, inst.n)
        scale = max(sigma_sq(V, inst.m) * rho_sq(W, inst.n), sigma_sq(W, inst.n) * rho_sq(V, inst.m))
        key = (inst.q, inst.p)
        seen[key] += 1
        if scale > 0:
            worst[key] = max(worst[key], -s0_value(V, W, inst.space) / scale)

    print(f"{'q':>3} {'p':>3} {'pairs':>6} {'C needed':>10}")
    for key in sorted(seen):
        print(f"{key[0]:>3} {key[1]:>3} {seen[key]:>6} {worst[key]:>10.4f}")


if __name__ == "__main__":
    main()
