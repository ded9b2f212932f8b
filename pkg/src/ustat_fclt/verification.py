"""Randomized exact suites over small product spaces.

Instance ``i`` of a suite draws from ``SeedSequence(seed, spawn_key=(i,))``,
so records are reproducible one by one and independent of thread count.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .hoeffding import (
    IDENTITY_TOL,
    DecomposedStatistic,
    DiscreteDistribution,
    ProductSpace,
    decompose,
    homogeneous_sum_table,
    members,
)
from .kernels import random_kernel
from .quadruples import (
    VIOLATION_TOL,
    VerificationRecord,
    bifold_remainder,
    check_covariance_identity,
    check_s0_upper_bound,
    check_varlemma2,
    degenerate,
    equality_record,
    inequality_record,
    s0_value,
    s1_value,
)

IDENTITY_EQ_TOL = 1e-9
S0_S1_TOL = 1e-12


def instance_rng(seed: int, i: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))


def random_space(rng: np.random.Generator, n: int, max_atoms: int = 3) -> ProductSpace:
    """Standardized random laws with 2 to ``max_atoms`` atoms per coordinate."""
    dists = []
    for _ in range(n):
        k = int(rng.integers(2, max_atoms + 1))
        dists.append(DiscreteDistribution.rademacher() if k == 2 else DiscreteDistribution.random(rng, k))
    return ProductSpace(tuple(dists))


def project_order(Y, space: ProductSpace, order: int) -> np.ndarray:
    """Keep only the Hoeffding components of size ``order``."""
    dec = decompose(Y, space)
    out = np.zeros(space.shape)
    for mask in range(len(dec.tables)):
        if bin(mask).count("1") == order:
            out = out + dec.expand(mask)
    return out


def random_degenerate(rng: np.random.Generator, space: ProductSpace, order: int, base: int) -> np.ndarray:
    """Random degenerate statistic of the given order living on coordinates ``1..base``.

    Half of the draws are homogeneous sums, half projections of arbitrary tables.
    """
    if rng.random() < 0.5:
        k = random_kernel(order, base, rng)
        return homogeneous_sum_table(k, space)
    shape = space.shape[:base] + (1,) * (space.n - base)
    table = np.broadcast_to(rng.standard_normal(shape), space.shape)
    return project_order(table, space, order)


@dataclass(frozen=True)
class PairInstance:
    space: ProductSpace
    V: np.ndarray
    W: np.ndarray
    q: int
    p: int
    m: int
    n: int

    @property
    def params(self) -> dict:
        return {"q": self.q, "p": self.p, "m": self.m, "n": self.n, "atoms": list(self.space.shape)}


def random_pair(rng: np.random.Generator, max_order: int = 2, max_size: int = 6,
                equal_orders: bool | None = None) -> PairInstance:
    while True:
        q, p = (int(v) for v in rng.integers(1, max_order + 1, size=2))
        if equal_orders is None or (p == q) == equal_orders:
            break
    m = int(rng.integers(q, max_size + 1))
    n = int(rng.integers(p, max_size + 1))
    space = random_space(rng, max(m, n))
    while True:
        V = random_degenerate(rng, space, q, m)
        W = random_degenerate(rng, space, p, n)
        if np.abs(V).max() > 1e-6 and np.abs(W).max() > 1e-6:
            return PairInstance(space, V, W, q, p, m, n)


# Hoeffding oracle checks ---------------------------------------------------


def hoeffding_check(Y, space: ProductSpace) -> dict[str, float]:
    """Worst reconstruction, orthogonality and degeneracy errors of ``decompose``."""
    dec: DecomposedStatistic = decompose(Y, space)
    Y = np.broadcast_to(np.asarray(Y, dtype=np.float64), space.shape)
    recon = float(np.max(np.abs(dec.reconstruct() - Y)))

    w = space.joint_probs().ravel()
    rows = np.stack([np.asarray(dec.expand(mask), dtype=np.float64).ravel() for mask in range(len(dec.tables))])
    gram = (rows * w) @ rows.T
    ortho = float(np.max(np.abs(gram - np.diag(np.diag(gram)))))

    degen = 0.0
    for mask, table in enumerate(dec.tables):
        coords = members(mask)
        # E[Y_M | F_J] only sees J & M; integrate out every nonempty part of M
        for r in range(1, len(coords) + 1):
            for gone in itertools.combinations(range(len(coords)), r):
                out = table
                for ax in sorted(gone, reverse=True):
                    probs = space.coordinates[coords[ax] - 1].prob_array
                    out = np.tensordot(out, probs, axes=([ax], [0]))
                degen = max(degen, float(np.max(np.abs(out))))
    return {"reconstruction": recon, "orthogonality": ortho, "degeneracy": degen}


def hoeffding_records(i: int, seed: int, max_size: int = 6) -> list[VerificationRecord]:
    rng = instance_rng(seed, i)
    n = int(rng.integers(1, max_size + 1))
    space = ProductSpace.rademacher(n)
    Y = rng.standard_normal(space.shape)
    errs = hoeffding_check(Y, space)
    return [equality_record(f"hoeffding_{name}", i, {"n": n}, err, 0.0, IDENTITY_TOL)
            for name, err in errs.items()]


# identity and inequality suites ---------------------------------------------


def identity_records(i: int, seed: int, max_order: int = 2, max_size: int = 6,
                     equal_orders: bool | None = None) -> list[VerificationRecord]:
    """Covariance identity (as stated, and with the bifold remainder), plus ``S_0 = S_1`` for ``(W, W)``."""
    rng = instance_rng(seed, i)
    inst = random_pair(rng, max_order, max_size, equal_orders)
    V = degenerate(inst.V, inst.space, inst.q, inst.m)
    W = degenerate(inst.W, inst.space, inst.p, inst.n)
    lhs, rhs = check_covariance_identity(V, W, inst.space)
    rem = bifold_remainder(V, W, inst.space)
    recs = [
        equality_record("covariance_identity", i, inst.params, lhs, rhs, IDENTITY_EQ_TOL),
        equality_record("covariance_identity_with_remainder", i, inst.params, lhs, rhs - rem, IDENTITY_EQ_TOL),
        equality_record("s0_equals_s1", i, inst.params, s0_value(W, W, inst.space), s1_value(W, W, inst.space),
                        S0_S1_TOL),
    ]
    recs.extend(hoeffding_records(i, seed, max_size))
    return recs


def inequality_records(i: int, seed: int, max_order: int = 2, max_size: int = 6) -> list[VerificationRecord]:
    rng = instance_rng(seed, i)
    inst = random_pair(rng, max_order, max_size)
    V = degenerate(inst.V, inst.space, inst.q, inst.m)
    W = degenerate(inst.W, inst.space, inst.p, inst.n)
    s0, bound = check_s0_upper_bound(W, inst.space)
    case = "i" if inst.p == inst.q else "ii"
    lhs, rhs = check_varlemma2(V, W, inst.space, case)
    return [
        inequality_record("s0_upper_bound", i, inst.params, s0, bound, VIOLATION_TOL),
        inequality_record(f"variance_bound_{case}", i, inst.params, lhs, rhs, VIOLATION_TOL),
    ]


SUITES = {"identities": identity_records, "inequalities": inequality_records}


def run_suite(name: str, instances: int, seed: int, threads: int = 1, **kw) -> list[VerificationRecord]:
    fn = SUITES[name]
    if threads == 1:
        batches = [fn(i, seed, **kw) for i in range(instances)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            batches = list(pool.map(lambda i: fn(i, seed, **kw), range(instances)))
    return [rec for batch in batches for rec in batch]
