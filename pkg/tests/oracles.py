"""Slow, literal reference implementations used only by the tests.

Nothing here shares code with the package beyond plain data containers:
subsets are frozensets, expectations are explicit loops over atoms.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


# kernels -------------------------------------------------------------------


def dense_kernel(k) -> np.ndarray:
    """The symmetric function ``f`` as a dense ``[m]^p`` array."""
    f = np.zeros((k.size,) * k.order)
    for row, a in zip(k.supports, k.values):
        for perm in itertools.permutations(int(v) - 1 for v in row):
            f[perm] = a / math.factorial(k.order)
    return f


def dense_contraction(k, r: int) -> np.ndarray:
    """``(f *_r f)(x, y) = sum_z f(x, z) f(y, z)`` on ``[m]^{2(p - r)}``."""
    f = dense_kernel(k)
    p = k.order
    axes = list(range(p - r, p))
    return np.tensordot(f, f, axes=(axes, axes))


def dense_contraction_norm(k, r: int) -> float:
    """Norm via the dense matrix ``A = f`` reshaped to ``m^(p-r) x m^r``: ``||A^T A||_F``."""
    f = dense_kernel(k)
    A = f.reshape(k.size ** (k.order - r), k.size**r)
    small = A.T @ A if A.shape[1] <= A.shape[0] else A @ A.T
    return float(np.sqrt(np.sum(small**2)))


def brute_phi_ranks(a: int, top: int) -> dict[tuple[int, ...], int]:
    """Rank tuples in ``[top]^a`` by (max, lexicographic), starting at 1."""
    tuples = sorted(itertools.product(range(1, top + 1), repeat=a), key=lambda t: (max(t), t))
    return {t: i + 1 for i, t in enumerate(tuples)}


# product spaces ------------------------------------------------------------


def atoms(space):
    """Iterate ``(index tuple, values tuple, probability)`` over the joint law."""
    coords = space.coordinates
    for idx in itertools.product(*(range(len(c)) for c in coords)):
        vals = tuple(coords[i].values[j] for i, j in enumerate(idx))
        prob = math.prod(coords[i].probs[j] for i, j in enumerate(idx))
        yield idx, vals, prob


def brute_conditional(Y: np.ndarray, J: frozenset, space) -> np.ndarray:
    """``E[Y | F_J]`` as a full table, by summing over the coordinates outside ``J``."""
    out = np.zeros(space.shape)
    for idx, _, _ in atoms(space):
        total = 0.0
        for jdx, _, prob in atoms(space):
            if all(jdx[i - 1] == idx[i - 1] for i in J):
                total += prob * Y[jdx]
        weight = math.prod(space.coordinates[i - 1].probs[idx[i - 1]] for i in J)
        out[idx] = total / weight
    return out


def brute_components(Y: np.ndarray, space) -> dict[frozenset, np.ndarray]:
    n = space.n
    cond = {}
    for r in range(n + 1):
        for J in itertools.combinations(range(1, n + 1), r):
            cond[frozenset(J)] = brute_conditional(Y, frozenset(J), space)
    out = {}
    for M in cond:
        total = np.zeros(space.shape)
        for r in range(len(M) + 1):
            for J in itertools.combinations(sorted(M), r):
                total += (-1) ** (len(M) - r) * cond[frozenset(J)]
        out[M] = total
    return out


def expect(Y: np.ndarray, space) -> float:
    return sum(prob * Y[idx] for idx, _, prob in atoms(space))


# quadruple sets ------------------------------------------------------------


def _part(A, B, C) -> bool:
    """``emptyset != A & B == A minus (A & C) != A`` on frozensets."""
    AB = A & B
    return bool(AB) and AB == A - (A & C) and AB != A


def in_s0(I, J, K, L) -> bool:
    return (not (I & K) and not (J & L) and _part(I, J, L) and _part(J, I, K)
            and _part(K, J, L) and _part(L, I, K))


def in_s1(I, J, K, L) -> bool:
    return (not (I & J) and not (K & L) and _part(I, K, L) and _part(J, K, L)
            and _part(K, J, I) and _part(L, I, J))


def subsets(n: int, p: int) -> list[frozenset]:
    return [frozenset(c) for c in itertools.combinations(range(1, n + 1), p)]


def brute_s0(m: int, n: int, q: int, p: int) -> set:
    Dq, Dp = subsets(m, q), subsets(n, p)
    return {(I, J, K, L) for I in Dq for J in Dq for K in Dp for L in Dp if in_s0(I, J, K, L)}


def brute_s1(m: int, n: int, p: int) -> set:
    N = min(m, n)
    D = subsets(N, p)
    return {(I, J, K, L) for I in D for J in D for K in D for L in D if in_s1(I, J, K, L)}


def brute_lower_product_variance(V: np.ndarray, W: np.ndarray, space, q: int, p: int) -> float:
    """``Var(V W)`` minus the fourth moments over ``I & K = J & L = emptyset`` quadruples.

    That difference is the variance carried by components of ``V W`` of size
    at most ``p + q - 1``; here it is built from the oracle decompositions.
    """
    vc = brute_components(V, space)
    wc = brute_components(W, space)
    prod = V * W
    var = expect(prod**2, space) - expect(prod, space) ** 2
    n = space.n
    top = 0.0
    for I in subsets(n, q):
        for J in subsets(n, q):
            for K in subsets(n, p):
                if I & K:
                    continue
                for L in subsets(n, p):
                    if J & L:
                        continue
                    top += expect(vc[I] * vc[J] * wc[K] * wc[L], space)
    return var - top
