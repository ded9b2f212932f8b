"""Bifold quadruple sets and the fourth-order functionals built on them.

Index sets are bitmasks over ``[max(m, n)]`` (bit ``i - 1`` marks ``i``), so
every defining condition is a handful of mask operations.  The checkers
:func:`s0_conditions` and :func:`s1_conditions` transcribe conditions
(i)-(v) literally; the enumerators derive the fourth set from the first three
and then replay the checker on every candidate.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np

from .hoeffding import (
    DecomposedStatistic,
    ProductSpace,
    SpaceMismatch,
    decompose,
    expectation,
    members,
    product_component_variances,
)

VIOLATION_TOL = 1e-9
MAX_INDEX = 30
ENUMERATION_CAP = 10**8


class QuadrupleError(ValueError):
    pass


class TooLarge(QuadrupleError):
    pass


class NotDegenerate(QuadrupleError):
    pass


class CaseMismatch(QuadrupleError):
    pass


def subset_masks(n: int, p: int) -> np.ndarray:
    """Masks of ``D_p(n)`` in lexicographic order of the underlying subsets."""
    out = [sum(1 << (i - 1) for i in c) for c in itertools.combinations(range(1, n + 1), p)]
    return np.array(out, dtype=np.int64)


def popcount(x):
    return np.bitwise_count(np.asarray(x, dtype=np.int64)).astype(np.int64)


def _part(A, B, C):
    """``emptyset != A & B == A \\ (A & C) != A``."""
    AB = A & B
    return (AB != 0) & (AB == (A & ~(A & C))) & (AB != A)


def s0_conditions(I, J, K, L):
    """Conditions (i)-(v) defining the set S_0 (vectorized over masks)."""
    I, J, K, L = (np.asarray(x, dtype=np.int64) for x in (I, J, K, L))
    cond = ((I & K) == 0) & ((J & L) == 0)
    cond &= _part(I, J, L)
    cond &= _part(J, I, K)
    cond &= _part(K, J, L)
    cond &= _part(L, I, K)
    return cond


def s1_conditions(I, J, K, L):
    """Conditions (i)-(v) defining the set S_1 (vectorized over masks)."""
    I, J, K, L = (np.asarray(x, dtype=np.int64) for x in (I, J, K, L))
    cond = ((I & J) == 0) & ((K & L) == 0)
    cond &= _part(I, K, L)
    cond &= _part(J, K, L)
    cond &= _part(K, J, I)
    cond &= _part(L, I, J)
    return cond


def is_bifold(I, J, K, L) -> bool:
    union = I | J | K | L
    for i in members(int(union)):
        bit = 1 << (i - 1)
        if sum(bool(x & bit) for x in (I, J, K, L)) != 2:
            return False
    return True


@dataclass(frozen=True, eq=False)
class QuadrupleSet:
    kind: Literal["S0", "S1"]
    m: int
    n: int
    q: int
    p: int
    quadruples: np.ndarray  # (count, 4) masks

    def __len__(self) -> int:
        return int(self.quadruples.shape[0])

    def as_sets(self) -> list[tuple[tuple[int, ...], ...]]:
        return [tuple(members(int(x)) for x in row) for row in self.quadruples]


def _guard(m: int, n: int, q: int, p: int) -> None:
    if max(m, n) > MAX_INDEX:
        raise TooLarge(f"index sets are limited to [{MAX_INDEX}]")
    if math.comb(m, q) ** 2 * math.comb(n, p) ** 2 > ENUMERATION_CAP:
        raise TooLarge("quadruple enumeration exceeds the configured cap")


def enumerate_s0(m: int, n: int, q: int, p: int) -> QuadrupleSet:
    if not (1 <= q <= m and 1 <= p <= n):
        raise ValueError(f"need 1 <= q <= m and 1 <= p <= n, got m={m}, n={n}, q={q}, p={p}")
    _guard(m, n, q, p)
    VI = subset_masks(m, q)
    WK = subset_masks(n, p)
    full_n = (1 << n) - 1
    rows = []
    for I in VI:
        # L is forced: L = (I \ J) | (K \ J)
        J = VI[:, None]
        K = WK[None, :]
        L = (I & ~J) | (K & ~J)
        ok = s0_conditions(I, J, K, L) & (popcount(L) == p) & ((L & ~full_n) == 0)
        jj, kk = np.nonzero(ok)
        if jj.size:
            rows.append(np.stack([np.full(jj.size, I), VI[jj], WK[kk], L[jj, kk]], axis=1))
    quads = np.concatenate(rows) if rows else np.zeros((0, 4), dtype=np.int64)
    return QuadrupleSet("S0", m, n, q, p, quads)


def enumerate_s1(m: int, n: int, p: int) -> QuadrupleSet:
    if not 1 <= p <= min(m, n):
        raise ValueError(f"need 1 <= p <= min(m, n), got m={m}, n={n}, p={p}")
    N = min(m, n)
    _guard(N, N, p, p)
    D = subset_masks(N, p)
    rows = []
    for I in D:
        # L is forced: L = (I \ K) | (J \ K)
        J = D[:, None]
        K = D[None, :]
        L = (I & ~K) | (J & ~K)
        ok = s1_conditions(I, J, K, L) & (popcount(L) == p)
        jj, kk = np.nonzero(ok)
        if jj.size:
            rows.append(np.stack([np.full(jj.size, I), D[jj], D[kk], L[jj, kk]], axis=1))
    quads = np.concatenate(rows) if rows else np.zeros((0, 4), dtype=np.int64)
    return QuadrupleSet("S1", m, n, p, p, quads)


# statistics ---------------------------------------------------------------


@dataclass(frozen=True)
class DegenerateStat:
    """A decomposition together with its order and base size."""

    dec: DecomposedStatistic
    order: int
    base: int

    @property
    def space(self) -> ProductSpace:
        return self.dec.space


def degenerate(Y, space: ProductSpace, order: int | None = None, base: int | None = None) -> DegenerateStat:
    """Decompose ``Y`` and check that it is degenerate of a single order."""
    if isinstance(Y, DegenerateStat):
        return Y
    dec = Y if isinstance(Y, DecomposedStatistic) else decompose(Y, space)
    if dec.space != space:
        raise SpaceMismatch("statistic belongs to a different product space")
    orders = dec.orders()
    if order is None:
        if len(orders) != 1:
            raise NotDegenerate(f"components of sizes {sorted(orders)}; order cannot be inferred")
        order = orders.pop()
    elif orders - {order}:
        raise NotDegenerate(f"statistic has components of sizes {sorted(orders)}, not only {order}")
    if order == 0:
        raise NotDegenerate("constants are not degenerate U-statistics of positive order")
    needed = max(dec.base_size(), order)
    if base is None:
        base = needed
    elif base < needed or base > space.n:
        raise ValueError(f"base size {base} must lie in [{needed}, {space.n}]")
    return DegenerateStat(dec, order, base)


def _second_moments_by_mask(stat: DegenerateStat, limit: int) -> tuple[np.ndarray, np.ndarray]:
    masks = subset_masks(limit, stat.order)
    return masks, np.array([stat.dec.second_moment(int(mk)) for mk in masks])


def sigma_sq(stat: DegenerateStat, limit: int) -> float:
    _, mom = _second_moments_by_mask(stat, limit)
    return float(np.sum(mom))


def rho_sq(stat: DegenerateStat, limit: int) -> float:
    masks, mom = _second_moments_by_mask(stat, limit)
    best = 0.0
    for j in range(limit):
        best = max(best, float(np.sum(mom[(masks >> j) & 1 == 1])))
    return best


def _expanded_rows(dec: DecomposedStatistic, masks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    uniq, inv = np.unique(masks, return_inverse=True)
    mat = np.stack([np.asarray(dec.expand(int(mk)), dtype=np.float64).ravel() for mk in uniq])
    return mat, inv.reshape(masks.shape)


def quadruple_expectations(V: DecomposedStatistic, W: DecomposedStatistic, quads: np.ndarray) -> np.ndarray:
    """``E[V_I V_J W_K W_L]`` for each row ``(I, J, K, L)`` of ``quads``."""
    if len(quads) == 0:
        return np.zeros(0)
    weights = V.space.joint_probs().ravel()
    ev, iv = _expanded_rows(V, quads[:, :2])
    ew, iw = _expanded_rows(W, quads[:, 2:])
    out = np.empty(len(quads))
    chunk = max(1, 2_000_000 // weights.size)
    for s in range(0, len(quads), chunk):
        e = slice(s, s + chunk)
        prod = ev[iv[e, 0]] * ev[iv[e, 1]] * ew[iw[e, 0]] * ew[iw[e, 1]]
        out[e] = prod @ weights
    return out


def s0_value(V, W, space: ProductSpace, **kw) -> float:
    """``S_0(V, W)``: sum of ``E[V_I V_J W_K W_L]`` over ``S_0(m, n, q, p)``."""
    v, w = _pair(V, W, space, **kw)
    quads = enumerate_s0(v.base, w.base, v.order, w.order).quadruples
    return float(np.sum(quadruple_expectations(v.dec, w.dec, quads)))


def s1_value(V, W, space: ProductSpace, **kw) -> float:
    """``S_1(V, W)`` over ``S_1(m, n, p)``; requires equal orders."""
    v, w = _pair(V, W, space, **kw)
    if v.order != w.order:
        raise CaseMismatch("S_1 is defined for equal orders only")
    quads = enumerate_s1(v.base, w.base, v.order).quadruples
    return float(np.sum(quadruple_expectations(v.dec, w.dec, quads)))


def _pair(V, W, space, m=None, n=None, q=None, p=None) -> tuple[DegenerateStat, DegenerateStat]:
    for stat in (V, W):
        if isinstance(stat, (DegenerateStat, DecomposedStatistic)) and stat.space != space:
            raise SpaceMismatch("statistic belongs to a different product space")
    return degenerate(V, space, q, m), degenerate(W, space, p, n)


# exact identity and inequalities -----------------------------------------


def _lower_product_variance(v: DegenerateStat, w: DegenerateStat) -> float:
    """``sum over |M| <= p + q - 1`` of ``Var(U_M(V, W))``."""
    top = v.order + w.order - 1
    pcv = product_component_variances(v.dec, w.dec, v.space)
    return math.fsum(val for M, val in pcv.items() if len(M) <= top)


def covariance_identity_terms(V, W, space: ProductSpace, **kw) -> dict[str, float]:
    """Every term of the exact covariance identity for ``sum Var(U_M(V, W))``."""
    v, w = _pair(V, W, space, **kw)
    q, p = v.order, w.order
    vt, wt = v.dec.reconstruct(), w.dec.reconstruct()
    ev2, ew2 = expectation(vt**2, space), expectation(wt**2, space)
    evw = expectation(vt * wt, space)
    cov_sq = expectation(vt**2 * wt**2, space) - ev2 * ew2

    N = space.n
    Iq, Kp = subset_masks(N, q), subset_masks(N, p)
    disjoint = (Iq[:, None] & Kp[None, :]) == 0
    mv = np.array([v.dec.second_moment(int(mk)) for mk in Iq])
    mw = np.array([w.dec.second_moment(int(mk)) for mk in Kp])
    disjoint_sq = float(np.sum(np.outer(mv, mw)[disjoint]))
    cross = 0.0
    if p == q:
        c = np.array([v.dec.cross_moment(w.dec, int(mk)) for mk in Iq])
        cross = float(np.sum(np.outer(c, c)[disjoint]))
    s0 = s0_value(v, w, space)
    return {
        "lhs": _lower_product_variance(v, w),
        "cov_sq": cov_sq,
        "ev2_ew2": ev2 * ew2,
        "evw_sq": evw**2,
        "disjoint_sq": disjoint_sq,
        "s0": s0,
        "cross": cross,
    }


def check_covariance_identity(V, W, space: ProductSpace, **kw) -> tuple[float, float]:
    t = covariance_identity_terms(V, W, space, **kw)
    rhs = t["cov_sq"] + t["ev2_ew2"] - t["evw_sq"] - t["disjoint_sq"] - t["s0"] - t["cross"]
    return t["lhs"], rhs


def bifold_remainder(V, W, space: ProductSpace, **kw) -> float:
    """Quadruple terms the identity above leaves out when ``p != q``.

    Sums ``E[V_I V_J W_K W_L]`` over ``I & K == J & L == 0`` quadruples that are
    neither diagonal (``I == J``), nor crossed (``I == L``, ``J == K``), nor in
    ``S_0``.  Subtracting it from the identity's right-hand side gives an exact
    identity for every pair of orders; it vanishes when ``p == q``.
    """
    v, w = _pair(V, W, space, **kw)
    N = space.n
    Iq, Kp = subset_masks(N, v.order), subset_masks(N, w.order)
    I, J, K, L = np.meshgrid(Iq, Iq, Kp, Kp, indexing="ij")
    I, J, K, L = (x.ravel() for x in (I, J, K, L))
    keep = ((I & K) == 0) & ((J & L) == 0) & (I != J)
    keep &= ~((I == L) & (J == K))
    keep &= ~s0_conditions(I, J, K, L)
    # a free index kills the expectation by degeneracy; drop those terms up front
    keep &= (I & ~(J | K | L)) == 0
    keep &= (J & ~(I | K | L)) == 0
    keep &= (K & ~(I | J | L)) == 0
    keep &= (L & ~(I | J | K)) == 0
    quads = np.stack([I[keep], J[keep], K[keep], L[keep]], axis=1)
    return float(np.sum(quadruple_expectations(v.dec, w.dec, quads)))


def check_s0_upper_bound(W, space: ProductSpace, **kw) -> tuple[float, float]:
    """``S_0(W, W)`` and ``E[W^4] - 3 sigma^4 + 2 p sigma^2 rho^2``."""
    w = degenerate(W, space, kw.get("p"), kw.get("n"))
    s0 = s0_value(w, w, space)
    sig2 = sigma_sq(w, w.base)
    r2 = rho_sq(w, w.base)
    fourth = expectation(w.dec.reconstruct() ** 4, space)
    return s0, fourth - 3.0 * sig2**2 + 2.0 * w.order * sig2 * r2


def _square_lower_variance(stat: DegenerateStat, limit: int, top: int) -> float:
    """``sum over M in [limit], 1 <= |M| <= top`` of ``Var(U_M(stat, stat))``."""
    pcv = product_component_variances(stat.dec, stat.dec, stat.space)
    return math.fsum(val for M, val in pcv.items() if 1 <= len(M) <= top and all(i <= limit for i in M))


def check_varlemma2(V, W, space: ProductSpace, case: Literal["i", "ii"], **kw) -> tuple[float, float]:
    """Both sides of the variance bound for ``sum Var(U_M(V, W))``.

    Case ``"i"`` needs equal orders, case ``"ii"`` distinct ones.
    """
    v, w = _pair(V, W, space, **kw)
    q, p = v.order, w.order
    if case == "i" and p != q:
        raise CaseMismatch("case i requires p == q")
    if case == "ii" and p == q:
        raise CaseMismatch("case ii requires p != q")
    if case not in ("i", "ii"):
        raise CaseMismatch(f"unknown case {case!r}")
    m, n = v.base, w.base
    low = min(m, n)
    lhs = _lower_product_variance(v, w)
    s0 = s0_value(v, w, space)
    if case == "i":
        first = p * min(rho_sq(w, n) * sigma_sq(v, m), rho_sq(v, m) * sigma_sq(w, n))
        second = p * math.sqrt(rho_sq(v, low) * rho_sq(w, low) * sigma_sq(v, low) * sigma_sq(w, low))
        top = 2 * p - 1
        s1 = s1_value(v, w, space)
        rest = s1 - s0
    else:
        first = min(q * rho_sq(w, n) * sigma_sq(v, m), p * rho_sq(v, m) * sigma_sq(w, n))
        second = 0.0
        top = 2 * max(p, q) - 1
        rest = -s0
    root = math.sqrt(_square_lower_variance(v, low, top) * _square_lower_variance(w, low, top))
    return lhs, first + second + root + rest


# verification records -----------------------------------------------------


@dataclass(frozen=True)
class VerificationRecord:
    check: str
    instance: int
    params: dict
    lhs: float
    rhs: float
    margin: float
    passed: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))


def equality_record(check, instance, params, lhs, rhs, tol) -> VerificationRecord:
    margin = tol - abs(lhs - rhs)
    return VerificationRecord(check, instance, params, lhs, rhs, margin, margin >= 0.0)


def inequality_record(check, instance, params, lhs, rhs, tol=VIOLATION_TOL) -> VerificationRecord:
    margin = rhs - lhs
    return VerificationRecord(check, instance, params, lhs, rhs, margin, lhs <= rhs + tol)
