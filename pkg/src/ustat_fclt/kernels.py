"""Sparse symmetric kernels of homogeneous sums.

A kernel of order ``p`` on ``[m]`` is stored as the coefficient family
``{a_J}`` indexed by strictly increasing ``p``-tuples ``J`` (1-based).  The
symmetric point function ``f(i_1, ..., i_p) = a_{{i_1..i_p}} / p!`` (zero on
diagonals) is never materialized; every quantity below is a subset sum over
the stored supports.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Mapping

import numpy as np
from scipy import sparse

NORMALIZATION_TOL = 1e-12


class KernelError(ValueError):
    """Base class for kernel construction and query errors."""


class KeyOutOfRange(KernelError):
    pass


class DiagonalKey(KernelError):
    pass


class DuplicateKey(KernelError):
    pass


class ZeroKernel(KernelError):
    pass


class IndexOutOfRange(KernelError):
    pass


class DepthOutOfRange(KernelError):
    pass


class NonPositiveEntry(KernelError):
    pass


class InvalidArity(KernelError):
    pass


class TooSmall(KernelError):
    pass


class MomentBelowOne(KernelError):
    pass


@dataclass(frozen=True, eq=False)
class SparseKernel:
    """Coefficients ``a_J`` of a homogeneous sum of order ``order`` on ``[size]``.

    ``supports`` is an ``(s, p)`` integer array of 1-based, strictly increasing
    rows in lexicographic order; ``values[k]`` is the coefficient of row ``k``.
    Build instances with :func:`make_kernel` or :meth:`from_arrays`.
    """

    order: int
    size: int
    supports: np.ndarray
    values: np.ndarray
    normalized: bool = field(default=False)

    @classmethod
    def from_arrays(cls, order, size, supports, values, *, check=True):
        supports = np.asarray(supports, dtype=np.int64).reshape(-1, order)
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if supports.shape[0] != values.shape[0]:
            raise ValueError("supports and values have different lengths")
        if order < 1 or size < order:
            raise ValueError(f"need 1 <= p <= m, got p={order}, m={size}")
        if check:
            _validate_rows(supports, size)
            if not np.all(np.isfinite(values)):
                raise ValueError("kernel coefficients must be finite")
        # canonical storage: rows sorted, rows in lexicographic order
        supports = np.sort(supports, axis=1)
        perm = np.lexsort(supports.T[::-1])
        supports = np.ascontiguousarray(supports[perm])
        values = np.ascontiguousarray(values[perm])
        if check and supports.shape[0] > 1:
            same = np.all(supports[1:] == supports[:-1], axis=1)
            if same.any():
                dup = tuple(int(v) for v in supports[1:][same][0])
                raise DuplicateKey(f"support {dup} given more than once")
        supports.setflags(write=False)
        values.setflags(write=False)
        sq = float(np.sum(values**2))
        return cls(order, size, supports, values, abs(sq - 1.0) <= NORMALIZATION_TOL)

    @property
    def n_supports(self) -> int:
        return int(self.values.shape[0])

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(v) for v in row): float(a) for row, a in zip(self.supports, self.values)}

    def sum_of_squares(self) -> float:
        return float(np.sum(self.values**2))

    def point(self, *indices: int) -> float:
        """The symmetric function value ``f(i_1, ..., i_p)``."""
        if len(indices) != self.order:
            raise ValueError(f"expected {self.order} indices")
        if len(set(indices)) < self.order:
            return 0.0
        key = np.array(sorted(indices), dtype=np.int64)
        hit = np.nonzero(np.all(self.supports == key, axis=1))[0]
        if hit.size == 0:
            return 0.0
        return float(self.values[hit[0]]) / math.factorial(self.order)

    @cached_property
    def max_index(self) -> np.ndarray:
        return self.supports[:, -1] if self.n_supports else np.zeros(0, dtype=np.int64)

    @cached_property
    def prefix_order(self) -> np.ndarray:
        """Support permutation sorting by largest index (stable)."""
        return np.argsort(self.max_index, kind="stable")

    @cached_property
    def _prefix_profile(self) -> tuple[np.ndarray, np.ndarray]:
        order = self.prefix_order
        return self.max_index[order], np.cumsum(self.values[order] ** 2)


def _validate_rows(rows: np.ndarray, size: int) -> None:
    if rows.size == 0:
        return
    if rows.min() < 1 or rows.max() > size:
        bad = rows[np.any((rows < 1) | (rows > size), axis=1)][0]
        raise KeyOutOfRange(f"key {tuple(int(v) for v in bad)} not inside [1, {size}]")
    srt = np.sort(rows, axis=1)
    if rows.shape[1] > 1:
        diag = np.any(srt[:, 1:] == srt[:, :-1], axis=1)
        if diag.any():
            raise DiagonalKey(f"key {tuple(int(v) for v in rows[diag][0])} repeats an index")


def make_kernel(p: int, m: int, entries: Mapping) -> SparseKernel:
    """Build a kernel from ``{J: a_J}``; keys may be ints when ``p == 1``."""
    if p < 1 or m < p:
        raise ValueError(f"need 1 <= p <= m, got p={p}, m={m}")
    rows = []
    vals = []
    for key, value in entries.items():
        tup = (key,) if np.isscalar(key) else tuple(key)
        if len(tup) != p:
            raise KeyOutOfRange(f"key {tup} does not have {p} entries")
        rows.append([int(v) for v in tup])
        vals.append(float(value))
    supports = np.array(rows, dtype=np.int64).reshape(-1, p)
    return SparseKernel.from_arrays(p, m, supports, np.array(vals))


def random_kernel(p: int, m: int, rng: np.random.Generator, density: float = 1.0,
                  normalize_result: bool = True) -> SparseKernel:
    """Standard-normal coefficients on a random fraction ``density`` of ``D_p(m)``."""
    if not 0.0 < density <= 1.0:
        raise ValueError("density must lie in (0, 1]")
    rows = np.array(list(itertools.combinations(range(1, m + 1), p)), dtype=np.int64).reshape(-1, p)
    keep = rng.random(rows.shape[0]) < density if density < 1.0 else np.ones(rows.shape[0], bool)
    if not keep.any():
        keep[rng.integers(rows.shape[0])] = True
    coeffs = rng.standard_normal(int(keep.sum()))
    k = SparseKernel.from_arrays(p, m, rows[keep], coeffs)
    return normalize(k) if normalize_result else k


def normalize(k: SparseKernel) -> SparseKernel:
    total = k.sum_of_squares()
    if total <= 0.0:
        raise ZeroKernel("kernel has no nonzero coefficient")
    if abs(total - 1.0) <= NORMALIZATION_TOL:
        return k
    return SparseKernel.from_arrays(k.order, k.size, k.supports, k.values / math.sqrt(total), check=False)


def influences(k: SparseKernel) -> np.ndarray:
    """``Inf_i(f)`` for ``i = 1..m`` (entry ``i - 1``)."""
    sq = np.repeat(k.values**2, k.order)
    mass = np.bincount(k.supports.ravel() - 1, weights=sq, minlength=k.size)
    return mass / math.factorial(k.order) ** 2


def influence(k: SparseKernel, i: int) -> float:
    if not 1 <= i <= k.size:
        raise IndexOutOfRange(f"index {i} not in [1, {k.size}]")
    hit = np.any(k.supports == i, axis=1)
    return float(np.sum(k.values[hit] ** 2)) / math.factorial(k.order) ** 2


def rho_squared(k: SparseKernel) -> float:
    """Largest variance mass carried by a single coordinate."""
    if k.n_supports == 0:
        return 0.0
    sq = np.repeat(k.values**2, k.order)
    return float(np.bincount(k.supports.ravel() - 1, weights=sq, minlength=k.size).max())


def sigma_sq_prefix(k: SparseKernel, j) -> float | np.ndarray:
    """``sum of a_J**2`` over supports inside ``[j]``; vectorized over ``j``."""
    js = np.asarray(j)
    if np.any(js < 0) or np.any(js > k.size):
        raise IndexOutOfRange(f"prefix length must lie in [0, {k.size}]")
    maxes, csum = k._prefix_profile
    if csum.size == 0:
        out = np.zeros(js.shape)
    else:
        pos = np.searchsorted(maxes, js, side="right")
        out = np.where(pos > 0, csum[np.maximum(pos - 1, 0)], 0.0)
    return float(out) if out.ndim == 0 else out


def sf_profile(k: SparseKernel, t) -> np.ndarray:
    """``Sf(t) = sigma_sq_prefix(k, floor(m t))`` on an array of times."""
    return sigma_sq_prefix(k, integer_part(k.size, t))


def integer_part(m: int, t) -> np.ndarray:
    """``floor(m * t)`` for grid times, immune to binary rounding of ``t``."""
    return np.floor(np.round(m * np.asarray(t, dtype=np.float64), 9)).astype(np.int64)


# contractions -------------------------------------------------------------


@dataclass(frozen=True)
class ContractionTable:
    r: int
    values: dict

    def norm(self) -> float:
        return math.sqrt(sum(v * v for v in self.values.values()))


def _ordered_expansion(k: SparseKernel) -> tuple[np.ndarray, np.ndarray]:
    """All ordered tuples of the symmetric function with their values ``a_J/p!``."""
    p = k.order
    perms = np.array(list(itertools.permutations(range(p))), dtype=np.int64)
    tuples = k.supports[:, perms].reshape(-1, p)
    vals = np.repeat(k.values / math.factorial(p), perms.shape[0])
    return tuples, vals


def _split_matrix(k: SparseKernel, r: int):
    """Sparse matrix ``A[i, l] = f(i, l)`` with ``i`` the first ``p - r`` slots."""
    tuples, vals = _ordered_expansion(k)
    left, right = tuples[:, : k.order - r], tuples[:, k.order - r :]
    row_keys, row_idx = _unique_rows(left, k.size)
    col_keys, col_idx = _unique_rows(right, k.size)
    mat = sparse.csr_matrix((vals, (row_idx, col_idx)), shape=(row_keys.shape[0], col_keys.shape[0]))
    return mat, row_keys


def _unique_rows(rows: np.ndarray, size: int) -> tuple[np.ndarray, np.ndarray]:
    width = rows.shape[1]
    if width * math.log2(size + 1) < 62:
        codes = np.zeros(rows.shape[0], dtype=np.int64)
        for c in range(width):
            codes = codes * (size + 1) + rows[:, c]
        uniq, inv = np.unique(codes, return_inverse=True)
        keys = np.empty((uniq.shape[0], width), dtype=np.int64)
        rest = uniq.copy()
        for c in range(width - 1, -1, -1):
            keys[:, c] = rest % (size + 1)
            rest //= size + 1
        return keys, inv.ravel()
    keys, inv = np.unique(rows, axis=0, return_inverse=True)
    return keys, inv.ravel()


def _check_depth(k: SparseKernel, r: int) -> None:
    if not 1 <= r <= k.order - 1:
        raise DepthOutOfRange(f"contraction depth must lie in [1, {k.order - 1}], got {r}")


def contraction(k: SparseKernel, r: int) -> ContractionTable:
    """The contraction kernel on its nonzero entries (intended for small kernels)."""
    _check_depth(k, r)
    if k.n_supports == 0:
        return ContractionTable(r, {})
    a, row_keys = _split_matrix(k, r)
    prod = (a @ a.T).tocoo()
    table = {}
    for i, j, v in zip(prod.row, prod.col, prod.data):
        if v != 0.0:
            key = tuple(int(x) for x in row_keys[i]) + tuple(int(x) for x in row_keys[j])
            table[key] = float(v)
    return ContractionTable(r, table)


def contraction_norm(k: SparseKernel, r: int) -> float:
    """L2 norm of the contraction kernel under counting measure.

    Uses ``||A A^T||_F = ||A^T A||_F`` and forms whichever Gram matrix is
    indexed by fewer distinct tuples, so only pairs of supports sharing the
    contracted indices are ever touched.
    """
    _check_depth(k, r)
    if k.n_supports == 0:
        return 0.0
    a, _ = _split_matrix(k, r)
    gram = (a.T @ a) if a.shape[1] <= a.shape[0] else (a @ a.T)
    gram.sum_duplicates()
    return math.sqrt(float(np.sum(gram.data**2)))


# fractional cartesian products --------------------------------------------


def _check_tuple(t) -> tuple[int, ...]:
    t = tuple(int(v) for v in t)
    if any(v < 1 for v in t):
        raise NonPositiveEntry(f"tuple {t} has a non-positive entry")
    return t


def phi_map(a: int, t) -> int:
    """Shell-preserving injection of ``N^a`` into ``N``.

    Tuples with maximum ``k`` fill ``((k-1)^a, k^a]`` in lexicographic order.
    """
    t = _check_tuple(t)
    if len(t) != a:
        raise ValueError(f"expected an {a}-tuple")
    k = max(t)
    rank = 0
    prefix_max = 0
    for pos, tv in enumerate(t):
        rest = a - pos - 1
        for v in range(1, tv):
            if max(prefix_max, v) == k:
                rank += k**rest
            else:
                rank += k**rest - (k - 1) ** rest
        prefix_max = max(prefix_max, tv)
    return (k - 1) ** a + rank + 1


def phi_table(a: int, top: int) -> np.ndarray:
    """Lookup array with ``table[t_1 - 1, ..., t_a - 1] = phi(t)`` over ``[top]^a``."""
    grids = np.indices((top,) * a).reshape(a, -1) + 1
    shell = grids.max(axis=0)
    order = np.lexsort(tuple(grids[::-1]) + (shell,))
    out = np.empty(grids.shape[1], dtype=np.int64)
    out[order] = np.arange(1, grids.shape[1] + 1)
    return out.reshape((top,) * a)


def integer_root(m: int, a: int) -> int:
    """Largest ``k`` with ``k**a <= m``."""
    k = int(round(m ** (1.0 / a)))
    while k**a > m:
        k -= 1
    while (k + 1) ** a <= m:
        k += 1
    return k


def cyclic_windows(p: int, a: int) -> list[tuple[int, ...]]:
    """``S_i = {i, ..., i + a - 1} mod p`` listed in increasing order (1-based)."""
    return [tuple(sorted(((i + j) % p) + 1 for j in range(a))) for i in range(p)]


def _check_fractional(p: int, a: int, m: int) -> None:
    if p < 3 or not 2 <= a <= p - 1:
        raise InvalidArity(f"need p >= 3 and 2 <= a <= p - 1, got p={p}, a={a}")
    if m <= p**a:
        raise TooSmall(f"need m > p**a = {p**a}, got m={m}")


def fractional_base_supports(p: int, a: int, m: int) -> np.ndarray:
    """Rows of ``F^0_m`` as ordered tuples (one per increasing ``t``)."""
    _check_fractional(p, a, m)
    top = integer_root(m, a)
    table = phi_table(a, top)
    ts = np.array(list(itertools.combinations(range(top), p)), dtype=np.int64).reshape(-1, p)
    cols = []
    for window in cyclic_windows(p, a):
        idx = tuple(ts[:, w - 1] for w in window)
        cols.append(table[idx])
    return np.stack(cols, axis=1)


def fractional_kernel(p: int, a: int, m: int) -> SparseKernel:
    """Normalized indicator kernel of the symmetrized fractional product ``F_m``."""
    base = fractional_base_supports(p, a, m)
    # a_J = p! (p! |F_m|)^(-1/2) with |F_m| = p! |F^0_m|
    values = np.full(base.shape[0], 1.0 / math.sqrt(base.shape[0]))
    return SparseKernel.from_arrays(p, m, base, values)


def fractional_prefix_count(p: int, a: int, m: int, ell: int) -> int:
    """``|F^0_m intersected with [ell]^p|``."""
    base = fractional_base_supports(p, a, m)
    return int(np.sum(base.max(axis=1) <= ell))


def fractional_counting_ratio(p: int, a: int, m: int, ell: int) -> float:
    """``|F^0_m ∩ [ell]^p| / |F^0_ell|``; tends to one along ``ell ~ alpha m``."""
    return fractional_prefix_count(p, a, m, ell) / math.comb(integer_root(ell, a), p)


def fractional_growth_constant(p: int, a: int, m: int) -> float:
    """Empirical ``b`` in ``|F_m| ~ b m^(p/a)``."""
    _check_fractional(p, a, m)
    return math.factorial(p) * math.comb(integer_root(m, a), p) / m ** (p / a)


# fourth-moment factor -----------------------------------------------------


def d_factor(k: SparseKernel, fourth_moments) -> float:
    """Worst ratio ``E[W_J^4] / E[W_J^2]^2 = prod_{i in J} E[X_i^4]`` over active supports."""
    mu4 = np.broadcast_to(np.asarray(fourth_moments, dtype=np.float64), (k.size,))
    if np.any(mu4 < 1.0 - NORMALIZATION_TOL):
        raise MomentBelowOne("fourth moments of unit-variance inputs are at least 1")
    active = k.supports[k.values != 0.0]
    if active.shape[0] == 0:
        return 1.0
    return float(np.max(np.prod(mu4[active - 1], axis=1)))


# serialization ------------------------------------------------------------


def kernel_to_text(k: SparseKernel, header_comment: str | None = None) -> str:
    lines = []
    if header_comment is not None:
        lines.extend(f"# {ln}" for ln in header_comment.splitlines())
    lines.append(f"{k.order} {k.size}")
    for row, a in zip(k.supports, k.values):
        lines.append(" ".join(str(int(v)) for v in row) + " " + repr(float(a)))
    return "\n".join(lines) + "\n"


def kernel_from_text(text: str) -> SparseKernel:
    body = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not body:
        raise ValueError("empty kernel file")
    p, m = int(body[0][0]), int(body[0][1])
    rows = [[int(v) for v in ln[:p]] for ln in body[1:]]
    vals = [float(ln[p]) for ln in body[1:]]
    for ln in body[1:]:
        if len(ln) != p + 1:
            raise ValueError(f"malformed kernel line: {' '.join(ln)}")
    return SparseKernel.from_arrays(p, m, np.array(rows, dtype=np.int64).reshape(-1, p), np.array(vals))


def kernel_to_json(k: SparseKernel, **extra) -> str:
    doc = dict(extra)
    doc.update(
        order=k.order,
        size=k.size,
        supports=k.supports.tolist(),
        values=[float(v) for v in k.values],
    )
    return json.dumps(doc, indent=None, separators=(",", ":")) + "\n"


def kernel_from_json(text: str) -> SparseKernel:
    doc = json.loads(text)
    supports = np.array(doc["supports"], dtype=np.int64).reshape(-1, int(doc["order"]))
    return SparseKernel.from_arrays(int(doc["order"]), int(doc["size"]), supports, np.array(doc["values"], dtype=float))


def load_kernel(path) -> SparseKernel:
    path = Path(path)
    text = path.read_text()
    if path.suffix == ".json":
        return kernel_from_json(text)
    return kernel_from_text(text)
