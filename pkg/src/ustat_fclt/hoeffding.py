"""Exact Hoeffding decompositions over small finite product spaces.

Statistics are dense tables over the joint atoms of a :class:`ProductSpace`,
laid out in mixed-radix order with coordinate 1 varying slowest (numpy C
order on ``space.shape``).  Coordinates and index sets are 1-based, as in
``[n] = {1, ..., n}``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

EXPECTATION_TOL = 1e-12
IDENTITY_TOL = 1e-10
DEFAULT_MAX_ATOMS = 10**6
DEFAULT_MAX_COORDS = 12


class HoeffdingError(ValueError):
    pass


class ShapeMismatch(HoeffdingError):
    pass


class BadIndexSet(HoeffdingError):
    pass


class TooLarge(HoeffdingError):
    pass


class SpaceMismatch(HoeffdingError):
    pass


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finitely many atoms ``values`` with positive weights ``probs``."""

    values: tuple[float, ...]
    probs: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        if len(vals) != len(probs) or not vals:
            raise ValueError("need the same positive number of values and probabilities")
        if any(p <= 0.0 for p in probs):
            raise ValueError("probabilities must be positive")
        if abs(math.fsum(probs) - 1.0) > EXPECTATION_TOL:
            raise ValueError("probabilities must sum to one")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_atoms(cls, atoms: Iterable[tuple[float, float]]) -> DiscreteDistribution:
        vals, probs = zip(*atoms)
        return cls(vals, probs)

    @classmethod
    def rademacher(cls) -> DiscreteDistribution:
        return cls((-1.0, 1.0), (0.5, 0.5))

    @classmethod
    def random(cls, rng: np.random.Generator, n_atoms: int, standardize: bool = True) -> DiscreteDistribution:
        """Random atoms and weights; optionally shifted and scaled to mean 0, variance 1."""
        while True:
            vals = rng.standard_normal(n_atoms)
            probs = rng.dirichlet(np.ones(n_atoms))
            probs = probs / probs.sum()
            if np.all(probs > 1e-6):
                break
        if standardize:
            mu = float(np.dot(probs, vals))
            sd = math.sqrt(float(np.dot(probs, (vals - mu) ** 2)))
            vals = (vals - mu) / sd
        probs[-1] = 1.0 - probs[:-1].sum()
        return cls(tuple(vals), tuple(probs))

    def __len__(self) -> int:
        return len(self.values)

    @property
    def value_array(self) -> np.ndarray:
        return np.array(self.values)

    @property
    def prob_array(self) -> np.ndarray:
        return np.array(self.probs)

    def moment(self, k: int) -> float:
        return float(np.dot(self.prob_array, self.value_array**k))

    @property
    def mean(self) -> float:
        return self.moment(1)

    @property
    def variance(self) -> float:
        return float(np.dot(self.prob_array, (self.value_array - self.mean) ** 2))

    @property
    def centered(self) -> bool:
        return abs(self.mean) <= EXPECTATION_TOL

    @property
    def standardized(self) -> bool:
        return self.centered and abs(self.variance - 1.0) <= EXPECTATION_TOL


@dataclass(frozen=True)
class ProductSpace:
    """Independent coordinates ``X_1, ..., X_n`` with finite laws."""

    coordinates: tuple[DiscreteDistribution, ...]
    max_atoms: int = field(default=DEFAULT_MAX_ATOMS, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "coordinates", tuple(self.coordinates))
        if math.prod(len(c) for c in self.coordinates) > self.max_atoms:
            raise TooLarge(f"product space exceeds {self.max_atoms} joint atoms")

    @classmethod
    def iid(cls, dist: DiscreteDistribution, n: int, **kw) -> ProductSpace:
        return cls(tuple([dist] * n), **kw)

    @classmethod
    def rademacher(cls, n: int) -> ProductSpace:
        return cls.iid(DiscreteDistribution.rademacher(), n)

    @property
    def n(self) -> int:
        return len(self.coordinates)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(c) for c in self.coordinates)

    @property
    def n_atoms(self) -> int:
        return math.prod(self.shape)

    def coordinate(self, i: int) -> np.ndarray:
        """Values of ``X_i`` broadcast over the joint table."""
        shape = [1] * self.n
        shape[i - 1] = self.shape[i - 1]
        return self.coordinates[i - 1].value_array.reshape(shape)

    def joint_probs(self) -> np.ndarray:
        out = np.ones(())
        for c in self.coordinates:
            out = np.multiply.outer(out, c.prob_array)
        return out

    def tabulate(self, fn: Callable[..., np.ndarray]) -> np.ndarray:
        """Table of ``fn(X_1, ..., X_n)``, each argument a broadcast value array."""
        out = fn(*(self.coordinate(i) for i in range(1, self.n + 1)))
        return np.broadcast_to(np.asarray(out, dtype=np.float64), self.shape).copy()

    def to_json(self) -> str:
        return json.dumps(
            {"coordinates": [{"values": list(c.values), "probs": list(c.probs)} for c in self.coordinates]},
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> ProductSpace:
        doc = json.loads(text)
        return cls(tuple(DiscreteDistribution(tuple(c["values"]), tuple(c["probs"])) for c in doc["coordinates"]))


def index_set(M: Iterable[int], n: int) -> tuple[int, ...]:
    """Validate and canonicalize a subset of ``[n]``."""
    M = tuple(sorted(int(i) for i in M))
    if len(set(M)) != len(M) or any(i < 1 or i > n for i in M):
        raise BadIndexSet(f"{M} is not a subset of [1, {n}]")
    return M


def mask_of(M: Iterable[int]) -> int:
    out = 0
    for i in M:
        out |= 1 << (i - 1)
    return out


def members(mask: int) -> tuple[int, ...]:
    out = []
    i = 1
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def _as_table(Y, space: ProductSpace) -> np.ndarray:
    arr = np.asarray(Y, dtype=np.float64)
    if arr.size != space.n_atoms:
        raise ShapeMismatch(f"table has {arr.size} entries, space has {space.n_atoms} joint atoms")
    return arr.reshape(space.shape)


def expectation(Y, space: ProductSpace) -> float:
    table = _as_table(Y, space)
    return float(np.sum(table * space.joint_probs()))


def conditional_expectation(Y, J: Iterable[int], space: ProductSpace) -> np.ndarray:
    """``E[Y | X_j, j in J]`` as a table over the coordinates of ``J`` (in order)."""
    J = index_set(J, space.n)
    out = _as_table(Y, space)
    for i in sorted(set(range(1, space.n + 1)) - set(J), reverse=True):
        out = np.tensordot(out, space.coordinates[i - 1].prob_array, axes=([i - 1], [0]))
    return out


def _embed(table: np.ndarray, coords: Sequence[int], target: Sequence[int]) -> np.ndarray:
    """Reshape a table over ``coords`` so it broadcasts against one over ``target``."""
    shape = [1] * len(target)
    pos = {c: k for k, c in enumerate(target)}
    for c, size in zip(coords, table.shape):
        shape[pos[c]] = size
    return table.reshape(shape)


def hoeffding_component(Y, M: Iterable[int], space: ProductSpace) -> np.ndarray:
    """``Y_M`` by inclusion-exclusion over conditional expectations."""
    M = index_set(M, space.n)
    shape = tuple(space.shape[i - 1] for i in M)
    out = np.zeros(shape)
    for size in range(len(M) + 1):
        sign = -1.0 if (len(M) - size) % 2 else 1.0
        for J in itertools.combinations(M, size):
            out = out + sign * _embed(conditional_expectation(Y, J, space), J, M)
    return out


@dataclass(frozen=True, eq=False)
class DecomposedStatistic:
    """A statistic with its full table of Hoeffding components.

    ``tables[mask]`` holds ``Y_M`` over the coordinates of ``M`` where bit
    ``i - 1`` of ``mask`` marks ``i in M``.
    """

    space: ProductSpace
    tables: tuple[np.ndarray, ...]

    @property
    def components(self) -> dict[tuple[int, ...], np.ndarray]:
        return {members(mask): t for mask, t in enumerate(self.tables)}

    def component(self, M: Iterable[int]) -> np.ndarray:
        return self.tables[mask_of(index_set(M, self.space.n))]

    def expand(self, mask: int) -> np.ndarray:
        """``Y_M`` broadcast to the full joint table."""
        full = tuple(range(1, self.space.n + 1))
        return np.broadcast_to(_embed(self.tables[mask], members(mask), full), self.space.shape)

    def reconstruct(self) -> np.ndarray:
        out = np.zeros(self.space.shape)
        for mask in range(len(self.tables)):
            out = out + self.expand(mask)
        return out

    def second_moment(self, mask: int) -> float:
        """``E[Y_M^2]`` computed over the coordinates of ``M`` only."""
        return _moment_over(self.tables[mask] ** 2, members(mask), self.space)

    def second_moments(self) -> np.ndarray:
        return np.array([self.second_moment(mask) for mask in range(len(self.tables))])

    def cross_moment(self, other: DecomposedStatistic, mask: int) -> float:
        """``E[Y_M Z_M]`` for two decompositions over the same space."""
        return _moment_over(self.tables[mask] * other.tables[mask], members(mask), self.space)

    def orders(self, tol: float = IDENTITY_TOL) -> set[int]:
        """Sizes ``|M|`` carrying a component with L2 norm at least ``tol``."""
        norms = np.sqrt(np.maximum(self.second_moments(), 0.0))
        return {bin(mask).count("1") for mask in range(len(self.tables)) if norms[mask] >= tol}

    def base_size(self, tol: float = IDENTITY_TOL) -> int:
        """Smallest ``m`` such that every nonzero component lies inside ``[m]``."""
        norms = np.sqrt(np.maximum(self.second_moments(), 0.0))
        top = 0
        for mask in range(len(self.tables)):
            if norms[mask] >= tol and mask:
                top = max(top, mask.bit_length())
        return top


def _moment_over(table: np.ndarray, coords: Sequence[int], space: ProductSpace) -> float:
    out = table
    for c in reversed(coords):
        out = np.tensordot(out, space.coordinates[c - 1].prob_array, axes=([out.ndim - 1], [0]))
    return float(out)


def decompose(Y, space: ProductSpace, max_coords: int = DEFAULT_MAX_COORDS) -> DecomposedStatistic:
    """All ``2^n`` Hoeffding components.

    Applies ``E_i`` and ``I - E_i`` coordinate by coordinate, which equals the
    inclusion-exclusion formula of :func:`hoeffding_component`.
    """
    if space.n > max_coords:
        raise TooLarge(f"{space.n} coordinates exceed the brute-force cap of {max_coords}")
    table = _as_table(Y, space)
    # (mask, array): axes are kept coordinates (mask order) then unprocessed ones
    level = [(0, table)]
    for i in range(space.n):
        probs = space.coordinates[i].prob_array
        nxt = []
        for mask, arr in level:
            axis = bin(mask).count("1")
            mean = np.tensordot(arr, probs, axes=([axis], [0]))
            dev = arr - np.expand_dims(mean, axis)
            nxt.append((mask, mean))
            nxt.append((mask | (1 << i), dev))
        level = nxt
    tables = [None] * (1 << space.n)
    for mask, arr in level:
        tables[mask] = arr
    return DecomposedStatistic(space, tuple(tables))


def _as_decomposed(Y, space: ProductSpace) -> DecomposedStatistic:
    if isinstance(Y, DecomposedStatistic):
        if Y.space != space:
            raise SpaceMismatch("statistic belongs to a different product space")
        return Y
    return decompose(Y, space)


def is_degenerate(Y, space: ProductSpace, p: int) -> bool:
    """True iff every component of size other than ``p`` vanishes in L2."""
    dec = _as_decomposed(Y, space)
    moments = dec.second_moments()
    for mask in range(len(dec.tables)):
        if bin(mask).count("1") != p and math.sqrt(max(moments[mask], 0.0)) >= IDENTITY_TOL:
            return False
    return True


def product_component_variances(V, W, space: ProductSpace) -> dict[tuple[int, ...], float]:
    """``Var(U_M(V, W))`` for every ``M``, from the decomposition of ``V W``."""
    if isinstance(V, DecomposedStatistic) and isinstance(W, DecomposedStatistic) and V.space != W.space:
        raise SpaceMismatch("V and W live on different product spaces")
    v = _as_decomposed(V, space).reconstruct()
    w = _as_decomposed(W, space).reconstruct()
    prod = decompose(v * w, space)
    out = {}
    for mask in range(len(prod.tables)):
        out[members(mask)] = 0.0 if mask == 0 else prod.second_moment(mask)
    return out


def homogeneous_sum_table(kernel, space: ProductSpace) -> np.ndarray:
    """Table of ``sum_J a_J prod_{i in J} X_i`` (kernel indices are coordinates)."""
    if kernel.size > space.n:
        raise ShapeMismatch("kernel size exceeds the number of coordinates")
    out = np.zeros(space.shape)
    for row, a in zip(kernel.supports, kernel.values):
        term = np.asarray(a)
        for i in row:
            term = term * space.coordinate(int(i))
        out = out + term
    return out


def table_to_csv(Y, space: ProductSpace) -> str:
    """``joint-atom index, value`` rows in mixed-radix order."""
    flat = _as_table(Y, space).ravel()
    return "index,value\n" + "".join(f"{k},{float(v)!r}\n" for k, v in enumerate(flat))


def table_from_csv(text: str, space: ProductSpace) -> np.ndarray:
    rows = [ln.split(",") for ln in text.strip().splitlines()[1:]]
    flat = np.zeros(len(rows))
    for idx, val in rows:
        flat[int(idx)] = float(val)
    return _as_table(flat, space)
