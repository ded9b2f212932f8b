"""Input sampling, homogeneous-sum paths, limit paths and seeded Monte Carlo.

Randomness: every replicate ``r`` of stream ``s`` draws from
``SeedSequence(master, spawn_key=(s, r))``, so a replicate's inputs depend
only on ``(master, s, r)`` and never on ``N``, chunking or threads.
"""

from __future__ import annotations

import io
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .hoeffding import DiscreteDistribution
from .kernels import SparseKernel, integer_part

POISSON_INVERSION_MAX = 30.0
SMALL_LAMBDA = 1e-3
CHUNK_ELEMENTS = 4_000_000
GRID_TOL = 1e-12
# rng.random() returns multiples of 2**-53 in [0, 1); the shift lands strictly inside (0, 1)
_HALF_ULP = 2.0**-54


class SimulationError(ValueError):
    pass


class BadLambda(SimulationError):
    pass


class LengthMismatch(SimulationError):
    pass


class MixedSizes(SimulationError):
    pass


class NonMonotoneTimeChange(SimulationError):
    pass


class BadGrid(SimulationError):
    pass


# input families -----------------------------------------------------------


@dataclass(frozen=True)
class InputFamily:
    """Law of the i.i.d. (or index-dependent, for Poisson) input sequence."""

    kind: str
    lam: float | tuple[float, ...] | None = None
    dist: DiscreteDistribution | None = None

    def __post_init__(self):
        if self.kind not in ("gaussian", "rademacher", "normalized_poisson", "finite"):
            raise SimulationError(f"unknown input family {self.kind!r}")
        if self.kind == "normalized_poisson":
            lam = np.atleast_1d(np.asarray(self.lam, dtype=np.float64))
            if lam.size == 0 or not np.all(np.isfinite(lam)) or np.any(lam <= 0.0):
                raise BadLambda(f"Poisson intensities must be positive, got {self.lam!r}")
            if lam.min() < SMALL_LAMBDA:
                warnings.warn(f"smallest intensity {lam.min():g} gives fourth moment {3 + 1 / lam.min():g}",
                              stacklevel=3)
            value = float(lam[0]) if np.ndim(self.lam) == 0 else tuple(float(v) for v in lam)
            object.__setattr__(self, "lam", value)
        elif self.kind == "finite":
            if self.dist is None or not self.dist.standardized:
                raise SimulationError("finite family needs a mean 0, variance 1 distribution")

    @classmethod
    def gaussian(cls) -> InputFamily:
        return cls("gaussian")

    @classmethod
    def rademacher(cls) -> InputFamily:
        return cls("rademacher")

    @classmethod
    def normalized_poisson(cls, lam) -> InputFamily:
        return cls("normalized_poisson", lam=lam)

    @classmethod
    def finite(cls, dist: DiscreteDistribution) -> InputFamily:
        return cls("finite", dist=dist)

    def lambdas(self, m: int) -> np.ndarray:
        if self.kind != "normalized_poisson":
            raise SimulationError("only Poisson families carry intensities")
        if isinstance(self.lam, tuple):
            if len(self.lam) < m:
                raise LengthMismatch(f"{len(self.lam)} intensities for {m} inputs")
            return np.array(self.lam[:m])
        return np.full(m, self.lam)

    def fourth_moments(self, m: int) -> np.ndarray:
        if self.kind == "gaussian":
            return np.full(m, 3.0)
        if self.kind == "rademacher":
            return np.ones(m)
        if self.kind == "finite":
            return np.full(m, self.dist.moment(4))
        return 3.0 + 1.0 / self.lambdas(m)

    @property
    def beta(self) -> float:
        """Uniform fourth-moment bound over the whole sequence."""
        if self.kind == "normalized_poisson":
            return 3.0 + 1.0 / float(np.min(self.lam))
        return float(self.fourth_moments(1)[0])

    def to_dict(self) -> dict:
        if self.kind == "normalized_poisson":
            return {"kind": self.kind, "lam": list(self.lam) if isinstance(self.lam, tuple) else self.lam}
        if self.kind == "finite":
            return {"kind": self.kind, "values": list(self.dist.values), "probs": list(self.dist.probs)}
        return {"kind": self.kind}


def _poisson_cdf_table(lam: float) -> np.ndarray:
    # extend until the remaining tail is below the resolution of rng.random()
    top = int(lam + 12.0 * math.sqrt(lam) + 40.0)
    k = np.arange(top + 1)
    return special.pdtr(k, lam)


def draw_inputs(family: InputFamily, rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    m = shape[-1]
    if family.kind == "gaussian":
        return special.ndtri(rng.random(shape) + _HALF_ULP)
    if family.kind == "rademacher":
        return 2.0 * rng.integers(0, 2, size=shape).astype(np.float64) - 1.0
    if family.kind == "finite":
        cdf = np.cumsum(family.dist.prob_array)
        idx = np.minimum(np.searchsorted(cdf, rng.random(shape), side="right"), len(cdf) - 1)
        return family.dist.value_array[idx]
    lam = family.lambdas(m)
    counts = np.empty(shape)
    u = rng.random(shape)
    small = lam <= POISSON_INVERSION_MAX
    for value in np.unique(lam[small]):
        cols = np.nonzero(lam == value)[0]
        counts[..., cols] = np.searchsorted(_poisson_cdf_table(value), u[..., cols], side="right")
    big = np.nonzero(~small)[0]
    if big.size:
        counts[..., big] = rng.poisson(lam[big], size=shape[:-1] + (big.size,))
    root = np.sqrt(lam)
    return counts / root - root


def sample_inputs(family: InputFamily, m: int, seed) -> np.ndarray:
    """``m`` independent draws; ``seed`` is anything ``default_rng`` accepts."""
    if m < 1:
        raise SimulationError("need at least one input")
    return draw_inputs(family, np.random.default_rng(seed), (m,))


# homogeneous sums and their paths ----------------------------------------


def default_grid(points: int = 101) -> np.ndarray:
    return np.linspace(0.0, 1.0, points)


def check_grid(grid) -> np.ndarray:
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 1 or g.size < 2:
        raise BadGrid("grid needs at least the two endpoints")
    if np.any(np.diff(g) <= 0):
        raise BadGrid("grid times must increase strictly")
    if abs(g[0]) > GRID_TOL or abs(g[-1] - 1.0) > GRID_TOL:
        raise BadGrid("grid must start at 0 and end at 1")
    return g


def _sorted_terms(k: SparseKernel, X: np.ndarray) -> np.ndarray:
    """Per-support products ``a_J prod x_i`` for each row of ``X``, in prefix order."""
    S = k.supports[k.prefix_order] - 1
    out = X[:, S[:, 0]]
    for c in range(1, k.order):
        out = out * X[:, S[:, c]]
    return out * k.values[k.prefix_order]


def _prefix_positions(k: SparseKernel, grid: np.ndarray) -> np.ndarray:
    """Number of supports inside ``[floor(m t)]`` for each grid time."""
    return np.searchsorted(k.max_index[k.prefix_order], integer_part(k.size, grid), side="right")


def _check_length(k: SparseKernel, X: np.ndarray) -> None:
    if X.shape[-1] < k.size:
        raise LengthMismatch(f"{X.shape[-1]} inputs for a kernel on [{k.size}]")


def evaluate_sum(k: SparseKernel, x) -> float:
    X = np.asarray(x, dtype=np.float64)[None, :]
    _check_length(k, X)
    if k.n_supports == 0:
        return 0.0
    return float(np.cumsum(_sorted_terms(k, X), axis=1)[0, -1])


def _check_kernels(kernels: Sequence[SparseKernel]) -> int:
    if not kernels:
        raise SimulationError("need at least one kernel")
    sizes = {k.size for k in kernels}
    if len(sizes) != 1:
        raise MixedSizes(f"kernels live on different index ranges {sorted(sizes)}")
    orders = [k.order for k in kernels]
    if any(b <= a for a, b in zip(orders, orders[1:])):
        raise SimulationError(f"component orders must increase strictly, got {orders}")
    return sizes.pop()


def evaluate_paths(kernels: Sequence[SparseKernel], X, grid=None) -> np.ndarray:
    """Paths for a batch of input rows: array of shape ``(N, len(grid), d)``."""
    m = _check_kernels(kernels)
    grid = default_grid() if grid is None else check_grid(grid)
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    out = np.zeros((X.shape[0], grid.size, len(kernels)))
    for c, k in enumerate(kernels):
        _check_length(k, X)
        if k.n_supports == 0:
            continue
        pos = _prefix_positions(k, grid)
        hit = pos > 0
        step = max(1, CHUNK_ELEMENTS // k.n_supports)
        for s in range(0, X.shape[0], step):
            csum = np.cumsum(_sorted_terms(k, X[s:s + step, :m]), axis=1)
            out[s:s + step, hit, c] = csum[:, pos[hit] - 1]
    return out


@dataclass(frozen=True, eq=False)
class ProcessPath:
    """Piecewise-constant, right-continuous path sampled at grid times."""

    grid: np.ndarray
    values: np.ndarray  # (len(grid), d)
    orders: tuple[int, ...] = ()

    def __post_init__(self):
        grid = check_grid(self.grid)
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.shape[0] != grid.size:
            raise BadGrid("one value row per grid time is required")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "orders", tuple(self.orders))

    @property
    def dimension(self) -> int:
        return self.values.shape[1]

    def at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64)
        if np.any((t < 0.0) | (t > 1.0)):
            raise BadGrid("times must lie in [0, 1]")
        idx = np.searchsorted(self.grid, t + GRID_TOL, side="right") - 1
        return self.values[idx]


def evaluate_path(kernels: Sequence[SparseKernel], x, grid=None) -> ProcessPath:
    grid = default_grid() if grid is None else check_grid(grid)
    vals = evaluate_paths(kernels, np.asarray(x, dtype=np.float64)[None, :], grid)[0]
    return ProcessPath(grid, vals, tuple(k.order for k in kernels))


# limit process -------------------------------------------------------------


def _time_change_values(v, grid: np.ndarray) -> np.ndarray:
    vals = np.asarray(v(grid) if callable(v) else v, dtype=np.float64)
    if vals.shape != grid.shape:
        raise NonMonotoneTimeChange("time change must give one value per grid time")
    if abs(vals[0]) > GRID_TOL or abs(vals[-1] - 1.0) > 1e-9:
        raise NonMonotoneTimeChange("time change must run from 0 to 1")
    if np.any(np.diff(vals) < 0.0):
        raise NonMonotoneTimeChange("time change decreases somewhere on the grid")
    return vals


def sample_limit_paths(v: Sequence, grid, n: int, seed) -> np.ndarray:
    """``n`` independent draws of ``(B_k(v_k(t)))_k`` on the grid; shape ``(n, G, d)``."""
    grid = check_grid(grid)
    V = np.stack([_time_change_values(vk, grid) for vk in v], axis=1)
    sd = np.sqrt(np.diff(V, axis=0))
    rng = np.random.default_rng(seed)
    z = special.ndtri(rng.random((n, grid.size - 1, V.shape[1])) + _HALF_ULP)
    out = np.zeros((n, grid.size, V.shape[1]))
    out[:, 1:, :] = np.cumsum(z * sd, axis=1)
    return out


def sample_limit_path(v: Sequence, grid, seed) -> ProcessPath:
    grid = check_grid(grid)
    return ProcessPath(grid, sample_limit_paths(v, grid, 1, seed)[0])


# Monte Carlo ---------------------------------------------------------------


def replicate_seed(master: int, stream: int, r: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(stream, r))


@dataclass(frozen=True)
class MonteCarloConfig:
    kernels: tuple[SparseKernel, ...]
    family: InputFamily
    grid: np.ndarray = field(default_factory=default_grid)
    n_replicates: int = 1000
    seed: int = 0
    stream: int = 0
    threads: int = 1
    chunk: int = 64

    def __post_init__(self):
        object.__setattr__(self, "kernels", tuple(self.kernels))
        object.__setattr__(self, "grid", check_grid(self.grid))
        _check_kernels(self.kernels)
        if self.n_replicates < 1:
            raise SimulationError("need at least one replicate")
        if self.seed < 0 or self.stream < 0:
            raise SimulationError("seeds and stream ids are non-negative integers")
        if self.threads < 1 or self.chunk < 1:
            raise SimulationError("threads and chunk must be positive")

    @property
    def m(self) -> int:
        return self.kernels[0].size


@dataclass
class MomentAccumulator:
    """Count, mean and central power sums up to order 4, mergeable exactly once per pair."""

    n: int
    mean: np.ndarray
    m2: np.ndarray
    m3: np.ndarray
    m4: np.ndarray

    @classmethod
    def from_samples(cls, x: np.ndarray) -> MomentAccumulator:
        mu = x.mean(axis=0)
        d = x - mu
        d2 = d * d
        return cls(x.shape[0], mu, d2.sum(axis=0), (d2 * d).sum(axis=0), (d2 * d2).sum(axis=0))

    def merge(self, other: MomentAccumulator) -> MomentAccumulator:
        na, nb = self.n, other.n
        n = na + nb
        delta = other.mean - self.mean
        mean = self.mean + delta * nb / n
        m2 = self.m2 + other.m2 + delta**2 * na * nb / n
        m3 = (self.m3 + other.m3 + delta**3 * na * nb * (na - nb) / n**2
              + 3.0 * delta * (na * other.m2 - nb * self.m2) / n)
        m4 = (self.m4 + other.m4 + delta**4 * na * nb * (na * na - na * nb + nb * nb) / n**3
              + 6.0 * delta**2 * (na * na * other.m2 + nb * nb * self.m2) / n**2
              + 4.0 * delta * (na * other.m3 - nb * self.m3) / n)
        return MomentAccumulator(n, mean, m2, m3, m4)

    @property
    def variance(self) -> np.ndarray:
        return self.m2 / max(self.n - 1, 1)

    @property
    def fourth_central(self) -> np.ndarray:
        return self.m4 / self.n


def pairwise_merge(accs: list[MomentAccumulator]) -> MomentAccumulator:
    while len(accs) > 1:
        nxt = [accs[i].merge(accs[i + 1]) for i in range(0, len(accs) - 1, 2)]
        if len(accs) % 2:
            nxt.append(accs[-1])
        accs = nxt
    return accs[0]


@dataclass(frozen=True, eq=False)
class ReplicationEnsemble:
    config: MonteCarloConfig
    paths: np.ndarray  # (N, G, d)
    moments: MomentAccumulator

    @property
    def seed(self) -> int:
        return self.config.seed

    @property
    def n(self) -> int:
        return self.paths.shape[0]

    @property
    def grid(self) -> np.ndarray:
        return self.config.grid

    @property
    def terminal(self) -> np.ndarray:
        return self.paths[:, -1, :]

    @property
    def orders(self) -> tuple[int, ...]:
        return tuple(k.order for k in self.config.kernels)

    def path(self, r: int) -> ProcessPath:
        return ProcessPath(self.grid, self.paths[r], self.orders)

    def replicate_seed(self, r: int) -> np.random.SeedSequence:
        return replicate_seed(self.config.seed, self.config.stream, r)

    @cached_property
    def grid_covariance(self) -> np.ndarray:
        """Sample covariance between all (time, component) pairs, shape ``(G*d, G*d)``."""
        flat = self.paths.reshape(self.n, -1)
        centered = flat - flat.mean(axis=0)
        return centered.T @ centered / max(self.n - 1, 1)


def _run_chunk(cfg: MonteCarloConfig, start: int, stop: int) -> tuple[np.ndarray, MomentAccumulator]:
    X = np.stack([draw_inputs(cfg.family, np.random.default_rng(replicate_seed(cfg.seed, cfg.stream, r)), (cfg.m,))
                  for r in range(start, stop)])
    paths = evaluate_paths(cfg.kernels, X, cfg.grid)
    return paths, MomentAccumulator.from_samples(paths)


def monte_carlo(config: MonteCarloConfig) -> ReplicationEnsemble:
    """Run the replicates chunk by chunk; the result does not depend on ``threads``."""
    bounds = [(s, min(s + config.chunk, config.n_replicates))
              for s in range(0, config.n_replicates, config.chunk)]
    if config.threads == 1:
        results = [_run_chunk(config, a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(lambda ab: _run_chunk(config, *ab), bounds))
    paths = np.concatenate([p for p, _ in results])
    return ReplicationEnsemble(config, paths, pairwise_merge([a for _, a in results]))


# exports -------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def terminal_csv(ens: ReplicationEnsemble, config_hash: str) -> str:
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    buf.write("replicate," + ",".join(f"W_p{p}" for p in ens.orders) + "\n")
    for r, row in enumerate(ens.terminal):
        buf.write(f"{r}," + ",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def summary_csv(ens: ReplicationEnsemble, config_hash: str) -> str:
    acc = ens.moments
    buf = io.StringIO()
    buf.write(f"# config_hash={config_hash}\n")
    buf.write("time,component,order,mean,var,m4\n")
    for g, t in enumerate(ens.grid):
        for c, p in enumerate(ens.orders):
            buf.write(f"{_fmt(t)},{c},{p},{_fmt(acc.mean[g, c])},{_fmt(acc.variance[g, c])},"
                      f"{_fmt(acc.fourth_central[g, c])}\n")
    return buf.getvalue()


def power_time_change(exponent: float) -> Callable[[np.ndarray], np.ndarray]:
    def v(t):
        return np.asarray(t, dtype=np.float64) ** exponent
    return v
