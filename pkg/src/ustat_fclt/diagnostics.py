"""Statistical functionals turning ensembles into pass/fail evidence."""

from __future__ import annotations

import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .kernels import SparseKernel
from .simulate import (
    GRID_TOL,
    InputFamily,
    MonteCarloConfig,
    ProcessPath,
    ReplicationEnsemble,
    check_grid,
    default_grid,
    draw_inputs,
    monte_carlo,
)

ALPHA = 0.01
MIN_CUMULANT_SAMPLES = 8
MIN_KS_SAMPLES = 20
DEGENERATE_TOL = 1e-14

LIMITATION_NOTE = (
    "Tightness without convergent time changes has no finite-sample test here; "
    "only Gaussian marginals and independence of components are checked."
)


class DiagnosticError(ValueError):
    pass


class TooFewSamples(DiagnosticError):
    pass


class OffGrid(DiagnosticError):
    pass


class BadDelta(DiagnosticError):
    pass


# moments -------------------------------------------------------------------


@dataclass(frozen=True)
class CumulantEstimate:
    value: float
    se: float
    m2: float
    m4: float
    n: int
    degenerate: bool


def fourth_cumulant(samples) -> CumulantEstimate:
    """``m4 - 3 m2**2`` from biased central moments, with a jackknife standard error."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    n = x.size
    if n < MIN_CUMULANT_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_CUMULANT_SAMPLES} samples, got {n}")
    y = x - x.mean()
    y2 = y * y
    m2 = float(y2.mean())
    m4 = float((y2 * y2).mean())
    scale = float(np.max(np.abs(x))) if n else 0.0
    if m2 <= DEGENERATE_TOL * max(scale * scale, 1.0):
        return CumulantEstimate(0.0, 0.0, m2, m4, n, True)
    kappa = m4 - 3.0 * m2 * m2

    # leave-one-out moments from power sums of the centered sample
    s1, s2, s3, s4 = y.sum(), y2.sum(), (y2 * y).sum(), (y2 * y2).sum()
    k = n - 1
    mu = (s1 - y) / k
    r2 = s2 - y2
    r3 = s3 - y2 * y
    r4 = s4 - y2 * y2
    c2 = r2 / k - mu * mu
    c4 = (r4 - 4.0 * mu * r3 + 6.0 * mu**2 * r2 - 4.0 * mu**3 * (s1 - y)) / k + mu**4
    loo = c4 - 3.0 * c2 * c2
    se = math.sqrt(k / n * float(np.sum((loo - loo.mean()) ** 2)))
    return CumulantEstimate(kappa, se, m2, m4, n, False)


def raw_moment(samples, order: int) -> tuple[float, float]:
    """Sample mean of ``x**order`` and its standard error."""
    x = np.asarray(samples, dtype=np.float64).ravel() ** order
    if x.size < 2:
        raise TooFewSamples("need at least two samples")
    return float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size))


# Kolmogorov-Smirnov --------------------------------------------------------


@dataclass(frozen=True)
class KSResult:
    statistic: float
    pvalue: float
    n: int

    def rejects(self, alpha: float = ALPHA) -> bool:
        return self.pvalue < alpha


def ks_one_sample(samples, cdf: Callable = special.ndtr) -> KSResult:
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = x.size
    if n < MIN_KS_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_KS_SAMPLES} samples, got {n}")
    F = np.asarray(cdf(x), dtype=np.float64)
    i = np.arange(1, n + 1)
    d = max(float(np.max(i / n - F)), float(np.max(F - (i - 1) / n)), 0.0)
    return KSResult(d, float(special.kolmogorov(math.sqrt(n) * d)), n)


def ks_two_sample(a, b) -> KSResult:
    x = np.sort(np.asarray(a, dtype=np.float64).ravel())
    y = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if min(x.size, y.size) < MIN_KS_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_KS_SAMPLES} samples per side")
    pts = np.concatenate([x, y])
    d = float(np.max(np.abs(np.searchsorted(x, pts, side="right") / x.size
                            - np.searchsorted(y, pts, side="right") / y.size)))
    en = math.sqrt(x.size * y.size / (x.size + y.size))
    return KSResult(d, float(special.kolmogorov(en * d)), x.size + y.size)


# path functionals ----------------------------------------------------------


@dataclass(frozen=True)
class CovarianceEstimate:
    value: float
    se: float
    n: int


def _grid_index(grid: np.ndarray, t: float) -> int:
    i = int(np.argmin(np.abs(grid - t)))
    if abs(grid[i] - t) > GRID_TOL:
        raise OffGrid(f"time {t} is not a grid point")
    return i


def empirical_covariance(ens: ReplicationEnsemble, s: float, t: float, k: int = 0, l: int = 0) -> CovarianceEstimate:
    """Sample covariance of component ``k`` at ``s`` with component ``l`` at ``t``."""
    i, j = _grid_index(ens.grid, s), _grid_index(ens.grid, t)
    a = ens.paths[:, i, k]
    b = ens.paths[:, j, l]
    n = a.size
    if n < 2:
        raise TooFewSamples("need at least two replicates")
    z = (a - a.mean()) * (b - b.mean())
    value = float(z.sum() / (n - 1))
    return CovarianceEstimate(value, float(z.std(ddof=1) / math.sqrt(n)), n)


def _modulus(grid: np.ndarray, values: np.ndarray, delta: float) -> np.ndarray:
    """Modulus for a batch ``values`` of shape ``(N, G, d)``; returns shape ``(N,)``.

    The path is constant on ``[t_i, t_{i+1})``, so two pieces are within
    reach of each other when ``t_j - t_{i+1} < delta``.
    """
    if not 0.0 < delta <= 1.0:
        raise BadDelta(f"delta must lie in (0, 1], got {delta}")
    G = grid.size
    out = np.zeros(values.shape[0])
    nxt = np.append(grid[1:], 1.0)
    for i in range(G - 1):
        top = max(int(np.searchsorted(grid, nxt[i] + delta, side="left")), i + 2)
        block = values[:, i + 1:top, :] - values[:, i:i + 1, :]
        out = np.maximum(out, np.abs(block).max(axis=(1, 2)))
    return out


def modulus_of_continuity(path: ProcessPath, delta: float) -> float:
    return float(_modulus(path.grid, path.values[None], delta)[0])


def ensemble_modulus(ens: ReplicationEnsemble, delta: float) -> np.ndarray:
    return _modulus(ens.grid, ens.paths, delta)


# reports -------------------------------------------------------------------


@dataclass(frozen=True)
class DiagnosticEntry:
    name: str
    statistic: float
    threshold: float
    passed: bool
    n: int
    se: float | None = None
    pvalue: float | None = None
    note: str = ""


@dataclass
class DiagnosticReport:
    config_hash: str
    seed: int
    n: int
    entries: list[DiagnosticEntry] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    def add(self, entry: DiagnosticEntry) -> None:
        self.entries.append(entry)

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    def to_dict(self) -> dict:
        return {
            "config_hash": self.config_hash,
            "seed": self.seed,
            "n": self.n,
            "passed": self.passed,
            "entries": [asdict(e) for e in self.entries],
            "notes": list(self.notes),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> DiagnosticReport:
        raw = json.loads(text)
        rep = cls(raw["config_hash"], raw["seed"], raw["n"], notes=list(raw.get("notes", [])))
        for e in raw["entries"]:
            rep.add(DiagnosticEntry(**e))
        return rep

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# config_hash={self.config_hash}\n")
        buf.write("name,statistic,threshold,passed,n,se,pvalue\n")
        for e in self.entries:
            se = "" if e.se is None else repr(e.se)
            pv = "" if e.pvalue is None else repr(e.pvalue)
            buf.write(f"{e.name},{e.statistic!r},{e.threshold!r},{int(e.passed)},{e.n},{se},{pv}\n")
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"config_hash {self.config_hash}", f"seed {self.seed}  N {self.n}"]
        for e in self.entries:
            mark = "PASS" if e.passed else "FAIL"
            extra = "" if e.pvalue is None else f"  p={e.pvalue:.4g}"
            lines.append(f"{mark}  {e.name}: {e.statistic:.6g} vs {e.threshold:.6g}{extra}")
        lines.extend(f"note: {n}" for n in self.notes)
        lines.append("overall " + ("PASS" if self.passed else "FAIL"))
        return "\n".join(lines) + "\n"


def interior_times(grid: np.ndarray, count: int = 3) -> list[float]:
    """``count`` grid points closest to equally spaced interior quantiles."""
    targets = np.arange(1, count + 1) / (count + 1)
    return [float(grid[int(np.argmin(np.abs(grid - q)))]) for q in targets]


def fclt_report(ens: ReplicationEnsemble, targets: Sequence[Callable], config_hash: str = "",
                limits: Sequence[Callable | None] | None = None, times: Sequence[float] | None = None,
                kappa_tol: float = 0.15, n_se: float = 4.0, alpha: float = ALPHA) -> DiagnosticReport:
    """Marginal normality at ``t = 1``, covariance structure and cross-component orthogonality.

    ``targets[k](t)`` is the exact variance of component ``k`` at time ``t``
    for the simulated size; ``limits[k]`` (optional) is the limiting time
    change, whose distance to the target is only reported.
    """
    rep = DiagnosticReport(config_hash, ens.seed, ens.n)
    d = len(ens.orders)
    times = interior_times(ens.grid) + [1.0] if times is None else list(times)
    for c, p in enumerate(ens.orders):
        w = ens.terminal[:, c]
        cum = fourth_cumulant(w)
        rep.add(DiagnosticEntry(f"kappa4[p={p}]", cum.value, kappa_tol, abs(cum.value) <= kappa_tol, cum.n, se=cum.se))
        sd = math.sqrt(float(targets[c](np.array(1.0))))
        ks = ks_one_sample(w / sd)
        rep.add(DiagnosticEntry(f"ks_normal[p={p}]", ks.statistic, alpha / d, not ks.rejects(alpha / d), ks.n,
                                pvalue=ks.pvalue))
        for a, s in enumerate(times):
            for t in times[a:]:
                est = empirical_covariance(ens, s, t, c, c)
                target = float(targets[c](np.array(min(s, t))))
                dev = abs(est.value - target)
                rep.add(DiagnosticEntry(f"cov[p={p}]({s:g},{t:g})", est.value, target, dev <= n_se * est.se,
                                        est.n, se=est.se, note=f"within {n_se:g} standard errors"))
        if limits is not None and limits[c] is not None:
            t = np.array(times)
            gap = float(np.max(np.abs(targets[c](t) - limits[c](t))))
            rep.notes.append(f"p={p}: largest gap between exact and limiting variance at tested times: {gap:.6g}")
    for c in range(d):
        for e in range(c + 1, d):
            for t in times:
                est = empirical_covariance(ens, t, t, c, e)
                rep.add(DiagnosticEntry(f"cross[p={ens.orders[c]},p={ens.orders[e]}]({t:g})", est.value, 0.0,
                                        abs(est.value) <= n_se * est.se, est.n, se=est.se))
    omega = ensemble_modulus(ens, 0.1)
    rep.notes.append(f"mean modulus of continuity at delta=0.1: {float(omega.mean()):.6g}")
    rep.notes.append(LIMITATION_NOTE)
    return rep


def universality_report(kernels: Sequence[SparseKernel], families: Sequence[InputFamily], n: int, seed: int,
                        grid=None, threads: int = 1, config_hash: str = "",
                        alpha: float = ALPHA, pairs: Sequence[tuple[int, int]] | None = None) -> DiagnosticReport:
    """Two-sample KS on terminal values and three interior marginals for each family pair.

    Family ``i`` runs on stream ``i`` of the master seed.  ``pairs`` defaults
    to all pairs; the level is Bonferroni-corrected over every test in the report.
    """
    if len(families) < 2:
        raise DiagnosticError("need at least two input families")
    if pairs is None:
        pairs = [(a, b) for a in range(len(families)) for b in range(a + 1, len(families))]
    if not pairs or any(not (0 <= a < len(families) and 0 <= b < len(families) and a != b) for a, b in pairs):
        raise DiagnosticError(f"invalid family pairs {pairs}")
    grid = default_grid() if grid is None else check_grid(grid)
    ens = [monte_carlo(MonteCarloConfig(tuple(kernels), fam, grid, n, seed, stream=i, threads=threads))
           for i, fam in enumerate(families)]
    times = interior_times(grid) + [1.0]
    cols = [_grid_index(grid, t) for t in times]
    d = len(kernels)
    n_tests = len(pairs) * len(times) * d
    level = alpha / n_tests
    rep = DiagnosticReport(config_hash, seed, n)
    for a, b in pairs:
        tag = f"{families[a].kind}{a}~{families[b].kind}{b}"
        for c in range(d):
            for t, g in zip(times, cols):
                ks = ks_two_sample(ens[a].paths[:, g, c], ens[b].paths[:, g, c])
                rep.add(DiagnosticEntry(f"ks2[{tag},p={kernels[c].order},t={t:g}]", ks.statistic, level,
                                        not ks.rejects(level), ks.n, pvalue=ks.pvalue))
    rep.notes.append(f"Bonferroni: {n_tests} tests at overall level {alpha:g}")
    rep.notes.append(LIMITATION_NOTE)
    return rep


def family_moment_report(families: Sequence[InputFamily], n: int, seed: int, config_hash: str = "",
                         n_se: float = 4.0) -> DiagnosticReport:
    """Empirical fourth moments of each input family against the population value."""
    rep = DiagnosticReport(config_hash, seed, n)
    for i, fam in enumerate(families):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(1000 + i,)))
        x = draw_inputs(fam, rng, (n, 1))[:, 0]
        est, se = raw_moment(x, 4)
        target = float(fam.fourth_moments(1)[0])
        rep.add(DiagnosticEntry(f"fourth_moment[{fam.kind}{i}]", est, target, abs(est - target) <= n_se * se,
                                n, se=se))
    return rep
