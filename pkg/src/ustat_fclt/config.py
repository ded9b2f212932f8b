"""Experiment configuration: strict JSON parsing and a stable content hash."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .hoeffding import DiscreteDistribution
from .kernels import SparseKernel, fractional_kernel, load_kernel, random_kernel
from .simulate import InputFamily, check_grid, default_grid

SCHEMA_VERSION = 1
SUITES = ("identities", "inequalities", "fclt", "universality", "diagnostics")
# fields that change how a run is executed but never what it writes
_UNHASHED = ("threads", "out")


class ConfigError(ValueError):
    pass


def _strict(raw: dict, allowed: set[str], required: set[str], where: str) -> None:
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object")
    extra = set(raw) - allowed
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {sorted(extra)}")
    missing = required - set(raw)
    if missing:
        raise ConfigError(f"{where}: missing field(s) {sorted(missing)}")


def _int(raw, name: str, where: str, low: int | None = None) -> int:
    v = raw[name]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{where}.{name}: expected an integer, got {v!r}")
    if low is not None and v < low:
        raise ConfigError(f"{where}.{name}: must be at least {low}, got {v}")
    return v


@dataclass(frozen=True)
class KernelSpec:
    kind: str
    p: int | None = None
    m: int | None = None
    a: int | None = None
    density: float = 1.0
    seed: int = 0
    path: str | None = None

    @classmethod
    def from_dict(cls, raw: dict, where: str = "kernels") -> KernelSpec:
        kind = raw.get("kind") if isinstance(raw, dict) else None
        if kind == "fractional":
            _strict(raw, {"kind", "p", "a", "m"}, {"kind", "p", "a", "m"}, where)
            return cls(kind, p=_int(raw, "p", where, 1), m=_int(raw, "m", where, 1), a=_int(raw, "a", where, 1))
        if kind == "random":
            _strict(raw, {"kind", "p", "m", "density", "seed"}, {"kind", "p", "m"}, where)
            density = float(raw.get("density", 1.0))
            if not 0.0 < density <= 1.0:
                raise ConfigError(f"{where}.density: must lie in (0, 1]")
            seed = _int(raw, "seed", where, 0) if "seed" in raw else 0
            return cls(kind, p=_int(raw, "p", where, 1), m=_int(raw, "m", where, 1), density=density, seed=seed)
        if kind == "file":
            _strict(raw, {"kind", "path"}, {"kind", "path"}, where)
            return cls(kind, path=str(raw["path"]))
        raise ConfigError(f"{where}.kind: expected fractional, random or file, got {kind!r}")

    def to_dict(self) -> dict:
        if self.kind == "fractional":
            return {"kind": self.kind, "p": self.p, "a": self.a, "m": self.m}
        if self.kind == "random":
            return {"kind": self.kind, "p": self.p, "m": self.m, "density": self.density, "seed": self.seed}
        return {"kind": self.kind, "path": self.path}

    def build(self, base_dir: Path | None = None) -> SparseKernel:
        if self.kind == "fractional":
            return fractional_kernel(self.p, self.a, self.m)
        if self.kind == "random":
            return random_kernel(self.p, self.m, np.random.default_rng(self.seed), self.density)
        path = Path(self.path)
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return load_kernel(path)

    def limit_exponent(self) -> float | None:
        """Exponent of the known limiting time change, when there is one."""
        return self.p / self.a if self.kind == "fractional" else None


def family_from_dict(raw: dict, where: str = "families") -> InputFamily:
    kind = raw.get("kind") if isinstance(raw, dict) else None
    try:
        if kind in ("gaussian", "rademacher"):
            _strict(raw, {"kind"}, {"kind"}, where)
            return InputFamily(kind)
        if kind == "normalized_poisson":
            _strict(raw, {"kind", "lam"}, {"kind", "lam"}, where)
            lam = raw["lam"]
            return InputFamily.normalized_poisson(tuple(lam) if isinstance(lam, list) else lam)
        if kind == "finite":
            _strict(raw, {"kind", "values", "probs"}, {"kind", "values", "probs"}, where)
            return InputFamily.finite(DiscreteDistribution(tuple(raw["values"]), tuple(raw["probs"])))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: {exc}") from exc
    raise ConfigError(f"{where}.kind: unknown input family {kind!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    suite: str
    kernels: tuple[KernelSpec, ...] = ()
    families: tuple[InputFamily, ...] = ()
    grid: tuple[float, ...] = field(default_factory=lambda: tuple(default_grid()))
    n_replicates: int = 1000
    seed: int = 0
    instances: int = 200
    max_order: int = 2
    max_size: int = 6
    threads: int = 1
    out: str = "out"
    schema: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, raw: dict) -> ExperimentConfig:
        allowed = {"schema", "suite", "kernels", "families", "grid", "n_replicates", "seed", "instances",
                   "max_order", "max_size", "threads", "out"}
        _strict(raw, allowed, {"schema", "suite"}, "config")
        if raw["schema"] != SCHEMA_VERSION:
            raise ConfigError(f"config.schema: unsupported version {raw['schema']!r}")
        suite = raw["suite"]
        if suite not in SUITES:
            raise ConfigError(f"config.suite: expected one of {SUITES}, got {suite!r}")
        kw = {"suite": suite}
        if "kernels" in raw:
            if not isinstance(raw["kernels"], list):
                raise ConfigError("config.kernels: expected a list")
            kw["kernels"] = tuple(KernelSpec.from_dict(k, f"kernels[{i}]") for i, k in enumerate(raw["kernels"]))
        if "families" in raw:
            if not isinstance(raw["families"], list):
                raise ConfigError("config.families: expected a list")
            kw["families"] = tuple(family_from_dict(f, f"families[{i}]") for i, f in enumerate(raw["families"]))
        if "grid" in raw:
            g = raw["grid"]
            try:
                if isinstance(g, int) and not isinstance(g, bool):
                    if g < 2:
                        raise ConfigError("config.grid: need at least 2 points")
                    kw["grid"] = tuple(default_grid(g))
                else:
                    kw["grid"] = tuple(float(t) for t in check_grid(g))
            except (TypeError, ValueError) as exc:
                if isinstance(exc, ConfigError):
                    raise
                raise ConfigError(f"config.grid: {exc}") from exc
        for name, low in (("n_replicates", 1), ("seed", 0), ("instances", 1), ("max_order", 1),
                          ("max_size", 1), ("threads", 1)):
            if name in raw:
                kw[name] = _int(raw, name, "config", low)
        if "out" in raw:
            kw["out"] = str(raw["out"])
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(raw)

    def validate(self) -> None:
        if self.suite in ("fclt", "universality", "diagnostics"):
            if not self.families:
                raise ConfigError(f"suite {self.suite} needs at least one input family")
        if self.suite in ("fclt", "universality") and not self.kernels:
            raise ConfigError(f"suite {self.suite} needs at least one kernel")
        if self.suite == "universality" and len(self.families) < 2:
            raise ConfigError("universality needs at least two input families")
        if self.suite == "fclt" and len(self.families) != 1:
            raise ConfigError("fclt runs exactly one input family")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kernels"] = [k.to_dict() for k in self.kernels]
        d["families"] = [f.to_dict() for f in self.families]
        d["grid"] = list(self.grid)
        return d

    def config_hash(self, base_dir: Path | None = None) -> str:
        d = self.to_dict()
        for name in _UNHASHED:
            d.pop(name)
        for spec in d["kernels"]:
            # a file kernel is identified by its bytes, not its name
            if spec["kind"] == "file":
                path = Path(spec["path"])
                if base_dir is not None and not path.is_absolute():
                    path = base_dir / path
                if path.exists():
                    spec["sha256"] = hashlib.sha256(path.read_bytes()).hexdigest()
        canon = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()
