"""Command-line front end.

Exit codes: 0 pass, 1 identity or statistical failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from collections import defaultdict
from pathlib import Path

import numpy as np

from .config import ConfigError, ExperimentConfig, KernelSpec
from .diagnostics import DiagnosticError, DiagnosticEntry, DiagnosticReport, family_moment_report, fclt_report, \
    universality_report
from .hoeffding import HoeffdingError
from .kernels import (
    KernelError,
    SparseKernel,
    contraction_norm,
    influences,
    kernel_to_json,
    kernel_to_text,
    load_kernel,
    rho_squared,
    sf_profile,
)
from .quadruples import QuadrupleError
from .simulate import (
    MonteCarloConfig,
    SimulationError,
    monte_carlo,
    power_time_change,
    summary_csv,
    terminal_csv,
)
from .verification import run_suite

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
_USER_ERRORS = (ConfigError, KernelError, SimulationError, HoeffdingError, QuadrupleError, DiagnosticError,
                OSError, json.JSONDecodeError)


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(text)


# build-kernel --------------------------------------------------------------


def kernel_diagnostics(k: SparseKernel) -> dict:
    grid = np.linspace(0.0, 1.0, 11)
    return {
        "n_supports": k.n_supports,
        "sum_of_squares": k.sum_of_squares(),
        "rho_squared": rho_squared(k),
        "max_influence": float(influences(k).max()),
        "contraction_norms": {str(r): contraction_norm(k, r) for r in range(1, k.order)},
        "sf_grid": [[float(t), float(v)] for t, v in zip(grid, sf_profile(k, grid))],
    }


def cmd_build_kernel(args) -> int:
    if args.fractional:
        p, a, m = args.fractional
        spec = KernelSpec("fractional", p=p, m=m, a=a)
    elif args.random:
        p, m = args.random
        spec = KernelSpec("random", p=p, m=m, density=args.density, seed=args.seed or 0)
    else:
        spec = KernelSpec("file", path=args.source)
    k = spec.build()
    ident = spec.to_dict()
    if spec.kind == "file":
        ident["sha256"] = hashlib.sha256(Path(spec.path).read_bytes()).hexdigest()
    ident["format"] = args.format
    h = hashlib.sha256(json.dumps(ident, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
    diag = kernel_diagnostics(k)
    if args.format == "json":
        text = kernel_to_json(k, config_hash=h, diagnostics=diag)
    else:
        header = [f"config_hash={h}"] + [f"{key}={json.dumps(val)}" for key, val in diag.items()]
        text = kernel_to_text(k, "\n".join(header))
    if args.out:
        _write(Path(args.out), text)
        print(f"wrote {args.out}: {k.n_supports} supports, sum of squares {diag['sum_of_squares']:.12g}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# verify --------------------------------------------------------------------


def _verify_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
        if cfg.suite not in ("identities", "inequalities"):
            raise ConfigError(f"verify runs identities or inequalities, config asks for {cfg.suite}")
        raw = cfg.to_dict()
        raw.pop("grid")
    else:
        if not args.suite:
            raise ConfigError("verify needs --suite or --config")
        raw = {"schema": 1, "suite": args.suite}
    overrides = {"suite": args.suite, "instances": args.instances, "seed": args.seed, "threads": args.threads,
                  "out": args.out, "max_order": args.max_order, "max_size": args.max_size}
    raw.update({key: val for key, val in overrides.items() if val is not None})
    return ExperimentConfig.from_dict(raw)


def run_verify(cfg: ExperimentConfig, out: Path | None) -> int:
    h = cfg.config_hash()
    t0 = time.perf_counter()
    recs = run_suite(cfg.suite, cfg.instances, cfg.seed, cfg.threads, max_order=cfg.max_order,
                     max_size=cfg.max_size)
    counts: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    worst: dict[str, float] = {}
    for r in recs:
        counts[r.check][0] += 1
        counts[r.check][1] += not r.passed
        worst[r.check] = min(worst.get(r.check, np.inf), r.margin)
    violations = sum(c[1] for c in counts.values())
    summary = {
        "config_hash": h,
        "suite": cfg.suite,
        "seed": cfg.seed,
        "instances": cfg.instances,
        "violations": violations,
        "checks": {name: {"records": c[0], "violations": c[1], "worst_margin": worst[name]}
                   for name, c in counts.items()},
    }
    if out is not None:
        lines = [json.dumps({"config_hash": h})] + [r.to_json() for r in recs]
        _write(out / "records.jsonl", "\n".join(lines) + "\n")
        _write(out / "summary.json", json.dumps(summary, indent=2) + "\n")
    for name, c in counts.items():
        mark = "ok  " if c[1] == 0 else "FAIL"
        print(f"{mark} {name}: {c[1]}/{c[0]} violations, worst margin {worst[name]:.3g}")
    print(f"{cfg.suite}: {violations} violation(s) over {cfg.instances} instances, config {h[:12]}")
    print(f"wall time {time.perf_counter() - t0:.2f} s", file=sys.stderr)
    return EXIT_OK if violations == 0 else EXIT_FAIL


def cmd_verify(args) -> int:
    cfg = _verify_config(args)
    return run_verify(cfg, Path(cfg.out) if (args.out or args.config) else None)


# simulate ------------------------------------------------------------------


def _limits(cfg: ExperimentConfig):
    return [None if spec.limit_exponent() is None else power_time_change(spec.limit_exponent())
            for spec in cfg.kernels]


def _diagnostics_report(cfg: ExperimentConfig, kernels: list[SparseKernel], h: str) -> DiagnosticReport:
    rep = family_moment_report(cfg.families, cfg.n_replicates, cfg.seed, h)
    for spec, k in zip(cfg.kernels, kernels):
        diag = kernel_diagnostics(k)
        tag = f"p={k.order},m={k.size}"
        rep.add(DiagnosticEntry(f"sum_of_squares[{tag}]", diag["sum_of_squares"], 1.0,
                                abs(diag["sum_of_squares"] - 1.0) <= 1e-9, k.n_supports))
        for fam in cfg.families:
            D = float(np.max(fam.fourth_moments(k.size))) ** k.order
            rep.notes.append(f"{tag} {fam.kind}: D*rho^2 <= {D * diag['rho_squared']:.6g}")
        for r, norm in diag["contraction_norms"].items():
            rep.notes.append(f"{tag}: contraction norm r={r}: {norm:.6g}")
        expo = spec.limit_exponent()
        if expo is not None:
            dev = max(abs(v - t**expo) for t, v in diag["sf_grid"])
            rep.notes.append(f"{tag}: max |Sf(t) - t^{expo:g}| on 11 points: {dev:.6g}")
    return rep


def cmd_simulate(args) -> int:
    if not args.config:
        raise ConfigError("simulate needs --config")
    cfg = ExperimentConfig.load(args.config)
    raw = cfg.to_dict()
    raw.update({key: val for key, val in (("seed", args.seed), ("threads", args.threads), ("out", args.out))
                if val is not None})
    cfg = ExperimentConfig.from_dict(raw)
    out = Path(cfg.out)
    if cfg.suite in ("identities", "inequalities"):
        return run_verify(cfg, out)
    base = Path(args.config).resolve().parent
    h = cfg.config_hash(base)
    kernels = [spec.build(base) for spec in cfg.kernels]
    grid = np.array(cfg.grid)
    t0 = time.perf_counter()
    files: dict[str, str] = {}
    if cfg.suite == "fclt":
        mc = MonteCarloConfig(tuple(kernels), cfg.families[0], grid, cfg.n_replicates, cfg.seed, threads=cfg.threads)
        ens = monte_carlo(mc)
        targets = [lambda t, k=k: sf_profile(k, t) for k in kernels]
        rep = fclt_report(ens, targets, h, limits=_limits(cfg))
        files["terminal.csv"] = terminal_csv(ens, h)
        files["summary.csv"] = summary_csv(ens, h)
    elif cfg.suite == "universality":
        rep = universality_report(kernels, cfg.families, cfg.n_replicates, cfg.seed, grid, cfg.threads, h)
    else:
        rep = _diagnostics_report(cfg, kernels, h)
    files["report.json"] = rep.to_json()
    files["report.csv"] = rep.to_csv()
    manifest = {
        "config_hash": h,
        "seed": cfg.seed,
        "suite": cfg.suite,
        "passed": rep.passed,
        "config": {key: val for key, val in cfg.to_dict().items() if key not in ("threads", "out")},
        "files": {name: hashlib.sha256(text.encode()).hexdigest() for name, text in sorted(files.items())},
    }
    files["manifest.json"] = json.dumps(manifest, indent=2) + "\n"
    for name, text in files.items():
        _write(out / name, text)
    sys.stdout.write(rep.to_text())
    print(f"wall time {time.perf_counter() - t0:.2f} s", file=sys.stderr)
    return EXIT_OK if rep.passed else EXIT_FAIL


# report --------------------------------------------------------------------


def cmd_report(args) -> int:
    run_dir = Path(args.run_dir or args.out or "out")
    path = run_dir / "report.json"
    if not path.exists():
        summary = run_dir / "summary.json"
        if summary.exists():
            doc = json.loads(summary.read_text())
            print(json.dumps(doc, indent=2))
            return EXIT_OK if doc["violations"] == 0 else EXIT_FAIL
        raise ConfigError(f"no report.json or summary.json in {run_dir}")
    rep = DiagnosticReport.from_json(path.read_text())
    if args.format == "json":
        sys.stdout.write(rep.to_json())
    elif args.format == "csv":
        sys.stdout.write(rep.to_csv())
    else:
        sys.stdout.write(rep.to_text())
    return EXIT_OK if rep.passed else EXIT_FAIL


# entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--threads", type=int, default=None)
    common.add_argument("--out", default=None, help="output file (build-kernel) or directory")
    common.add_argument("--config", default=None, help="JSON experiment config")

    parser = argparse.ArgumentParser(prog="ustat-fclt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("build-kernel", parents=[common], help="build and serialize a kernel")
    src = b.add_mutually_exclusive_group(required=True)
    src.add_argument("--fractional", nargs=3, type=int, metavar=("P", "A", "M"))
    src.add_argument("--random", nargs=2, type=int, metavar=("P", "M"))
    src.add_argument("--from", dest="source", metavar="FILE")
    b.add_argument("--density", type=float, default=1.0)
    b.add_argument("--format", choices=("json", "text"), default="json")
    b.set_defaults(func=cmd_build_kernel)

    v = sub.add_parser("verify", parents=[common], help="randomized exact identity/inequality suites")
    v.add_argument("--suite", choices=("identities", "inequalities"))
    v.add_argument("--instances", type=int, default=None)
    v.add_argument("--max-order", type=int, default=None)
    v.add_argument("--max-size", type=int, default=None)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("simulate", parents=[common], help="run a configured Monte Carlo experiment")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", parents=[common], help="print a finished run's report")
    r.add_argument("run_dir", nargs="?")
    r.add_argument("--format", choices=("text", "json", "csv"), default="text")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        parser.error("--threads must be positive")
    try:
        return args.func(args)
    except _USER_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
