import json
import subprocess
import sys

import pytest

from ustat_fclt.cli import main
from ustat_fclt.config import ConfigError, ExperimentConfig
from ustat_fclt.kernels import fractional_kernel, kernel_to_json


def _cfg(**kw):
    raw = {"schema": 1, "suite": "fclt", "kernels": [{"kind": "fractional", "p": 3, "a": 2, "m": 100}],
           "families": [{"kind": "rademacher"}], "grid": 11, "n_replicates": 200, "seed": 4}
    raw.update(kw)
    return raw


def _run(argv):
    try:
        return main(argv)
    except SystemExit as exc:
        return exc.code


# config ----------------------------------------------------------------------


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"schema": 2},
    {"suite": "nope"},
    {"n_replicates": 0},
    {"seed": -3},
    {"seed": 1.5},
    {"grid": 1},
    {"grid": [0.0, 0.7, 0.5, 1.0]},
    {"families": [{"kind": "normalized_poisson", "lam": 0.0}]},
    {"families": [{"kind": "gaussian", "extra": 1}]},
    {"kernels": [{"kind": "fractional", "p": 3, "a": 2, "m": 100, "x": 0}]},
    {"families": [{"kind": "gaussian"}, {"kind": "rademacher"}]},
])
def test_config_rejects(bad):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(_cfg(**bad))


def test_config_round_trip_and_hash():
    cfg = ExperimentConfig.from_dict(_cfg())
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert again == cfg
    assert again.config_hash() == cfg.config_hash()
    moved = ExperimentConfig.from_dict(_cfg(threads=4, out="elsewhere"))
    assert moved.config_hash() == cfg.config_hash()
    assert ExperimentConfig.from_dict(_cfg(seed=5)).config_hash() != cfg.config_hash()


def test_file_kernel_hash_follows_content(tmp_path):
    path = tmp_path / "k.json"
    raw = _cfg(kernels=[{"kind": "file", "path": "k.json"}])
    path.write_text(kernel_to_json(fractional_kernel(3, 2, 100)))
    h1 = ExperimentConfig.from_dict(raw).config_hash(tmp_path)
    path.write_text(kernel_to_json(fractional_kernel(3, 2, 200)))
    assert ExperimentConfig.from_dict(raw).config_hash(tmp_path) != h1


def test_shipped_configs_load():
    from pathlib import Path

    for path in sorted(Path(__file__).parent.parent.joinpath("configs").glob("*.json")):
        ExperimentConfig.load(path)


# build-kernel -------------------------------------------------------------------


def test_build_kernel_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert main(["build-kernel", "--fractional", "3", "2", "100", "--out", str(a)]) == 0
    assert main(["build-kernel", "--fractional", "3", "2", "100", "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    doc = json.loads(a.read_text())
    assert next(iter(doc)) == "config_hash"
    assert doc["diagnostics"]["n_supports"] == 120


def test_build_kernel_random_depends_on_seed(tmp_path):
    outs = []
    for seed in ("1", "1", "2"):
        path = tmp_path / f"r{len(outs)}.txt"
        assert main(["build-kernel", "--random", "2", "20", "--seed", seed, "--format", "text",
                     "--out", str(path)]) == 0
        outs.append(path.read_text())
    assert outs[0] == outs[1] != outs[2]
    assert outs[0].startswith("# config_hash=")


def test_build_kernel_from_file(tmp_path):
    src = tmp_path / "k.json"
    src.write_text(kernel_to_json(fractional_kernel(3, 2, 100)))
    assert main(["build-kernel", "--from", str(src), "--out", str(tmp_path / "o.json")]) == 0


@pytest.mark.parametrize("argv", [
    ["build-kernel", "--fractional", "3", "2", "9"],
    ["build-kernel", "--fractional", "3", "3", "100"],
    ["build-kernel"],
    ["build-kernel", "--from", "/nonexistent/k.json"],
    ["verify", "--suite", "bogus"],
    ["verify", "--suite", "identities", "--threads", "0"],
    ["verify"],
    ["simulate"],
    ["simulate", "--config", "/nonexistent.json"],
    ["report", "/nonexistent-dir"],
])
def test_usage_errors_exit_two(argv, tmp_path):
    assert _run(argv + ["--out", str(tmp_path / "o")] if argv[0] == "build-kernel" else argv) == 2


def test_bad_config_exits_two(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps(_cfg(n_replicates=0)))
    assert _run(["simulate", "--config", str(path)]) == 2
    path.write_text("{not json")
    assert _run(["simulate", "--config", str(path)]) == 2


# verify and simulate --------------------------------------------------------------


def test_verify_inequalities_pass_and_are_thread_independent(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    base = ["verify", "--suite", "inequalities", "--instances", "20", "--seed", "3", "--max-size", "4"]
    assert main(base + ["--out", str(a)]) == 0
    assert main(base + ["--out", str(b), "--threads", "3"]) == 0
    assert (a / "records.jsonl").read_bytes() == (b / "records.jsonl").read_bytes()
    assert (a / "summary.json").read_bytes() == (b / "summary.json").read_bytes()
    first = json.loads((a / "records.jsonl").read_text().splitlines()[0])
    assert list(first) == ["config_hash"]


def test_verify_identities_reports_unequal_order_violations(tmp_path):
    code = main(["verify", "--suite", "identities", "--instances", "40", "--seed", "7", "--out", str(tmp_path)])
    summary = json.loads((tmp_path / "summary.json").read_text())
    checks = summary["checks"]
    assert checks["covariance_identity_with_remainder"]["violations"] == 0
    assert checks["s0_equals_s1"]["violations"] == 0
    assert code == (1 if summary["violations"] else 0)
    records = [json.loads(line) for line in (tmp_path / "records.jsonl").read_text().splitlines()[1:]]
    for r in records:
        if r["check"] == "covariance_identity" and not r["passed"]:
            assert r["params"]["p"] != r["params"]["q"]


def test_simulate_is_deterministic_across_threads(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(_cfg()))
    a, b = tmp_path / "a", tmp_path / "b"
    main(["simulate", "--config", str(cfg), "--out", str(a)])
    main(["simulate", "--config", str(cfg), "--out", str(b), "--threads", "3"])
    for name in ("terminal.csv", "summary.csv", "report.json", "report.csv", "manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    h = json.loads((a / "manifest.json").read_text())["config_hash"]
    assert (a / "terminal.csv").read_text().startswith(f"# config_hash={h}\n")
    assert next(iter(json.loads((a / "report.json").read_text()))) == "config_hash"


def test_report_command(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps(_cfg()))
    code = main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "run")])
    capsys.readouterr()
    assert main(["report", str(tmp_path / "run"), "--format", "json"]) == code
    doc = json.loads(capsys.readouterr().out)
    assert doc["passed"] == (code == 0)
    assert main(["report", str(tmp_path / "run"), "--format", "csv"]) == code
    assert capsys.readouterr().out.startswith("# config_hash=")


def test_module_entry_point(tmp_path):
    out = tmp_path / "k.json"
    proc = subprocess.run([sys.executable, "-m", "ustat_fclt", "build-kernel", "--fractional", "3", "2", "26",
                           "--out", str(out)], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(out.read_text())["diagnostics"]["n_supports"] == 10
