import csv
import json
import subprocess
import sys
from pathlib import Path

import pytest

from fracfp.cli import main

GOLDEN = Path(__file__).parent / "golden"
CFG = str(GOLDEN / "golden.ini")


def run(*argv):
    return main(list(argv))


def shell(*argv, env=None):
    return subprocess.run([sys.executable, "-m", "fracfp", *argv], capture_output=True, text=True, env=env)


def write(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.fixture(scope="module")
def golden_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("golden")
    for verb in ("eigensweep", "limit-kappa", "drift", "report"):
        assert run(verb, "--config", CFG, "--out", str(out)) == 0
    return out


def test_check_exit_codes(tmp_path):
    assert run("check", "--out", str(tmp_path)) == 0
    rep = json.loads((tmp_path / "assumptions.json").read_text())
    assert rep["pass"] is True
    bad = write(tmp_path, "[equilibrium]\ngamma = 0.4\n")
    assert run("check", "--config", bad, "--out", str(tmp_path / "b")) == 2


def test_malformed_config_shell(tmp_path):
    bad = write(tmp_path, "[equilibrium]\ngamma = 2\nfoo = 1\n")
    r = shell("check", "--config", bad, "--out", str(tmp_path))
    assert r.returncode == 1
    assert "run.ini:3:" in r.stderr


def test_missing_config(tmp_path):
    assert run("check", "--config", str(tmp_path / "none.ini"), "--out", str(tmp_path)) == 1


def test_fit_degenerate(tmp_path):
    cfg = write(tmp_path, "[grid]\nn = 256\n[sweep]\netas = 1e-3\n")
    assert run("eigensweep", "--config", cfg, "--out", str(tmp_path)) == 3
    fit = json.loads((tmp_path / "fit.json").read_text())
    assert fit["error"] == "FitDegenerate"
    assert (tmp_path / "sweep.csv").exists()


def test_eigensweep_alpha(golden_run):
    fit = json.loads((golden_run / "fit.json").read_text())
    assert abs(fit["alpha_hat"] - 5 / 3) <= 0.05 * 5 / 3


def test_rerun_byte_identical(golden_run, tmp_path, monkeypatch):
    monkeypatch.setenv("FP_THREADS", "3")
    for verb in ("eigensweep", "limit-kappa", "drift", "report"):
        assert run(verb, "--config", CFG, "--out", str(tmp_path), "--threads", "1") == 0
    for name in ("sweep.csv", "fit.json", "kappa.json", "H0.csv", "drift.json", "report.json", "report.txt"):
        assert (tmp_path / name).read_bytes() == (golden_run / name).read_bytes(), name


def _numbers(obj, prefix=""):
    if isinstance(obj, dict):
        for k, v in obj.items():
            yield from _numbers(v, f"{prefix}.{k}")
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            yield from _numbers(v, f"{prefix}[{i}]")
    else:
        yield prefix, obj


def _close(a, b, path):
    if isinstance(a, float) and isinstance(b, float):
        # solver residuals sit at round-off level and are only checked for size
        if path in (".residual", ".kappa.residual"):
            return abs(a) < 1e-9 and abs(b) < 1e-9
        return a == pytest.approx(b, rel=1e-9, abs=1e-15)
    return a == b


@pytest.mark.parametrize("name", ["fit.json", "kappa.json", "drift.json", "report.json"])
def test_golden_json(golden_run, name):
    new = dict(_numbers(json.loads((golden_run / name).read_text())))
    old = dict(_numbers(json.loads((GOLDEN / name).read_text())))
    assert new.keys() == old.keys()
    for k in old:
        assert _close(new[k], old[k], k), k


def test_golden_sweep(golden_run):
    with open(golden_run / "sweep.csv") as a, open(GOLDEN / "sweep.csv") as b:
        new, old = list(csv.DictReader(a)), list(csv.DictReader(b))
    assert len(new) == len(old)
    for rn, ro in zip(new, old):
        for k in ro:
            if k == "residual":
                assert float(rn[k]) <= 1e-10
            else:
                assert float(rn[k]) == pytest.approx(float(ro[k]), rel=1e-9, abs=1e-15), k


def test_report_contents(golden_run):
    rep = json.loads((golden_run / "report.json").read_text())
    assert rep["consistency"]["kappa_spread"] <= 0.05
    assert rep["drift"]["j1"] == 0
    assert rep["propagator"]["missing"] and rep["montecarlo"]["missing"]
    assert "missing" in (golden_run / "report.txt").read_text()


def test_critical_log_ratio(tmp_path):
    cfg = write(tmp_path, "[equilibrium]\ngamma = 1\nasymmetry_plus = 1.5\nasymmetry_minus = 0.5\n"
                          "allow_out_of_range = true\n[grid]\nn = 256\n")
    assert run("drift", "--config", cfg, "--out", str(tmp_path)) == 0
    drift = json.loads((tmp_path / "drift.json").read_text())
    assert abs(drift["log_ratio"] - 1) <= 0.05


def test_propagate_and_report(tmp_path):
    cfg = write(tmp_path, "[grid]\nn = 256\n[propagator]\nxi = 1\nt = 1\neps = 1e-2, 3e-3\n")
    assert run("propagate", "--config", cfg, "--out", str(tmp_path)) == 0
    assert run("report", "--config", cfg, "--out", str(tmp_path)) == 0
    rep = json.loads((tmp_path / "report.json").read_text())
    assert rep["propagator"]["monotone_fraction"] == 1.0


def test_montecarlo_smoke(tmp_path):
    cfg = write(tmp_path, "[grid]\nn = 256\n[montecarlo]\nn = 10000\neps = 0.1\nn_boot = 50\n")
    assert run("montecarlo", "--config", cfg, "--out", str(tmp_path), "--seed", "4") == 0
    mc = json.loads((tmp_path / "montecarlo.json").read_text())
    assert mc["cf"][0]["xi"] == 1.0
    assert {"re", "im", "ci_radius"} <= mc["cf"][0].keys()
    lines = (tmp_path / "ensemble.csv").read_text().splitlines()
    assert lines[0].split(",")[:3] == ["particle", "V", "X"]
    assert len(lines) == 10001


def test_bad_fp_threads(tmp_path, monkeypatch):
    monkeypatch.setenv("FP_THREADS", "many")
    assert run("check", "--out", str(tmp_path)) == 1
