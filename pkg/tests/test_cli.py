"""Command-line interface: exit codes, outputs and determinism."""

from __future__ import annotations

import csv
import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from semitrace.cli import EXIT_FAIL, EXIT_PASS, EXIT_USAGE, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write_config(tmp_path: Path, doc: dict) -> Path:
    path = tmp_path / "config.json"
    path.write_text(json.dumps(doc))
    return path


def report(out: Path) -> dict:
    return json.loads((out / "report.json").read_text())


def rows_by_name(rep: dict) -> dict:
    return {r["name"]: r for r in rep["rows"]}


class TestUsage:
    def test_unknown_command(self, capsys):
        assert main(["bogus", "--config", str(CONFIGS / "free.json")]) == EXIT_USAGE

    def test_missing_config_argument(self, monkeypatch, capsys):
        monkeypatch.delenv("SEMITRACE_CONFIG", raising=False)
        assert main(["verify"]) == EXIT_USAGE
        assert "--config" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["verify", "--config", str(tmp_path / "nope.json")]) == EXIT_USAGE
        assert "does not exist" in capsys.readouterr().err

    def test_invalid_config(self, tmp_path, capsys):
        doc = {"problem": {"domain": {"d": 2, "periods": [1, 1]}, "phi": {"support": [0.5, 4.0]}, "B": {"components": [{"j": 0, "k": 1, "constant": 1.0}]}}}
        assert main(["verify", "--config", str(write_config(tmp_path, doc))]) == EXIT_USAGE
        assert "flux" in capsys.readouterr().err

    def test_help(self, capsys):
        assert main(["--help"]) == EXIT_PASS
        assert "full-report" in capsys.readouterr().out


class TestCommands:
    def test_verify_free_problem(self, tmp_path):
        out = tmp_path / "run"
        assert main(["verify", "--config", str(CONFIGS / "free.json"), "--out", str(out)]) == EXIT_PASS
        rep = report(out)
        rows = rows_by_name(rep)
        assert rep["passed"] and rep["command"] == "verify"
        assert rows["verify.weyl"]["status"] == "pass"
        assert rows["verify.c0"]["status"] == "pass"
        for name in ("config.snapshot.json", "ladder.csv", "fit.csv", "logs/run.log", "logs/timings.json", "plotdata/fit.tsv"):
            assert (out / name).is_file(), name
        fit = list(csv.DictReader(open(out / "fit.csv")))
        assert [int(r["r"]) for r in fit] == [0, 1, 2, 3]

    def test_gauge_check(self, tmp_path):
        out = tmp_path / "gauge"
        assert main(["gauge-check", "--config", str(CONFIGS / "acceptance.json"), "--out", str(out)]) == EXIT_PASS
        names = set(rows_by_name(report(out)))
        assert {"gauge.transversality", "gauge.taylor_fit", "gauge.phase_identity", "gauge.spectrum_shift"} <= names

    def test_expand_check_and_coeffs(self, tmp_path):
        cfg = str(CONFIGS / "acceptance.json")
        assert main(["expand-check", "--config", cfg, "--out", str(tmp_path / "e")]) == EXIT_PASS
        assert (tmp_path / "e" / "plotdata" / "expansion_remainders.tsv").is_file()
        assert main(["coeffs", "--config", cfg, "--out", str(tmp_path / "c")]) == EXIT_PASS
        assert (tmp_path / "c" / "coeffs.csv").is_file()

    def test_hs_check(self, tmp_path):
        doc = json.loads((CONFIGS / "free.json").read_text())
        doc["hs_check"] = {"n": 10, "matrices": 1, "sweep": {"N": [3], "delta": [1.0], "quad_n": [20]}}
        out = tmp_path / "hs"
        assert main(["hs-check", "--config", str(write_config(tmp_path, doc)), "--out", str(out)]) == EXIT_PASS
        sweep = list(csv.DictReader(open(out / "hs_check.csv")))
        assert len(sweep) == 1 and sweep[0]["quad_n"] == "20"

    def test_under_resolved_ladder_fails_without_fit(self, tmp_path):
        out = tmp_path / "under"
        assert main(["verify", "--config", str(CONFIGS / "underresolved.json"), "--out", str(out)]) == EXIT_FAIL
        rows = rows_by_name(report(out))
        assert rows["trace.resolution"]["status"] == "fail"
        for name in ("verify.c0", "verify.c1_ratio", "verify.c2"):
            assert rows[name]["status"] == "n/a"
        assert not (out / "fit.csv").exists()

    def test_deterministic_reports(self, tmp_path):
        # the output path is part of the hashed snapshot, so both runs share it
        cfg, out = str(CONFIGS / "free.json"), tmp_path / "run"
        blobs = []
        for _ in range(2):
            assert main(["verify", "--config", cfg, "--out", str(out), "--seed", "3"]) == EXIT_PASS
            blobs.append((out / "report.json").read_bytes())
        assert blobs[0] == blobs[1]
        assert report(out)["seed"] == 3

    def test_environment_overrides(self, tmp_path, monkeypatch):
        out = tmp_path / "env"
        monkeypatch.setenv("SEMITRACE_CONFIG", str(CONFIGS / "free.json"))
        monkeypatch.setenv("SEMITRACE_OUT", str(out))
        monkeypatch.setenv("SEMITRACE_SEED", "11")
        assert main(["coeffs"]) == EXIT_PASS
        assert report(out)["seed"] == 11
        snap = json.loads((out / "config.snapshot.json").read_text())
        assert snap["seed"] == 11 and snap["output"] == str(out)

    @pytest.mark.skipif(shutil.which("semitrace") is None, reason="console script not installed")
    def test_console_script(self, tmp_path):
        proc = subprocess.run(
            ["semitrace", "coeffs", "--config", str(CONFIGS / "free.json"), "--out", str(tmp_path / "s")],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == EXIT_PASS, proc.stderr
        assert "coeffs" in proc.stdout.lower() or (tmp_path / "s" / "coeffs.csv").is_file()

    def test_module_invocation(self):
        proc = subprocess.run([sys.executable, "-m", "semitrace.cli", "--version"], capture_output=True, text=True)
        assert proc.returncode == 0 and "semitrace" in proc.stdout
