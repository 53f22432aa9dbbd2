import json
import math
import subprocess
import sys

import pytest

from hecop import cli


def run(*argv):
    return cli.main([str(a) for a in argv])


def load(path):
    return json.loads(path.read_text())


class TestParsing:
    def test_parse_k(self):
        assert cli.parse_k("inf") == math.inf and cli.parse_k("0.5") == 0.5
        assert cli.parse_k_list("0.5,1,inf") == [0.5, 1.0, math.inf]

    def test_read_config(self, tmp_path):
        p = tmp_path / "c.cfg"
        p.write_text("# comment\nseed = 7\ndt-base=0.01  # trailing\n\n")
        assert cli.read_config(p) == {"seed": "7", "dt_base": "0.01"}
        p.write_text("seed 7\n")
        with pytest.raises(cli.InvalidArgumentError):
            cli.read_config(p)

    def test_help_mentions_clocks_and_targets(self, capsys):
        assert run("verify", "--help") == 0
        text = capsys.readouterr().out
        assert "TILDE" in text and "tau / (2N)" in text and "Exit codes" in text
        for target in cli.VERIFY_HELP:
            assert target in text

    def test_console_script_entry(self):
        res = subprocess.run([sys.executable, "-m", "hecop.cli", "--version"], capture_output=True, text=True)
        assert res.returncode == 0 and res.stdout.startswith("hecop ")


class TestExitCodes:
    def test_invalid_k(self, tmp_path):
        assert run("simulate", "--k", "0.3", "--N", 3, "--out", tmp_path) == 2

    def test_unknown_option_is_invalid(self, tmp_path):
        assert run("simulate", "--bogus", "--out", tmp_path) == 2

    def test_unknown_config_key(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("nonsense = 1\n")
        assert run("simulate", "--config", cfg, "--out", tmp_path) == 2
        assert run("simulate", "--config", tmp_path / "missing.cfg", "--out", tmp_path) == 2

    def test_verification_failure_is_one(self, tmp_path):
        # far too few particles for the large-N limit to hold at 5%
        code = run("verify", "thm3_1", "--N", 4, "--k-list", "inf", "--replicas", 2, "--tau", 1.0,
                   "--out", tmp_path)
        assert code == 1
        assert load(tmp_path / "verify-thm3_1.json")["verdict"]["passed"] is False

    def test_numeric_failure_is_three(self, tmp_path):
        code = run("simulate", "--N", 3, "--k", 1, "--t-end", 1.0, "--dt-base", 0.5,
                   "--warm-start-delta", 1e-12, "--out", tmp_path)
        assert code == 3


class TestSimulate:
    def test_outputs_and_determinism(self, tmp_path):
        args = ["simulate", "--case", "B", "--N", 4, "--k", 2, "--tau", 0.5, "--replicas", 5,
                "--seed", 3, "--out", tmp_path]
        assert run(*args) == 0
        csv1 = (tmp_path / "terminal.csv").read_bytes()
        j1 = load(tmp_path / "simulate.json")
        assert run(*args) == 0
        assert (tmp_path / "terminal.csv").read_bytes() == csv1
        j2 = load(tmp_path / "simulate.json")
        j1.pop("meta"), j2.pop("meta")
        assert j1 == j2
        assert csv1.startswith(b"replica,x1,x2,x3,x4\r\n") and csv1.count(b"\r\n") == 6
        assert j1["t_sim"] == pytest.approx(0.5 / 8) and j1["schema_version"] == 1
        assert j1["code_version"] == cli.code_version()

    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("seed = 11\nreplicas = 3\nN = 3\ndt-base = 0.001\n")
        assert run("simulate", "--config", cfg, "--replicas", 2, "--out", tmp_path, "--format", "json") == 0
        doc = load(tmp_path / "simulate.json")
        assert doc["config"]["seed"] == 11 and doc["config"]["replicas"] == 2
        assert doc["config"]["dt_base"] == 0.001
        assert len(doc["terminal_states"]) == 2

    def test_ho_clock_runs_to_t_over_k(self, tmp_path):
        assert run("simulate", "--N", 2, "--k", 4, "--t-end", 0.2, "--clock", "HO", "--out", tmp_path) == 0
        doc = load(tmp_path / "simulate.json")
        assert doc["t_run"] == pytest.approx(0.05)
        assert run("simulate", "--N", 2, "--k", "inf", "--clock", "HO", "--out", tmp_path) == 2

    def test_threads_do_not_change_results(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        base = ["simulate", "--N", 3, "--replicas", 4, "--seed", 5]
        assert run(*base, "--out", a, "--threads", 1) == 0
        assert run(*base, "--out", b, "--threads", 2) == 0
        assert (a / "terminal.csv").read_bytes() == (b / "terminal.csv").read_bytes()


class TestCommands:
    def test_free_limit(self, tmp_path):
        assert run("free-limit", "--tau", 0.5, "--points", 2001, "--L", 4, "--out", tmp_path) == 0
        doc = load(tmp_path / "free-limit.json")
        assert abs(doc["mass_before_normalisation"] - 1.0) < 1e-3
        assert (tmp_path / "free-limit-tau0.5.csv").exists()
        rows = (tmp_path / "free-limit-moments.csv").read_text().splitlines()
        assert rows[0] == "l,cumulant_engine,grid_quadrature" and len(rows) == 5

    def test_verify_exp2_identity(self, tmp_path, capsys):
        assert run("verify", "thm3_2", "--tau", "0.1,0.3", "--out", tmp_path) == 0
        assert "PASS" in capsys.readouterr().out
        assert load(tmp_path / "verify-thm3_2.json")["verdict"]["passed"] is True

    def test_verify_densities(self, tmp_path):
        assert run("verify", "densities", "--case", "B", "--draws", 20000, "--out", tmp_path) == 0
        rows = load(tmp_path / "verify-densities.json")["rows"]
        assert {r["variant"] for r in rows} == {"b_flat", "b_drift"}

    def test_verify_matrix_equivalence_small(self, tmp_path):
        code = run("verify", "cor2_6", "--N", 3, "--tau", 0.2, "--replicas", 400, "--draws", 400,
                   "--out", tmp_path)
        assert code == 0

    def test_verify_sweep_writes_report(self, tmp_path):
        code = run("verify", "thm4_2", "--N", 6, "--replicas", 4, "--L", 4, "--out", tmp_path)
        assert code in (0, 1)
        doc = load(tmp_path / "verify-thm4_2.json")
        assert doc["reports"][0]["recipe"] == "abs"
        assert doc["reports"][0]["t_sim"] == pytest.approx(0.5 / 12)
        assert (tmp_path / "verify-thm4_2.csv").read_bytes().count(b"\r\n") == 5

    def test_density_selftest_small(self, tmp_path, monkeypatch):
        monkeypatch.setenv("HECOP_CACHE_DIR", str(tmp_path / "cache"))
        code = run("density-selftest", "--draws", 20000, "--ks-draws", 600, "--out", tmp_path)
        assert code == 0
        doc = load(tmp_path / "density-selftest.json")
        assert len(doc["normalisation"]) == len(cli.SELFTEST_CASES) and len(doc["ks"]) == 3
