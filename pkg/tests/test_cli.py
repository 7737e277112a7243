from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from sdsmlab.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, RunReport, main, replica_chunks
from sdsmlab.config import ExperimentConfig, validate_document
from sdsmlab.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(tmp_path, command, config, *extra):
    out = tmp_path / config
    code = main([command, "--config", str(CONFIGS / f"{config}.json"), "--out", str(out), *extra])
    report = json.loads((out / "report.json").read_text()) if (out / "report.json").exists() else None
    return code, report, out


class TestConfig:
    @pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.json")), ids=lambda p: p.stem)
    def test_bundled_configs_validate(self, path):
        validate_document(json.loads(path.read_text()))

    @pytest.mark.parametrize(
        "doc, pointer",
        [
            ({"bogus": 1}, "/bogus"),
            ({"model": {"dimension": 4}}, "/model/dimension"),
            ({"model": {"dimension": 1, "h": {"kind": "spline"}}}, "/model/h/kind"),
            ({"duality": {"m": 2}}, "/duality/f"),
            ({"dt": -0.1}, "/dt"),
            ({"holder": {"lag_steps": [1, 2]}}, "/holder/lag_steps"),
            ({"initial_measure": {"kind": "dirac"}}, "/initial_measure/point"),
        ],
    )
    def test_pointers(self, doc, pointer):
        with pytest.raises(ConfigError) as exc:
            validate_document(doc)
        assert exc.value.pointer == pointer

    def test_overrides(self):
        cfg = ExperimentConfig.from_dict({"seed": 4, "replicas": 3}, seed=9)
        assert (cfg.seed, cfg.replicas) == (9, 3)

    def test_invalid_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{\n  \"seed\": ,\n}")
        with pytest.raises(ConfigError, match="line 2"):
            ExperimentConfig.load(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.load(tmp_path / "nope.json")


class TestExitCodes:
    def test_validate_lebesgue_passes(self, tmp_path):
        code, rep, _ = run(tmp_path, "validate", "validate_lebesgue")
        assert code == EXIT_PASS and rep["pass"]
        assert {c["name"] for c in rep["checks"]} >= {"ellipticity", "upsilon_finite"}

    def test_dirac_fails_upsilon(self, tmp_path):
        code, rep, _ = run(tmp_path, "validate", "validate_dirac")
        assert code == EXIT_FAIL
        failed = [c["name"] for c in rep["checks"] if not c["pass"]]
        assert failed == ["upsilon_finite"]

    def test_degenerate_fails_ellipticity(self, tmp_path):
        code, rep, _ = run(tmp_path, "validate", "validate_degenerate")
        assert code == EXIT_FAIL
        assert [c["name"] for c in rep["checks"] if not c["pass"]] == ["ellipticity"]

    def test_missing_config(self, tmp_path, capsys):
        assert main(["simulate", "--out", str(tmp_path)]) == EXIT_CONFIG
        assert "configuration error" in capsys.readouterr().err

    def test_schema_error_reports_pointer(self, tmp_path, capsys):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"particles": 0}))
        assert main(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == EXIT_CONFIG
        assert "/particles" in capsys.readouterr().err

    def test_unknown_command(self):
        assert main(["frobnicate"]) == EXIT_CONFIG

    def test_bad_seed(self):
        assert main(["validate", "--seed", "-1"]) == EXIT_CONFIG

    def test_bad_log_level(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SDSMLAB_LOG", "verbose")
        code, rep, _ = run(tmp_path, "validate", "validate_lebesgue")
        assert code == EXIT_CONFIG and rep is None


class TestCommands:
    def test_simulate_outputs(self, tmp_path):
        code, rep, out = run(tmp_path, "simulate", "simulate_small", "--replicas", "2")
        assert code == EXIT_PASS
        assert rep["replicas"] == 2 and rep["config_hash"]
        rows = (out / "paths" / "replica_00000.csv").read_text().splitlines()
        assert rows[0] == "snapshot_time,particle_index,x1,x2,mass"
        assert (out / "mass.csv").exists()

    def test_determinism_across_threads(self, tmp_path):
        _, _, one = run(tmp_path / "a", "simulate", "simulate_small", "--replicas", "3", "--threads", "1")
        _, _, two = run(tmp_path / "b", "simulate", "simulate_small", "--replicas", "3", "--threads", "2")
        for k in range(3):
            name = f"paths/replica_{k:05d}.csv"
            assert (one / name).read_bytes() == (two / name).read_bytes()

    def test_seed_changes_paths(self, tmp_path):
        _, _, a = run(tmp_path / "a", "simulate", "simulate_small", "--replicas", "1")
        _, rep, b = run(tmp_path / "b", "simulate", "simulate_small", "--replicas", "1", "--seed", "99")
        assert rep["seed"] == 99
        assert (a / "paths/replica_00000.csv").read_bytes() != (b / "paths/replica_00000.csv").read_bytes()

    def test_duality_m1(self, tmp_path):
        code, rep, out = run(tmp_path, "duality", "duality_m1")
        assert code == EXIT_PASS
        assert json.loads((out / "duality.json").read_text())

    def test_localtime(self, tmp_path):
        code, rep, out = run(tmp_path, "localtime", "localtime_small", "--replicas", "10")
        assert code == EXIT_PASS, rep
        header = (out / "localtime_lambda0.csv").read_text().splitlines()[0]
        assert header == "t,x1,x2,lambda,term1,term2,term3,term4,term5,total,se"

    def test_holder_reports_every_check(self, tmp_path):
        code, rep, out = run(tmp_path, "holder", "holder_small")
        names = [c["name"] for c in rep["checks"]]
        assert names == ["brownian_shim", "time_exponent", "space_exponent"]
        assert code == (EXIT_PASS if rep["pass"] else EXIT_FAIL)
        assert json.loads((out / "holder_time.json").read_text())["mode"] == "time"


class TestReport:
    def test_duplicate_check_rejected(self):
        rep = RunReport("validate", "abc", 0, 1)
        rep.add("x", True)
        with pytest.raises(ValueError):
            rep.add("x", False)

    def test_non_finite_serialized(self, tmp_path):
        rep = RunReport("validate", "abc", 0, 1)
        rep.add("x", False, value=float("inf"), other=float("nan"))
        rep.write(tmp_path / "r.json")
        doc = json.loads((tmp_path / "r.json").read_text())
        assert doc["checks"][0]["value"] == "inf" and doc["checks"][0]["other"] == "nan"

    @pytest.mark.parametrize("replicas, threads", [(10, 3), (2, 8), (7, 1)])
    def test_chunks_cover(self, replicas, threads):
        chunks = replica_chunks(replicas, threads)
        covered = [i for first, n in chunks for i in range(first, first + n)]
        assert covered == list(range(replicas))


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "sdsmlab", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("sdsmlab ")
