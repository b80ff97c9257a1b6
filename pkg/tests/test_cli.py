import csv
import hashlib
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from apsing.cli import main, parse_config, recheck_report
from apsing.errors import SchemaError

BASE = """
pipeline = "{pipeline}"
seed = {seed}

[domain]
kind = "interval"
a = 0.0
b = 1.0
bc = "dirichlet"
n = {n}

[nonlinearity]
family = "sigmoid_bump"
m = 2.0
M = 15.0
bump_center = 1.5
bump_width = 0.6
bump_height = -8.0
"""


def write_config(tmp_path, pipeline, seed=0, n=99, extra=""):
    cfg = tmp_path / "config.toml"
    cfg.write_text(BASE.format(pipeline=pipeline, seed=seed, n=n) + extra)
    return cfg


def checksum(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class TestConfigParsing:
    def test_missing_file(self, tmp_path):
        with pytest.raises(SchemaError):
            parse_config(tmp_path / "nope.toml")

    def test_broken_toml(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("pipeline = [oops")
        with pytest.raises(SchemaError):
            parse_config(cfg)

    def test_unknown_pipeline(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text(BASE.format(pipeline="nonsense", seed=0, n=99))
        with pytest.raises(SchemaError):
            parse_config(cfg)

    def test_missing_domain(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text('pipeline = "spectrum"\n')
        with pytest.raises(SchemaError):
            parse_config(cfg)

    def test_negative_tolerance(self, tmp_path):
        cfg = write_config(tmp_path, "spectrum",
                           extra="\n[tolerances]\neig = -1.0\n")
        with pytest.raises(SchemaError):
            parse_config(cfg)

    def test_cli_flags_override(self, tmp_path):
        cfg = write_config(tmp_path, "spectrum", seed=5)
        config = parse_config(cfg, out=str(tmp_path / "o"), seed=42)
        assert config.seed == 42
        assert config.out_dir == tmp_path / "o"


class TestPipelines:
    def test_spectrum_artifacts(self, tmp_path):
        cfg = write_config(tmp_path, "spectrum")
        code = main(["spectrum", "--config", str(cfg),
                     "--out", str(tmp_path / "run")])
        assert code == 0
        report = json.loads((tmp_path / "run" / "report.json").read_text())
        assert report["schema"] == "apsing.report.v1"
        modes = report["results"]["modes"]
        assert [m["k"] for m in modes] == list(range(1, len(modes) + 1))
        assert all(m["residual"] <= 1e-9 for m in modes)
        with open(tmp_path / "run" / "traces" / "spectrum.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["k", "mu_k", "residual"]
        assert abs(float(rows[1][1]) - np.pi**2) < 0.01
        manifest = json.loads((tmp_path / "run" / "manifest.json").read_text())
        assert manifest["status"] == 0
        assert "timestamp" in manifest

    def test_fiber_trace_csv(self, tmp_path):
        cfg = write_config(
            tmp_path, "fiber",
            extra="\n[options]\nt_lo = -2.0\nt_hi = 2.0\n")
        code = main(["fiber", "--config", str(cfg),
                     "--out", str(tmp_path / "run")])
        assert code == 0
        with open(tmp_path / "run" / "traces" / "fiber.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "h", "lambda1", "newton_residual", "w_norm"]
        assert len(rows) > 10
        ts = [float(r[0]) for r in rows[1:]]
        assert ts == sorted(ts)

    def test_balance_report(self, tmp_path):
        cfg = write_config(tmp_path, "balance",
                           extra="\n[options]\nL = 5.0\nR = 15.0\n")
        code = main(["balance", "--config", str(cfg),
                     "--out", str(tmp_path / "run")])
        assert code == 0
        report = json.loads((tmp_path / "run" / "report.json").read_text())
        assert abs(report["results"]["lambda_residual"]) <= 1e-9
        with open(tmp_path / "run" / "traces" / "theta_sweep.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["theta", "lambda1"]
        lams = np.array([float(r[1]) for r in rows[1:]])
        assert np.all(np.diff(lams) > 0)       # monotone sweep for L < R

    def test_four_preimages_run_and_recheck(self, tmp_path):
        cfg = write_config(tmp_path, "four-preimages", seed=7, n=199)
        code = main(["four-preimages", "--config", str(cfg),
                     "--out", str(tmp_path / "run")])
        assert code == 0
        report = json.loads((tmp_path / "run" / "report.json").read_text())
        cert = report["results"]["certificate"]
        assert cert["count"] >= 4
        assert recheck_report(report)["valid"]
        # classify pipeline consumes the prior report
        cfg2 = write_config(tmp_path, "classify", extra=(
            '\n[options]\ninput_report = "%s"\n'
            % (tmp_path / "run" / "report.json")))
        code = main(["classify", "--config", str(cfg2),
                     "--out", str(tmp_path / "run2")])
        assert code == 0
        rep2 = json.loads((tmp_path / "run2" / "report.json").read_text())
        assert rep2["results"]["recheck"]["valid"]

    def test_stage_failure_exit_code(self, tmp_path):
        cfg = tmp_path / "convex.toml"
        cfg.write_text("""
pipeline = "four-preimages"
[domain]
kind = "interval"
a = 0.0
b = 1.0
bc = "dirichlet"
n = 99
[nonlinearity]
family = "sigmoid_bump"
m = 2.0
M = 15.0
bump_center = 0.0
bump_width = 1.0
bump_height = 0.0
""")
        code = main(["four-preimages", "--config", str(cfg),
                     "--out", str(tmp_path / "run")])
        assert code == 2
        report = json.loads((tmp_path / "run" / "report.json").read_text())
        assert report["failure"]["stage"]

    def test_malformed_config_exit_3_no_artifacts(self, tmp_path):
        cfg = tmp_path / "bad.toml"
        cfg.write_text("pipeline = [oops")
        out = tmp_path / "run"
        code = main(["spectrum", "--config", str(cfg), "--out", str(out)])
        assert code == 3
        assert not out.exists()

    def test_determinism_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path, "four-preimages", seed=13, n=99)
        for name in ("a", "b"):
            code = main(["four-preimages", "--config", str(cfg),
                         "--out", str(tmp_path / name)])
            assert code == 0
        assert checksum(tmp_path / "a" / "report.json") == \
            checksum(tmp_path / "b" / "report.json")
        assert checksum(tmp_path / "a" / "traces" / "fiber.csv") == \
            checksum(tmp_path / "b" / "traces" / "fiber.csv")

    def test_console_script(self, tmp_path):
        cfg = write_config(tmp_path, "spectrum")
        proc = subprocess.run(
            [sys.executable, "-m", "apsing.cli"],
            capture_output=True, text=True)
        assert proc.returncode == 2        # argparse usage error
        proc = subprocess.run(
            ["apsing", "spectrum", "--config", str(cfg),
             "--out", str(tmp_path / "run")],
            capture_output=True, text=True)
        assert proc.returncode == 0
