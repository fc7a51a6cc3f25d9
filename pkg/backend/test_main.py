"""
Tests for the command line and its exit codes
"""

import json

import pytest

import main
from main import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION
from services.harness import csv_header
from services.verification import OracleCheck, SuiteReport

SYNTHETIC_YAML = """\
name: cli
method: vanilla
train:
  outer_iters: 2
  T_w: 0
  batch_size: 32
  probe_size: 8
dataset:
  kind: synthetic
  synthetic:
    input_dim: 6
    latent_dim: 2
    classes: 3
    samples: 64
    test_samples: 32
    hidden: [4]
"""


@pytest.fixture
def config_file(tmp_path):
    path = tmp_path / "cli.yaml"
    path.write_text(SYNTHETIC_YAML)
    return path


# ==================== Exit Code Tests ====================

class TestExitCodes:

    def test_run_and_plot(self, config_file, tmp_path, capsys):
        """Test a valid experiment runs, prints accuracies and can be plotted"""
        out = tmp_path / "out"
        assert main.main(["run", str(config_file), "--output-dir", str(out)]) == EXIT_OK
        assert "cli [vanilla, lambda=0.1] accuracy:" in capsys.readouterr().out
        assert main.main(["plot", str(out / "cli")]) == EXIT_OK
        assert (out / "cli" / "losses.svg").exists()

    def test_invalid_config(self, tmp_path, capsys):
        """Test validation failures print key paths and exit with 1"""
        path = tmp_path / "bad.yaml"
        path.write_text("method: mt_cool\ndataset:\n  kind: synthetic\ntrain:\n  b: -0.1\n")
        assert main.main(["run", str(path)]) == EXIT_VALIDATION
        assert "train.b: must satisfy b > 0 (got -0.1)" in capsys.readouterr().err

    def test_plot_without_runs(self, tmp_path, capsys):
        """Test plotting an empty directory is a runtime error"""
        assert main.main(["plot", str(tmp_path)]) == EXIT_RUNTIME
        assert "no run CSVs" in capsys.readouterr().err

    def test_plot_header_only_csv(self, tmp_path, capsys):
        """Test a run CSV without data rows exits with 2 and names the row"""
        (tmp_path / "run_00.csv").write_text(",".join(csv_header(2, 0)) + "\n")
        assert main.main(["plot", str(tmp_path)]) == EXIT_RUNTIME
        assert "row 2, column 'iteration'" in capsys.readouterr().err

    def test_plot_bad_landscape_cell(self, config_file, tmp_path, capsys):
        """Test a non-numeric landscape cell exits with 2 and names the column"""
        out = tmp_path / "out"
        assert main.main(["run", str(config_file), "--output-dir", str(out)]) == EXIT_OK
        (out / "cli" / "landscape.csv").write_text("theta_0,theta_1,loss,smoothed\n0,0,abc,0\n")
        assert main.main(["plot", str(out / "cli")]) == EXIT_RUNTIME
        assert "column 'loss'" in capsys.readouterr().err

    def test_compare_runs(self, config_file, tmp_path, capsys):
        """Test two run directories are compared and comparison.json is written"""
        out = tmp_path / "out"
        assert main.main(["run", str(config_file), "--output-dir", str(out)]) == EXIT_OK
        cool = config_file.read_text().replace("name: cli", "name: cli_cool").replace("method: vanilla",
                                                                                       "method: mt_cool")
        cool_file = tmp_path / "cool.yaml"
        cool_file.write_text(cool)
        assert main.main(["run", str(cool_file), "--output-dir", str(out)]) == EXIT_OK
        target = tmp_path / "cmp.json"
        assert main.main(["compare", str(out / "cli"), str(out / "cli_cool"), "--output", str(target)]) == EXIT_OK
        assert "cli_cool/mt_cool/lambda=0.1 vs cli/vanilla/lambda=0.1: " in capsys.readouterr().out
        assert json.loads(target.read_text())[0]["repeats"] == 1

    def test_compare_missing_summary(self, tmp_path, capsys):
        """Test comparing directories without summary.json exits with 2"""
        assert main.main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == EXIT_RUNTIME
        assert "error:" in capsys.readouterr().err

    def test_unknown_subcommand(self):
        """Test argparse rejects unknown commands"""
        with pytest.raises(SystemExit):
            main.main(["train"])


class TestVerifyCommand:

    def test_failed_oracle_exit_code(self, monkeypatch, capsys):
        """Test a failing oracle prints FAIL and exits with 1"""
        report = SuiteReport(checks=[OracleCheck(name="grad/add", passed=True),
                                     OracleCheck(name="landscape/seed0", passed=False, detail="sharp basin")])
        monkeypatch.setattr(main, "run_oracle_suite", lambda seed, landscape_seeds: report)
        assert main.main(["verify", "--landscape-seeds", "1"]) == EXIT_VALIDATION
        out = capsys.readouterr().out
        assert "PASS grad/add" in out
        assert "FAIL landscape/seed0: sharp basin" in out
        assert "1/2 oracle checks passed" in out

    def test_passing_oracles(self, monkeypatch):
        """Test an all-pass report exits with 0"""
        report = SuiteReport(checks=[OracleCheck(name="grad/add", passed=True)])
        monkeypatch.setattr(main, "run_oracle_suite", lambda seed, landscape_seeds: report)
        assert main.main(["verify"]) == EXIT_OK

    @pytest.mark.slow
    def test_full_oracle_suite(self):
        """Test every oracle passes on the default seed"""
        assert main.main(["verify", "--landscape-seeds", "3"]) == EXIT_OK
