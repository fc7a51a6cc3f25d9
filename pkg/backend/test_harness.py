"""
Tests for experiment validation, run persistence and orchestration
"""

import json
import math
from pathlib import Path

import pytest
import yaml

from schemas.experiment import Method
from schemas.training import RunRecord, TrainConfig
from services.harness import (
    SCHEMA_VERSION, ConfigValidationError, CsvSchemaError, NoRunsFoundError, csv_header,
    negative_transfer_rate, parse_config, read_run_csv, repeat_seed, run, statistic,
    summary_from_csvs, validate_config, write_run_csv,
)


CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"


def synthetic_config(**overrides):
    data = {
        "name": "tiny",
        "method": "mt_cool",
        "train": {"outer_iters": 3, "T_w": 1, "batch_size": 32, "probe_size": 16, "seed": 4},
        "dataset": {"kind": "synthetic", "synthetic": {
            "input_dim": 8, "latent_dim": 3, "classes": 3, "samples": 96, "test_samples": 48,
            "hidden": [8, 4], "seed": 2,
        }},
    }
    data.update(overrides)
    return parse_config(data)


def record(iteration, losses=(0.5, 0.25), accuracies=None, negative_transfer=0):
    return RunRecord(iteration=iteration, losses=list(losses), accuracies=accuracies,
                     negative_transfer=negative_transfer, wall_ms=1.5)


# ==================== Config Validation Tests ====================

class TestValidateConfig:

    def test_valid_file(self, tmp_path):
        """Test a well-formed YAML file yields an ExperimentConfig"""
        path = tmp_path / "ok.yaml"
        path.write_text("method: vanilla\ndataset:\n  kind: landscape\ntrain:\n  lambda: 0.3\n")
        config = validate_config(path)
        assert config.method is Method.VANILLA
        assert config.train.lam == 0.3

    @pytest.mark.parametrize("name", ["synthetic.yaml", "synthetic_sweep.yaml", "landscape.yaml"])
    def test_shipped_configs_validate(self, name):
        """Test the reference experiment files in configs/ validate cleanly"""
        assert validate_config(CONFIG_DIR / name).name == name.removesuffix(".yaml")

    @pytest.mark.parametrize("name", ["mnist.yaml", "mnist_smoke.yaml"])
    def test_mnist_configs_warm_up_one_epoch(self, name):
        """Test the MNIST files warm up for one epoch of a task's 30k images and evaluate every iteration"""
        train = TrainConfig.model_validate(yaml.safe_load((CONFIG_DIR / name).read_text())["train"])
        assert (train.T_w, train.batch_size, train.eval_every) == (235, 128, 1)
        assert train.T_w == math.ceil(60000 / 2 / train.batch_size)

    def test_constraint_diagnostic(self, tmp_path):
        """Test a violated bound names the key, the constraint and the value"""
        path = tmp_path / "bad.yaml"
        path.write_text("method: mt_cool\ndataset:\n  kind: synthetic\ntrain:\n  b: -0.1\n")
        with pytest.raises(ConfigValidationError) as info:
            validate_config(path)
        assert info.value.diagnostics == ["train.b: must satisfy b > 0 (got -0.1)"]

    def test_alias_in_diagnostic(self):
        """Test the KL weight is reported under its file key"""
        with pytest.raises(ConfigValidationError) as info:
            parse_config({"method": "mt_cool", "dataset": {"kind": "synthetic"}, "train": {"lambda": -1}})
        assert info.value.diagnostics[0].startswith("train.lambda: must satisfy lambda >= 0")

    def test_unknown_and_missing_keys(self):
        """Test every violation is reported, one line each"""
        with pytest.raises(ConfigValidationError) as info:
            parse_config({"dataset": {"kind": "synthetic"}, "colour": "red"})
        assert sorted(info.value.diagnostics) == ["colour: unknown key", "method: required key is missing"]

    def test_landscape_rejects_joint(self):
        """Test joint training is not defined on the landscape"""
        with pytest.raises(ConfigValidationError, match="not defined on the landscape"):
            parse_config({"method": "joint", "dataset": {"kind": "landscape"}})

    def test_invalid_yaml(self, tmp_path):
        """Test unparsable YAML is a validation error"""
        path = tmp_path / "broken.yaml"
        path.write_text("method: [unclosed\n")
        with pytest.raises(ConfigValidationError) as info:
            validate_config(path)
        assert info.value.diagnostics[0].startswith("<file>: not valid YAML")

    def test_non_mapping(self, tmp_path):
        """Test a YAML list at the top level is rejected"""
        path = tmp_path / "list.yaml"
        path.write_text("- a\n- b\n")
        with pytest.raises(ConfigValidationError, match="expected a mapping"):
            validate_config(path)

    def test_missing_file(self, tmp_path):
        """Test an absent file is reported as unreadable"""
        with pytest.raises(ConfigValidationError, match="cannot read config"):
            validate_config(tmp_path / "absent.yaml")


# ==================== CSV Tests ====================

class TestRunCsv:

    def test_header_layout(self):
        """Test the column order of the run CSV"""
        assert csv_header(2, 1) == ["schema_version", "iteration", "loss_task0", "loss_task1", "accuracy_task0",
                                    "accuracy_task1", "negative_transfer", "clamp_count", "coord_0"]

    def test_write_then_read(self, tmp_path):
        """Test records survive the CSV with accuracies left blank when unset"""
        records = [record(1), record(2, accuracies=[0.9, 0.8], negative_transfer=1)]
        path = write_run_csv(records, tmp_path / "run_00.csv")
        restored = read_run_csv(path)
        assert restored[0].accuracies is None
        assert restored[1].accuracies == [0.9, 0.8]
        assert restored[1].losses == [0.5, 0.25]
        assert restored[1].negative_transfer == 1

    def test_timing_sidecar(self, tmp_path):
        """Test wall-clock times go to a separate file"""
        write_run_csv([record(1)], tmp_path / "run_00.csv")
        assert (tmp_path / "run_00.timing.csv").read_text() == "iteration,wall_ms\n1,1.500\n"

    def test_unsupported_version(self, tmp_path):
        """Test a newer schema version is refused with its row and column"""
        path = write_run_csv([record(1)], tmp_path / "run_00.csv")
        lines = path.read_text().splitlines()
        lines[1] = str(SCHEMA_VERSION + 1) + lines[1][1:]
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(CsvSchemaError) as info:
            read_run_csv(path)
        assert (info.value.row, info.value.column) == (2, "schema_version")

    def test_iteration_must_increase(self, tmp_path):
        """Test repeated iteration numbers are refused"""
        path = write_run_csv([record(1), record(2)], tmp_path / "run_00.csv")
        path.write_text(path.read_text().replace("\n1,2,", "\n1,1,"))
        with pytest.raises(CsvSchemaError, match="does not increase"):
            read_run_csv(path)

    def test_unparsable_number(self, tmp_path):
        """Test a non-numeric loss names its column"""
        path = write_run_csv([record(1)], tmp_path / "run_00.csv")
        path.write_text(path.read_text().replace("0.5", "half"))
        with pytest.raises(CsvSchemaError) as info:
            read_run_csv(path)
        assert info.value.column == "loss_task0"

    def test_wrong_header(self, tmp_path):
        """Test files from another tool are refused"""
        path = tmp_path / "run_00.csv"
        path.write_text("epoch,loss\n1,0.3\n")
        with pytest.raises(CsvSchemaError):
            read_run_csv(path)

    def test_header_only_file(self, tmp_path):
        """Test a run CSV with a header and no data rows is refused at row 2"""
        path = tmp_path / "run_00.csv"
        path.write_text(",".join(csv_header(2, 0)) + "\n")
        with pytest.raises(CsvSchemaError) as info:
            read_run_csv(path)
        assert (info.value.row, info.value.column) == (2, "iteration")


# ==================== Summary Tests ====================

class TestSummary:

    def test_statistic_uses_sample_std(self):
        """Test std is Bessel-corrected"""
        stat = statistic([1.0, 3.0])
        assert stat.mean == 2.0
        assert stat.std == pytest.approx(2 ** 0.5)

    def test_single_value_has_zero_std(self):
        """Test one repeat reports std 0"""
        assert statistic([0.7]).std == 0.0

    def test_negative_transfer_rate(self):
        """Test the rate counts events per iteration and task pair"""
        records = [record(1, negative_transfer=1), record(2), record(3, negative_transfer=1), record(4)]
        assert negative_transfer_rate(records) == 0.5

    def test_repeat_seeds_distinct(self):
        """Test each repeat draws its own seed"""
        assert len({repeat_seed(0, r) for r in range(10)}) == 10


# ==================== Orchestration Tests ====================

class TestRun:

    def test_synthetic_run_writes_artifacts(self, tmp_path):
        """Test a run writes CSVs, timing sidecars, summary and config"""
        summaries = run(synthetic_config(repeats=2), tmp_path)
        run_dir = tmp_path / "tiny"
        for name in ("run_00.csv", "run_01.csv", "run_00.timing.csv", "summary.json", "config.json"):
            assert (run_dir / name).exists()
        assert len(read_run_csv(run_dir / "run_00.csv")) == 3
        summary = json.loads((run_dir / "summary.json").read_text())
        assert summary["repeats"] == 2
        assert len(summary["accuracy"]) == 2
        assert summaries[0].csv_files == ["run_00.csv", "run_01.csv"]
        assert summaries[0].timings["repeat"]["count"] == 2.0
        assert "experiment" in summary["timings"]

    def test_same_seed_same_bytes(self, tmp_path):
        """Test two runs with one seed produce byte-identical CSVs"""
        run(synthetic_config(), tmp_path / "a")
        run(synthetic_config(), tmp_path / "b")
        assert (tmp_path / "a/tiny/run_00.csv").read_bytes() == (tmp_path / "b/tiny/run_00.csv").read_bytes()

    def test_summary_recomputed_from_csvs(self, tmp_path):
        """Test persisted CSVs reproduce the in-memory summary"""
        config = synthetic_config(repeats=2)
        summary = run(config, tmp_path)[0]
        restored = summary_from_csvs(tmp_path / "tiny", config)
        assert restored.final_loss == summary.final_loss
        assert restored.accuracy == summary.accuracy

    def test_lambda_sweep_subdirectories(self, tmp_path):
        """Test a sweep runs once per lambda and writes sweep.json with its paired comparison"""
        config = synthetic_config(train={"outer_iters": 2, "T_w": 0, "batch_size": 32, "probe_size": 16,
                                         "lambda_sweep": [0.0, 0.5]})
        summaries = run(config, tmp_path)
        assert [s.lam for s in summaries] == [0.0, 0.5]
        assert (tmp_path / "tiny/lambda_0/run_00.csv").exists()
        assert (tmp_path / "tiny/lambda_0.5/run_00.csv").exists()
        assert len(json.loads((tmp_path / "tiny/sweep.json").read_text())) == 2
        comparisons = json.loads((tmp_path / "tiny/comparison.json").read_text())
        assert [(c["baseline"], c["candidate"]) for c in comparisons] == [
            ("tiny/mt_cool/lambda=0", "tiny/mt_cool/lambda=0.5")]

    def test_independent_method(self, tmp_path):
        """Test the independent baseline runs through the harness"""
        summary = run(synthetic_config(method="independent"), tmp_path)[0]
        assert summary.negative_transfer_rate.mean == 0.0

    def test_landscape_run_writes_grid(self, tmp_path):
        """Test landscape runs persist coordinates and the contour grid"""
        config = parse_config({"name": "land", "method": "mt_cool", "dataset": {"kind": "landscape"},
                               "train": {"T_w": 0, "outer_iters": 5, "beta": 0.1}})
        run(config, tmp_path)
        records = read_run_csv(tmp_path / "land/run_00.csv")
        assert records[-1].coordinates is not None and len(records[-1].coordinates) == 2
        lines = (tmp_path / "land/landscape.csv").read_text().splitlines()
        assert lines[0] == "theta_0,theta_1,loss,smoothed"
        assert len(lines) == 1 + 81 * 81

    def test_empty_directory_has_no_runs(self, tmp_path):
        """Test recomputing a summary without CSVs raises NoRunsFoundError"""
        with pytest.raises(NoRunsFoundError):
            summary_from_csvs(tmp_path, synthetic_config())
