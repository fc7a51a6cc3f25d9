"""
Tests for paired run comparisons
"""

import json

import pytest

from schemas.experiment import PairedComparison, RunSummary, TaskStatistic
from services.comparison import (
    ComparisonError, compare, compare_ladder, load_summary, per_repeat_accuracy, write_comparisons,
)


def summary(method, task_values, seeds=None, lam=0.1):
    repeats = len(task_values[0])
    return RunSummary(
        name="bench", method=method, dataset="synthetic", lam=lam, repeats=repeats,
        seeds=seeds or list(range(repeats)),
        accuracy=[TaskStatistic(mean=sum(v) / len(v), std=0.0, values=list(v)) for v in task_values],
        final_loss=[TaskStatistic(mean=0.0, std=0.0, values=[0.0] * repeats)],
        negative_transfer_rate=TaskStatistic(mean=0.0, std=0.0, values=[0.0] * repeats),
        wall_seconds=0.0, csv_files=[],
    )


VANILLA = [[0.80, 0.82, 0.79, 0.81, 0.80, 0.83], [0.70, 0.71, 0.69, 0.72, 0.70, 0.71]]
COOL = [[0.84, 0.85, 0.79, 0.86, 0.83, 0.88], [0.73, 0.74, 0.72, 0.75, 0.71, 0.76]]


# ==================== Paired Comparison Tests ====================

class TestCompare:

    def test_per_repeat_accuracy_averages_tasks(self):
        """Test repeat accuracy is the mean over tasks"""
        assert per_repeat_accuracy(summary("vanilla", VANILLA))[0] == pytest.approx(0.75)

    def test_wins_and_one_sided_pvalues(self):
        """Test a candidate ahead on every repeat wins all of them with small p-values"""
        result = compare(summary("vanilla", VANILLA), summary("mt_cool", COOL))
        assert result.wins == 6
        assert result.repeats == 6
        assert result.mean_difference > 0
        assert 0.0 <= result.t_pvalue < 0.01
        assert 0.0 <= result.wilcoxon_pvalue < 0.05
        assert result.t_statistic > 0

    def test_reversed_pair_has_large_pvalues(self):
        """Test swapping candidate and baseline flips the one-sided test"""
        result = compare(summary("mt_cool", COOL), summary("vanilla", VANILLA))
        assert result.wins == 0
        assert result.t_pvalue > 0.99
        assert result.wilcoxon_pvalue > 0.95

    def test_ties_count_as_wins(self):
        """Test identical runs win every repeat and report p = 1"""
        result = compare(summary("vanilla", VANILLA), summary("no_reg", VANILLA))
        assert result.wins == 6
        assert result.mean_difference == 0.0
        assert (result.t_statistic, result.t_pvalue, result.wilcoxon_pvalue) == (None, 1.0, 1.0)

    def test_constant_difference(self):
        """Test a constant positive shift has t p-value 0 and no t statistic"""
        base = [[0.5, 0.625, 0.75, 0.5, 0.25, 0.375]]
        shifted = [[v + 0.125 for v in base[0]]]
        result = compare(summary("vanilla", base), summary("mt_cool", shifted))
        assert result.t_statistic is None
        assert result.t_pvalue == 0.0
        assert result.wilcoxon_pvalue < 0.05

    def test_single_repeat_has_no_statistics(self):
        """Test one repeat gives wins but no p-values"""
        result = compare(summary("vanilla", [[0.5]]), summary("mt_cool", [[0.6]]))
        assert result.wins == 1
        assert (result.t_statistic, result.t_pvalue, result.wilcoxon_pvalue) == (None, None, None)

    def test_different_seeds_rejected(self):
        """Test runs with different seeds cannot be paired"""
        with pytest.raises(ComparisonError, match="different seeds"):
            compare(summary("vanilla", VANILLA), summary("mt_cool", COOL, seeds=[9, 8, 7, 6, 5, 4]))

    def test_missing_accuracy_rejected(self):
        """Test a summary without accuracies cannot be compared"""
        empty = summary("vanilla", VANILLA).model_copy(update={"accuracy": []})
        with pytest.raises(ComparisonError, match="no accuracies"):
            compare(empty, summary("mt_cool", COOL))


# ==================== Ladder Tests ====================

class TestLadder:

    def test_consecutive_pairs_then_ends(self):
        """Test three summaries give two neighbour comparisons and first against last"""
        no_reg = [[(a + b) / 2 for a, b in zip(v, c)] for v, c in zip(VANILLA, COOL)]
        ladder = compare_ladder([summary("vanilla", VANILLA), summary("no_reg", no_reg), summary("mt_cool", COOL)])
        assert [(c.baseline.split("/")[1], c.candidate.split("/")[1]) for c in ladder] == [
            ("vanilla", "no_reg"), ("no_reg", "mt_cool"), ("vanilla", "mt_cool")]

    def test_needs_two_summaries(self):
        """Test a single summary has nothing to compare against"""
        with pytest.raises(ComparisonError):
            compare_ladder([summary("vanilla", VANILLA)])

    def test_written_json_validates(self, tmp_path):
        """Test comparison.json reloads as PairedComparison entries"""
        ladder = compare_ladder([summary("vanilla", VANILLA), summary("mt_cool", COOL)])
        path = write_comparisons(ladder, tmp_path / "comparison.json")
        restored = [PairedComparison.model_validate(c) for c in json.loads(path.read_text())]
        assert restored == ladder


# ==================== Summary Loading Tests ====================

class TestLoadSummary:

    def test_load_from_directory(self, tmp_path):
        """Test a run directory resolves to its summary.json"""
        original = summary("vanilla", VANILLA)
        (tmp_path / "summary.json").write_text(original.model_dump_json())
        assert load_summary(tmp_path) == original

    def test_foreign_json_rejected(self, tmp_path):
        """Test JSON that is not a run summary raises ComparisonError"""
        path = tmp_path / "summary.json"
        path.write_text('{"name": "x"}')
        with pytest.raises(ComparisonError, match="not a run summary"):
            load_summary(path)
