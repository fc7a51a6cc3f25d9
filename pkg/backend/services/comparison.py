"""
Paired Comparisons
Compares run summaries repeat by repeat (shared seeds) with paired t and
Wilcoxon signed-rank tests, and writes the results as comparison.json.
"""

import json
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import ValidationError
from scipy import stats

from schemas.experiment import PairedComparison, RunSummary

logger = logging.getLogger(__name__)

COMPARISON_FILE = "comparison.json"


class ComparisonError(ValueError):
    """Summaries cannot be paired: no accuracies, different repeat counts or different seeds"""
    pass


def label(summary: RunSummary) -> str:
    return f"{summary.name}/{summary.method.value}/lambda={summary.lam:g}"


def per_repeat_accuracy(summary: RunSummary) -> np.ndarray:
    """Final accuracy of each repeat averaged over tasks"""
    if not summary.accuracy:
        raise ComparisonError(f"{label(summary)} recorded no accuracies")
    return np.mean([stat.values for stat in summary.accuracy], axis=0)


def _paired_tests(candidate: np.ndarray,
                  baseline: np.ndarray) -> Tuple[Optional[float], Optional[float], Optional[float]]:
    """(t statistic, one-sided t p-value, one-sided Wilcoxon p-value) of candidate > baseline"""
    diff = candidate - baseline
    if diff.size < 2:
        return None, None, None
    if not np.any(diff):
        return None, 1.0, 1.0
    if np.ptp(diff) == 0.0:
        t_pvalue = 0.0 if diff[0] > 0 else 1.0
        t_statistic = None
    else:
        result = stats.ttest_rel(candidate, baseline, alternative="greater")
        t_statistic, t_pvalue = float(result.statistic), float(result.pvalue)
    try:
        wilcoxon_pvalue = float(stats.wilcoxon(candidate, baseline, alternative="greater").pvalue)
    except ValueError as e:
        logger.warning(f"Wilcoxon test skipped: {e}")
        wilcoxon_pvalue = None
    return t_statistic, t_pvalue, wilcoxon_pvalue


def compare(baseline: RunSummary, candidate: RunSummary) -> PairedComparison:
    if baseline.seeds != candidate.seeds:
        raise ComparisonError(f"{label(candidate)} and {label(baseline)} were run with different seeds")
    base = per_repeat_accuracy(baseline)
    cand = per_repeat_accuracy(candidate)
    if base.shape != cand.shape:
        raise ComparisonError(f"{label(candidate)} has {cand.size} repeats, {label(baseline)} has {base.size}")
    diff = cand - base
    t_statistic, t_pvalue, wilcoxon_pvalue = _paired_tests(cand, base)
    return PairedComparison(
        baseline=label(baseline),
        candidate=label(candidate),
        repeats=int(diff.size),
        seeds=list(baseline.seeds),
        baseline_mean=float(base.mean()),
        candidate_mean=float(cand.mean()),
        mean_difference=float(diff.mean()),
        wins=int(np.sum(cand >= base)),
        t_statistic=t_statistic,
        t_pvalue=t_pvalue,
        wilcoxon_pvalue=wilcoxon_pvalue,
    )


def compare_ladder(summaries: Sequence[RunSummary]) -> List[PairedComparison]:
    """Each summary against the one before it, then the last against the first"""
    if len(summaries) < 2:
        raise ComparisonError("a comparison needs at least two summaries")
    comparisons = [compare(a, b) for a, b in zip(summaries, summaries[1:])]
    if len(summaries) > 2:
        comparisons.append(compare(summaries[0], summaries[-1]))
    for c in comparisons:
        logger.info(f"{c.candidate} vs {c.baseline}: {c.wins}/{c.repeats} wins, "
                    f"mean difference {100 * c.mean_difference:+.2f} points, t p={c.t_pvalue}, "
                    f"Wilcoxon p={c.wilcoxon_pvalue}")
    return comparisons


def write_comparisons(comparisons: Sequence[PairedComparison], path: Path) -> Path:
    path = Path(path)
    path.write_text(json.dumps([c.model_dump(mode="json") for c in comparisons], indent=2), encoding="utf-8")
    logger.info(f"Wrote {path}")
    return path


def load_summary(path: Path) -> RunSummary:
    """Read summary.json from a run directory (or the file itself)"""
    path = Path(path)
    if path.is_dir():
        path = path / "summary.json"
    try:
        return RunSummary.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise ComparisonError(f"{path}: not a run summary ({e.error_count()} errors)") from e
