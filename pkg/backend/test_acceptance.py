"""
Statistical acceptance checks; slow, deselected by default (run with -m slow)
"""

import json
from pathlib import Path

import pytest

from schemas.experiment import Method
from services.comparison import compare_ladder, write_comparisons
from services.harness import parse_config, run, validate_config
from settings import get_settings

pytestmark = pytest.mark.slow

SYNTHETIC_CONFIG = Path(__file__).resolve().parent.parent / "configs" / "synthetic.yaml"


def synthetic(method, tmp_path):
    """The shipped synthetic experiment with only the method swapped"""
    config = validate_config(SYNTHETIC_CONFIG)
    config = config.model_copy(update={"name": method, "method": Method(method), "write_report": False})
    return run(config, tmp_path)[0]


# ==================== Synthetic Benchmark ====================

def test_ablation_ordering(tmp_path):
    """Test MT-COOL matches or beats Vanilla on at least 9 of 10 paired repeats and reports the ladder"""
    ladder = [synthetic(method, tmp_path) for method in ("vanilla", "no_reg", "mt_cool")]
    comparisons = compare_ladder(ladder)
    path = write_comparisons(comparisons, tmp_path / "comparison.json")

    written = json.loads(path.read_text())
    assert [(c["baseline"].split("/")[1], c["candidate"].split("/")[1]) for c in written] == [
        ("vanilla", "no_reg"), ("no_reg", "mt_cool"), ("vanilla", "mt_cool")]
    assert all(0.0 <= c["t_pvalue"] <= 1.0 and 0.0 <= c["wilcoxon_pvalue"] <= 1.0 for c in written)
    cool_vs_vanilla = written[-1]
    assert cool_vs_vanilla["repeats"] == 10
    assert cool_vs_vanilla["wins"] >= 9


def test_negative_transfer_lower_than_vanilla(tmp_path):
    """Test cooperative updates cause fewer cross-task loss increases"""
    cool = synthetic("mt_cool", tmp_path)
    vanilla = synthetic("vanilla", tmp_path)
    assert cool.negative_transfer_rate.mean < vanilla.negative_transfer_rate.mean


# ==================== MNIST ====================

def mnist_config(method, subset, repeats):
    data_dir = get_settings().data_dir
    paths = {
        "train_images": data_dir / "train-images-idx3-ubyte.gz",
        "train_labels": data_dir / "train-labels-idx1-ubyte.gz",
        "test_images": data_dir / "t10k-images-idx3-ubyte.gz",
        "test_labels": data_dir / "t10k-labels-idx1-ubyte.gz",
    }
    if not all(p.exists() for p in paths.values()):
        pytest.skip(f"MNIST files not found in {data_dir}; run `python main.py fetch-mnist`")
    return parse_config({
        "name": f"mnist_{method}", "method": method, "repeats": repeats, "workers": repeats,
        "train": {"outer_iters": 300, "T_w": 235, "batch_size": 128, "eval_every": 1},
        "dataset": {"kind": "mnist_even_odd", "mnist": {**{k: str(v) for k, v in paths.items()},
                                                         "train_subset": subset}},
    })


def test_mnist_smoke_subset(tmp_path):
    """Test the 10k-image subset reaches 97.5% on both tasks"""
    summary = run(mnist_config("mt_cool", 10000, 1), tmp_path)[0]
    assert all(stat.mean >= 0.975 for stat in summary.accuracy)


def test_mnist_reproduction(tmp_path):
    """Test five full repeats reach 99.3% / 99.0% and beat Vanilla on both tasks"""
    cool = run(mnist_config("mt_cool", None, 5), tmp_path)[0]
    vanilla = run(mnist_config("vanilla", None, 5), tmp_path)[0]
    assert cool.accuracy[0].mean >= 0.993
    assert cool.accuracy[1].mean >= 0.990
    assert all(c.mean >= v.mean for c, v in zip(cool.accuracy, vanilla.accuracy))
