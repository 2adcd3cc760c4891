"""
Reproducciones a escala de escritorio. Las marcadas ``slow`` tardan minutos:
FEDSIM_RUN_SLOW=1 pytest -m slow
"""

import math
from pathlib import Path

import numpy as np
import pytest

from fedsim import aggregation as agg
from fedsim import attacks
from fedsim.config import load_config_file
from fedsim.experiments import run_experiment
from fedsim.results import emit_results

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _lie_oracle(p: float) -> float:
    lo, hi = -10.0, 10.0
    for _ in range(200):
        mid = (lo + hi) / 2
        lo, hi = (mid, hi) if 0.5 * (1 + math.erf(mid / math.sqrt(2))) < p else (lo, mid)
    return (lo + hi) / 2


def test_robust_mean_over_many_seeds():
    n, d, eps = 200, 10, 0.2
    bound = 4 * math.sqrt(eps)
    bad = int(eps * n)
    filtered_ok = 0
    mean_ok = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        mu = rng.standard_normal(d)
        points = mu + rng.standard_normal((n, d))
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        points[:bad] = mu + 50.0 * direction
        out = agg.agg_cronus([row[None, :] for row in points], eps)
        filtered_ok += np.linalg.norm(out.matrix[0] - mu) <= bound
        mean_ok += np.linalg.norm(points.mean(axis=0) - mu) <= bound
    assert filtered_ok >= 95
    assert mean_ok == 0


def test_krum_oracle_on_random_instances():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(4, 9))
        d = int(rng.integers(1, 5))
        eps = float(rng.choice([0.0, 0.125]))
        x = rng.standard_normal((n, d))
        k = math.floor((1 - eps) * n + 1e-9) - 2
        scores = [
            sum(sorted(float(np.sum((x[i] - x[j]) ** 2)) for j in range(n) if j != i)[:k])
            for i in range(n)
        ]
        _, idx = agg.agg_krum(agg.AggregationInput(x, epsilon=eps))
        assert idx == int(np.argmin(scores))


def test_lie_arithmetic_for_ten_parties():
    z = attacks.lie_z(10, 2)
    assert z == pytest.approx(_lie_oracle(0.6), abs=1e-4)
    assert z == pytest.approx(0.2533, abs=1e-4)
    rng = np.random.default_rng(1)
    benign = rng.standard_normal((8, 5))
    crafted = attacks.attack_lie(list(benign), 10, 2)
    expected = benign.mean(axis=0) + z * benign.std(axis=0)
    for upd in crafted.updates:
        assert np.max(np.abs(upd - expected)) < 1e-12


# ---------------------------------------------------------------------------
# Ejecuciones completas
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def cronus_outcome():
    return run_experiment(load_config_file(CONFIGS / "desk_benchmark.env"), workers=1)


@pytest.mark.slow
def test_fedavg_mean_collapses():
    outcome = run_experiment(load_config_file(CONFIGS / "desk_fedavg.env"), workers=1)
    assert outcome.report.robustness <= 0.3


@pytest.mark.slow
def test_cronus_is_robust(cronus_outcome):
    report = cronus_outcome.report
    assert set(report.per_attack_accuracy) == {"label_flip", "paf", "lie", "ofom"}
    assert report.robustness >= 0.90


@pytest.mark.slow
def test_cronus_beats_standalone(cronus_outcome):
    report = cronus_outcome.report
    assert report.benign_accuracy >= report.standalone_accuracy + 0.03


@pytest.mark.slow
def test_outputs_identical_across_worker_counts(cronus_outcome, tmp_path):
    cfg = load_config_file(CONFIGS / "desk_benchmark.env")
    again = run_experiment(cfg, workers=4)
    a = emit_results(cronus_outcome.runs, cronus_outcome.report, tmp_path / "a")
    b = emit_results(again.runs, again.report, tmp_path / "b")
    assert a["rounds"].read_bytes() == b["rounds"].read_bytes()
    assert a["report"].read_bytes() == b["report"].read_bytes()


@pytest.mark.slow
def test_heterogeneous_collaboration():
    mixed = run_experiment(load_config_file(CONFIGS / "heterogeneous.env", {
        "model.groups": "32:12,linear:4",
    }), workers=1).report
    homogeneous = run_experiment(load_config_file(CONFIGS / "heterogeneous.env", {
        "model.groups": "32:12",
        "dataset.synthetic.parties": 12,
        "standalone": False,
    }), workers=1).report
    assert mixed.group_accuracy["linear"] >= mixed.standalone_group_accuracy["linear"] + 0.03
    assert mixed.group_accuracy["32"] > homogeneous.group_accuracy["32"] - 0.02


@pytest.mark.slow
def test_public_subsampling_keeps_accuracy():
    overrides = {"attack_sweep": "none", "standalone": False}
    full = run_experiment(load_config_file(CONFIGS / "desk_benchmark.env", overrides), workers=1)
    sub = run_experiment(load_config_file(CONFIGS / "desk_benchmark.env", {
        **overrides, "protocol.public_subset_per_round": 100,
    }), workers=1)
    assert abs(full.report.benign_accuracy - sub.report.benign_accuracy) < 0.02
