import json

import pytest
from pydantic import ValidationError

from fedsim import experiments as exp
from fedsim.config import build_config
from fedsim.errors import ConfigError
from fedsim.results import REPORT_FILE, ROUNDS_HEADER, emit_results, list_runs, load_report, safe_run_name


@pytest.mark.parametrize("benign,krum,bulyan", [(16, 13, 4), (28, 25, 8), (32, 29, 9)])
def test_breaking_points(benign, krum, bulyan):
    assert exp.breaking_point_malicious("krum", benign) == krum
    assert exp.breaking_point_malicious("bulyan", benign) == bulyan
    for rule in ("median", "mwu_avg", "mwu_opt", "cronus"):
        assert exp.breaking_point_malicious(rule, benign) == benign - 1
    assert exp.breaking_point_malicious("mean", benign) == 1


def test_breaking_point_unknown_rule():
    with pytest.raises(ConfigError):
        exp.breaking_point_malicious("geomed", 10)


def test_sample_complexity_ratio():
    assert exp.sample_complexity_ratio(10 ** 6, 10) == pytest.approx(6e5, rel=1e-12)
    assert exp.sample_complexity_ratio(50, 50) == 1.0
    with pytest.raises(ValueError):
        exp.sample_complexity_ratio(1, 10)


def test_build_report_rounds_and_picks_worst():
    report = exp.build_report("cronus", "cronus", 0.911, {"paf": 0.9, "lie": 0.898, "ofom": 0.898})
    assert report.worst_accuracy == 0.898
    assert report.strongest_attack == "lie"
    assert report.robustness == pytest.approx(0.985730, abs=1e-6)


def test_robustness_is_capped_at_one():
    report = exp.build_report("fedavg", "median", 0.8, {"paf": 0.85})
    assert report.robustness == 1.0


def test_report_without_attacks():
    report = exp.build_report("fedavg", "mean", 0.7, {})
    assert report.worst_accuracy is None
    assert report.robustness is None


def test_report_rejects_inconsistent_robustness():
    with pytest.raises(ValidationError):
        exp.RobustnessReport(
            protocol="cronus", aggregator="cronus", benign_accuracy=0.9,
            per_attack_accuracy={"paf": 0.45}, worst_accuracy=0.45,
            strongest_attack="paf", robustness=0.9,
        )


def test_run_experiment_sweep(tiny_flat, tmp_path):
    cfg = build_config(tiny_flat(**{
        "protocol.aggregator": "median",
        "attack_sweep": "paf,lie,ofom",
    }))
    outcome = exp.run_experiment(cfg, workers=1)
    report = outcome.report
    assert set(report.per_attack_accuracy) == {"paf", "lie", "ofom"}
    assert report.malicious_counts == {"paf": 3, "lie": 3, "ofom": 3}
    assert report.standalone_accuracy is not None
    assert 0.0 <= report.centralized_accuracy <= 1.0
    assert list(report.group_accuracy) == ["8"]
    assert [r.attack for r in outcome.runs] == ["none", "paf", "lie", "ofom"]

    paths = emit_results(outcome.runs, report, tmp_path / "run")
    lines = paths["rounds"].read_text(encoding="utf-8").splitlines()
    assert lines[0] == ",".join(ROUNDS_HEADER)
    assert len(lines) == 1 + 4 * 3 * 4
    assert load_report(tmp_path / "run") == report


def test_run_experiment_is_reproducible(tiny_flat, tmp_path):
    cfg = build_config(tiny_flat(**{"attack_sweep": "paf", "standalone": "false", "centralized": "false"}))
    first = exp.run_experiment(cfg, workers=1)
    second = exp.run_experiment(cfg, workers=2)
    a = emit_results(first.runs, first.report, tmp_path / "a")
    b = emit_results(second.runs, second.report, tmp_path / "b")
    assert a["report"].read_bytes() == b["report"].read_bytes()
    assert a["rounds"].read_bytes() == b["rounds"].read_bytes()
    assert first.report.standalone_accuracy is None
    assert first.report.centralized_accuracy is None


def test_ofom_runs_with_at_least_two_malicious(tiny_flat):
    # mean tolera una sola parte maliciosa; OFOM necesita dos
    cfg = build_config(tiny_flat(**{"attack_sweep": "lie,ofom", "standalone": "false"}))
    outcome = exp.run_experiment(cfg, workers=1)
    assert outcome.report.malicious_counts == {"lie": 1, "ofom": 2}
    assert outcome.report.skipped_attacks == []


def test_attack_skipped_when_rule_tolerates_no_malicious(tiny_flat):
    # Bulyan con 4 benignas no admite ninguna maliciosa
    cfg = build_config(tiny_flat(**{
        "protocol.aggregator": "bulyan",
        "protocol.epsilon_assumed": "0.0",
        "attack_sweep": "paf",
        "standalone": "false",
    }))
    outcome = exp.run_experiment(cfg, workers=1)
    assert outcome.report.skipped_attacks == ["paf"]
    assert outcome.report.per_attack_accuracy == {}
    assert outcome.report.robustness is None


def test_heterogeneous_groups_reported_separately(tiny_flat):
    cfg = build_config(tiny_flat(**{
        "protocol.protocol": "cronus",
        "protocol.aggregator": "cronus",
        "model.groups": "linear:2,8:2",
    }))
    outcome = exp.run_experiment(cfg, workers=1)
    assert set(outcome.report.group_accuracy) == {"linear", "8"}
    assert set(outcome.report.standalone_group_accuracy) == {"linear", "8"}


def test_grad_ascent_targets_are_split_in_halves(tiny_flat):
    cfg = build_config(tiny_flat(**{"protocol.threat.grad_targets": "7"}))
    split = exp.load_data(cfg)
    targets = exp.grad_ascent_targets(cfg, split)
    assert len(targets) == 6


def test_safe_run_name():
    assert safe_run_name("../../etc/passwd") == "passwd"
    assert safe_run_name("demo/") == "demo"
    with pytest.raises(ValueError):
        safe_run_name("..")


def test_list_runs(tmp_path):
    (tmp_path / "b").mkdir()
    (tmp_path / "b" / REPORT_FILE).write_text(json.dumps({}), encoding="utf-8")
    (tmp_path / "a").mkdir()
    (tmp_path / "a" / REPORT_FILE).write_text("{}", encoding="utf-8")
    (tmp_path / "empty").mkdir()
    runs = list_runs(tmp_path)
    assert [r["name"] for r in runs] == ["a", "b"]
    assert runs[0]["has_rounds"] is False
    assert list_runs(tmp_path / "missing") == []


def test_centralized_accuracy_is_deterministic(tiny_flat):
    cfg = build_config(tiny_flat(**{"protocol.rounds": "10"}))
    split = exp.load_data(cfg)
    pooled = exp.centralized_accuracy(cfg, split)
    assert pooled == exp.centralized_accuracy(cfg, split)
    assert pooled >= 0.8
