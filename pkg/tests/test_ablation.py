"""Tests for ablation studies."""

import pytest

from exacfs.ablation import STUDIES, run_ablation, study_arms
from exacfs.errors import ContractError


@pytest.mark.parametrize(
    "study, arms",
    [
        ("significance", ["exacfs", "uniform_significance"]),
        ("stages", ["all_stages", "last_stage_only"]),
        ("sampling", ["herding", "random", "closest_to_mean"]),
        ("budget", ["budget_5", "budget_10", "budget_20", "budget_50", "budget_100"]),
    ],
)
def test_study_arms(tiny_config, study, arms):
    result = study_arms(study, tiny_config)
    assert [arm for arm, _ in result] == arms
    for arm, cfg in result:
        assert cfg.run_label == arm
        assert cfg.seed == tiny_config.seed


def test_every_study_is_listed(tiny_config):
    for study in STUDIES:
        assert study_arms(study, tiny_config)


def test_arm_configs_differ_only_in_the_studied_field(tiny_config):
    arms = dict(study_arms("budget", tiny_config))
    assert arms["budget_50"].exemplars.budget == 50
    assert arms["budget_50"].optimizer == tiny_config.optimizer
    assert dict(study_arms("sampling", tiny_config))["random"].exemplars.strategy == "random"


def test_unknown_study(tiny_config):
    with pytest.raises(ContractError, match="unknown study"):
        study_arms("optimizers", tiny_config)


def test_run_writes_one_directory_per_arm(tmp_path, tiny_config):
    results = run_ablation("significance", tiny_config, tmp_path, timings=False)
    assert list(results) == ["exacfs", "uniform_significance"]
    for arm in results:
        assert (tmp_path / arm / "metrics.csv").exists()
    lines = (tmp_path / "comparison.csv").read_text().splitlines()
    assert lines[0] == "arm,avg_incremental_accuracy"
    assert lines[1] == f"exacfs,{results['exacfs'].average_incremental_accuracy()!r}"
    assert len(lines) == 3


@pytest.mark.slow
def test_parallel_arms_match_sequential(tmp_path, tiny_config):
    run_ablation("stages", tiny_config, tmp_path / "serial", jobs=1, timings=False)
    run_ablation("stages", tiny_config, tmp_path / "parallel", jobs=2, timings=False)
    for name in ("comparison.csv", "all_stages/metrics.csv", "last_stage_only/metrics.csv"):
        assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "parallel" / name).read_bytes()
