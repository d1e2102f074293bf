"""Tests for class-wise significance estimation and aging."""

import logging

import numpy as np
import pytest

from exacfs.config import NetworkConfig
from exacfs.errors import ContractError, DimensionError
from exacfs.network import IncrementalNet
from exacfs.significance import (
    Accumulator,
    SignificanceTable,
    accumulate,
    collapse_gradient,
    ema_update,
    estimate_task_significance,
    finalize,
    load_significance,
    normalize,
)


def test_collapse_averages_the_grid():
    grad = np.stack([np.ones((2, 2)), np.arange(4.0).reshape(2, 2)])
    np.testing.assert_allclose(collapse_gradient(grad), [1.0, 1.5])


def test_collapse_passes_dense_gradients():
    np.testing.assert_array_equal(collapse_gradient(np.array([3.0, -1.0])), [3.0, -1.0])


def test_collapse_rejects_other_ranks():
    with pytest.raises(DimensionError):
        collapse_gradient(np.ones((2, 2)))


def test_accumulate_and_finalize_average_squares():
    acc = Accumulator.empty([2], num_classes=2)
    accumulate(acc, [np.array([1.0, 2.0])], 0)
    accumulate(acc, [np.array([3.0, 0.0])], 0)
    accumulate(acc, [np.array([0.0, 1.0])], 1)
    (raw,) = finalize(acc)
    np.testing.assert_allclose(raw, [[5.0, 2.0], [0.0, 1.0]])


def test_accumulate_checks_label_and_shape():
    acc = Accumulator.empty([2], num_classes=2)
    with pytest.raises(ContractError):
        accumulate(acc, [np.zeros(2)], 2)
    with pytest.raises(DimensionError):
        accumulate(acc, [np.zeros(3)], 0)


def test_finalize_needs_every_class():
    acc = Accumulator.empty([2], num_classes=2)
    accumulate(acc, [np.ones(2)], 0)
    with pytest.raises(ContractError, match=r"\[1\]"):
        finalize(acc)


def test_normalized_columns_sum_to_one():
    raw = [np.random.default_rng(0).uniform(0.1, 5.0, size=(4, 7))]
    (table,) = normalize(raw)
    np.testing.assert_allclose(table.sum(axis=0), 1.0, atol=1e-9)


def test_all_zero_column_becomes_uniform(caplog):
    raw = [np.array([[0.0, 1.0], [0.0, 3.0], [0.0, 0.0]])]
    with caplog.at_level(logging.WARNING, logger="exacfs"):
        (table,) = normalize(raw)
    np.testing.assert_allclose(table[:, 0], 1.0 / 3.0)
    np.testing.assert_allclose(table[:, 1], [0.25, 0.75, 0.0])
    assert "degenerate" in caplog.text


def test_negative_significance_is_rejected():
    with pytest.raises(ContractError):
        normalize([np.array([[-1.0], [2.0]])])


class TestEmaUpdate:
    def test_base_case_takes_fresh_values(self):
        fresh = [np.array([[0.25, 0.5], [0.75, 0.5]])]
        table = ema_update(None, fresh, 0.4)
        assert table.task_id == 0
        np.testing.assert_array_equal(table.stages[0], fresh[0])

    def test_blend_of_old_classes(self):
        rng = np.random.default_rng(1)
        old = SignificanceTable([normalize([rng.uniform(size=(2, 3))])[0]], 0.4, 0)
        fresh = normalize([rng.uniform(size=(3, 3))])
        table = ema_update(old, fresh, 0.4)
        expected = 0.4 * old.stages[0] + 0.6 * fresh[0][:2]
        np.testing.assert_allclose(table.stages[0][:2], expected, atol=1e-12)
        np.testing.assert_array_equal(table.stages[0][2], fresh[0][2])
        assert table.task_id == 1

    def test_equal_inputs_stay_equal(self):
        values = np.array([[0.1, 0.7], [0.9, 0.3]])
        table = ema_update(SignificanceTable([values], 0.4, 0), [values.copy()], 0.4)
        np.testing.assert_array_equal(table.stages[0], values)

    def test_beta_out_of_range(self):
        with pytest.raises(ContractError):
            ema_update(None, [np.ones((1, 1))], 1.5)

    def test_fresh_table_must_cover_history(self):
        old = SignificanceTable([np.full((3, 2), 1 / 3)], 0.4, 0)
        with pytest.raises(DimensionError):
            ema_update(old, [np.full((2, 2), 0.5)], 0.4)


def test_weights_rejects_uncovered_labels():
    table = SignificanceTable([np.full((2, 3), 0.5)], 0.4, 0)
    assert table.weights(1, [1, 0]).shape == (2, 3)
    with pytest.raises(ContractError):
        table.weights(1, [2])


def test_uniform_table():
    table = SignificanceTable([np.array([[0.9], [0.1]]), np.array([[0.2, 0.3], [0.8, 0.7]])], 0.4, 2)
    uniform = table.uniform()
    assert uniform.task_id == 2
    for stage in uniform.stages:
        np.testing.assert_array_equal(stage, 0.5)


def test_save_and_load(tmp_path):
    table = SignificanceTable([np.array([[0.9], [0.1]]), np.array([[0.2, 0.3], [0.8, 0.7]])], 0.4, 2)
    table.save(tmp_path / "sig.bin")
    loaded = load_significance(tmp_path / "sig.bin")
    assert loaded.beta == 0.4 and loaded.task_id == 2
    for a, b in zip(loaded.stages, table.stages):
        np.testing.assert_array_equal(a, b)


def test_csv_lists_every_entry(tmp_path):
    table = SignificanceTable([np.array([[0.9], [0.1]]), np.array([[0.2, 0.3], [0.8, 0.7]])], 0.4, 0)
    table.write_csv(tmp_path / "sig.csv")
    lines = (tmp_path / "sig.csv").read_text().splitlines()
    assert lines[0] == "stage,component,class,value"
    assert len(lines) == 1 + 2 + 4
    assert lines[1] == "1,0,0,0.9"


def test_estimate_on_a_small_model():
    config = NetworkConfig(stages=[(3, 1, 1)], embed_dim=4)
    model = IncrementalNet(config, (5, 1, 1), seed=2)
    model.grow(3)
    rng = np.random.default_rng(0)
    inputs = rng.normal(size=(30, 5, 1, 1))
    labels = np.repeat(np.arange(3), 10)
    table = estimate_task_significance(model, inputs, labels, None, 0.4, batch_size=7)
    assert [stage.shape for stage in table.stages] == [(3, 3), (3, 4)]
    for stage in table.stages:
        np.testing.assert_allclose(stage.sum(axis=0), 1.0, atol=1e-9)
    assert all(p.grad is None for p in model.parameters())


def _separated_model() -> IncrementalNet:
    """Identity stage and embedder; proxies point along the two components."""
    model = IncrementalNet(NetworkConfig(stages=[(2, 1, 1)], embed_dim=2, eta=10.0), (2, 1, 1), seed=0)
    model.grow(2)
    model.params["stage1.weight"].data = np.eye(2).reshape(2, 2, 1, 1)
    model.params["stage1.bias"].data = np.zeros((2, 1, 1))
    model.params["embed.weight"].data = np.eye(2)
    model.params["embed.bias"].data = np.zeros(2)
    model.params["classifier.proxies"].data = np.array([[0.0, 1.0], [1.0, 0.0]])
    return model


def _separated_data(seed: int, per_class: int = 20):
    """Class 0 sits near (0, 1) and class 1 near (1, 0); component 0 tells them apart."""
    rng = np.random.default_rng(seed)
    small = 0.05 * np.abs(rng.normal(size=(2, per_class)))
    jitter = 0.05 * np.abs(rng.normal(size=(2, per_class)))
    class0 = np.stack([small[0], 1.0 + jitter[0]], axis=1)
    class1 = np.stack([1.0 + jitter[1], small[1]], axis=1)
    inputs = np.concatenate([class0, class1]).reshape(-1, 2, 1, 1)
    return inputs, np.repeat([0, 1], per_class)


def test_significance_marks_the_component_the_loss_depends_on():
    hits = 0
    for seed in range(20):
        inputs, labels = _separated_data(seed)
        table = estimate_task_significance(_separated_model(), inputs, labels, None, 0.4)
        hits += all(stage[0, 0] > stage[1, 0] for stage in table.stages)
    assert hits >= 19


def _small_problem(seed: int = 0):
    model = IncrementalNet(NetworkConfig(stages=[(3, 1, 1)], embed_dim=4), (5, 1, 1), seed=2)
    model.grow(3)
    rng = np.random.default_rng(seed)
    return model, rng.normal(size=(30, 5, 1, 1)), np.repeat(np.arange(3), 10)


def test_estimate_ignores_sample_order():
    model, inputs, labels = _small_problem()
    order = np.random.default_rng(4).permutation(len(labels))
    base = estimate_task_significance(model, inputs, labels, None, 0.4, batch_size=8)
    shuffled = estimate_task_significance(model, inputs[order], labels[order], None, 0.4, batch_size=8)
    for a, b in zip(base.stages, shuffled.stages):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)


def test_estimate_ignores_duplicated_samples():
    model, inputs, labels = _small_problem()
    base = estimate_task_significance(model, inputs, labels, None, 0.4)
    doubled = estimate_task_significance(
        model, np.concatenate([inputs, inputs]), np.concatenate([labels, labels]), None, 0.4
    )
    for a, b in zip(base.stages, doubled.stages):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-14)


@pytest.mark.parametrize("scale", [1.5, 4.0])
def test_larger_gradients_raise_a_class_share(scale):
    rng = np.random.default_rng(6)
    grads = [(rng.normal(size=(2, 2, 2)), rng.normal(size=3)) for _ in range(12)]
    labels = [k % 3 for k in range(12)]

    def table(factor):
        acc = Accumulator.empty([2, 3], 3)
        for (conv, dense), label in zip(grads, labels):
            weight = factor if label == 0 else 1.0
            accumulate(acc, [weight * conv, weight * dense], label)
        return normalize(finalize(acc))

    for base, scaled in zip(table(1.0), table(scale)):
        assert np.all(scaled[0] > base[0])
        assert np.all(scaled[1:] < base[1:])


def test_constant_fresh_values_unroll_to_themselves():
    values = normalize([np.random.default_rng(8).uniform(size=(3, 4))])
    table = ema_update(None, values, 0.4)
    for _ in range(10):
        table = ema_update(table, [stage.copy() for stage in values], 0.4)
    np.testing.assert_array_equal(table.stages[0], values[0])
    assert table.task_id == 10


def test_history_decays_geometrically_toward_constant_fresh_values():
    rng = np.random.default_rng(9)
    start = normalize([rng.uniform(size=(3, 4))])
    values = normalize([rng.uniform(size=(3, 4))])
    table = ema_update(None, start, 0.4)
    for _ in range(6):
        table = ema_update(table, values, 0.4)
    expected = 0.4**6 * start[0] + (1 - 0.4**6) * values[0]
    np.testing.assert_allclose(table.stages[0], expected, rtol=0, atol=1e-12)
