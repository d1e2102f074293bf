"""Tests for the class-incremental task stream."""

import numpy as np
import pytest

from exacfs.datasets import generate_synthetic
from exacfs.errors import ContractError
from exacfs.stream import build_task_stream


def _dataset(classes):
    return generate_synthetic("blobs", classes, samples_per_class=5, separation=2.0, noise=1.0, seed=0, dims=4)


@pytest.mark.parametrize("classes, base, increment, tasks", [(10, 5, 1, 6), (100, 50, 10, 6), (10, 2, 2, 5)])
def test_task_count(classes, base, increment, tasks):
    assert len(build_task_stream(_dataset(classes), base, increment, ordering_seed=0)) == tasks


def test_increment_must_divide_the_rest():
    with pytest.raises(ContractError, match="increments of 3"):
        build_task_stream(_dataset(10), 5, 3, ordering_seed=0)


def test_base_larger_than_dataset():
    with pytest.raises(ContractError):
        build_task_stream(_dataset(4), 5, 1, ordering_seed=0)


def test_tasks_own_contiguous_disjoint_classes():
    stream = build_task_stream(_dataset(10), 4, 2, ordering_seed=3)
    seen = []
    for t, task in enumerate(stream.tasks):
        assert task.classes == tuple(range(len(seen), stream.classes_seen(t)))
        assert not set(seen) & set(task.classes)
        seen += task.classes
        assert set(stream.train_y[task.train_idx].tolist()) == set(task.classes)
        assert set(stream.test_y[task.test_idx].tolist()) == set(task.classes)
    assert seen == list(range(10))


def test_ordering_maps_ids_back_to_dataset_labels():
    dataset = _dataset(6)
    stream = build_task_stream(dataset, 2, 2, ordering_seed=9)
    assert sorted(stream.ordering) == list(range(6))
    original = np.asarray(stream.ordering)[stream.train_y]
    np.testing.assert_array_equal(original, dataset.train_y)


def test_ordering_is_seeded():
    dataset = _dataset(10)
    assert build_task_stream(dataset, 5, 1, 4).ordering == build_task_stream(dataset, 5, 1, 4).ordering


def test_train_data():
    stream = build_task_stream(_dataset(6), 2, 2, ordering_seed=0)
    x, y = stream.train_data(1)
    assert len(x) == len(y) == 2 * 4
    assert set(y.tolist()) == {2, 3}
