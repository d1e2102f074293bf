"""Tests for synthetic generators and dataset files."""

import numpy as np
import pytest

from exacfs.config import DatasetConfig
from exacfs.datasets import (
    generate_synthetic,
    load_binary_dataset,
    load_csv_dataset,
    load_dataset,
    write_binary_dataset,
    write_csv_dataset,
)
from exacfs.errors import ContractError, FormatError


def test_blobs_split_per_class():
    dataset = generate_synthetic("blobs", classes=3, samples_per_class=10, separation=4.0, noise=1.0, seed=0, dims=5)
    assert dataset.train_x.shape == (24, 5, 1, 1)
    assert dataset.test_x.shape == (6, 5, 1, 1)
    assert dataset.input_shape == (5, 1, 1)
    np.testing.assert_array_equal(np.bincount(dataset.train_y), [8, 8, 8])
    np.testing.assert_array_equal(np.bincount(dataset.test_y), [2, 2, 2])


def test_patches_shape():
    dataset = generate_synthetic("patches", 4, 5, 1.0, 0.1, seed=1, shape=(2, 6, 6))
    assert dataset.input_shape == (2, 6, 6)
    assert dataset.num_classes == 4


def test_generation_is_seeded():
    a = generate_synthetic("blobs", 3, 10, 4.0, 1.0, seed=5)
    b = generate_synthetic("blobs", 3, 10, 4.0, 1.0, seed=5)
    c = generate_synthetic("blobs", 3, 10, 4.0, 1.0, seed=6)
    assert a.train_x.tobytes() == b.train_x.tobytes()
    assert a.train_x.tobytes() != c.train_x.tobytes()


@pytest.mark.parametrize(
    "kind, classes, samples", [("blobs", 1, 10), ("blobs", 3, 4), ("rings", 3, 10)]
)
def test_generator_preconditions(kind, classes, samples):
    with pytest.raises(ContractError):
        generate_synthetic(kind, classes, samples, 1.0, 1.0, seed=0)


def test_csv_file_is_relabeled(tmp_path):
    x = np.arange(40.0).reshape(10, 4)
    y = np.array([7] * 5 + [9] * 5)
    write_csv_dataset(tmp_path / "data.csv", x, y)
    dataset = load_csv_dataset(tmp_path / "data.csv", seed=0)
    assert dataset.num_classes == 2
    assert dataset.input_shape == (4, 1, 1)
    assert set(dataset.train_y.tolist()) == {0, 1}
    rows = {tuple(row) for row in dataset.train_x.reshape(-1, 4).tolist()}
    assert rows <= {tuple(row) for row in x.tolist()}


def test_csv_error_names_the_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("label,a\n0,1.0\n1,oops\n")
    with pytest.raises(FormatError) as excinfo:
        load_csv_dataset(path, seed=0)
    assert excinfo.value.line == 3
    assert "bad.csv:3" in str(excinfo.value)


def test_csv_inconsistent_width(tmp_path):
    path = tmp_path / "ragged.csv"
    path.write_text("0,1.0,2.0\n1,3.0\n")
    with pytest.raises(FormatError, match="inconsistent"):
        load_csv_dataset(path, seed=0)


def test_binary_file(tmp_path):
    x = np.random.default_rng(0).normal(size=(10, 1, 2, 2))
    y = np.repeat([0, 1], 5)
    write_binary_dataset(tmp_path / "data.exds", x, y)
    dataset = load_binary_dataset(tmp_path / "data.exds", seed=0)
    assert dataset.input_shape == (1, 2, 2)
    assert len(dataset.train_y) + len(dataset.test_y) == 10
    stored = {tuple(np.round(row, 5)) for row in x.reshape(10, -1).astype(np.float32).astype(np.float64)}
    loaded = {tuple(np.round(row, 5)) for row in dataset.train_x.reshape(-1, 4)}
    assert loaded <= stored


def test_binary_bad_magic(tmp_path):
    path = tmp_path / "data.exds"
    path.write_bytes(b"NOPE" + bytes(16))
    with pytest.raises(FormatError, match="magic"):
        load_binary_dataset(path, seed=0)


def test_binary_truncated(tmp_path):
    path = tmp_path / "data.exds"
    write_binary_dataset(path, np.zeros((5, 1, 1, 1)), np.zeros(5, dtype=int))
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(FormatError):
        load_binary_dataset(path, seed=0)


def test_declared_class_count_must_match(tmp_path):
    x = np.ones((10, 2))
    write_csv_dataset(tmp_path / "data.csv", x, np.repeat([0, 1], 5))
    cfg = DatasetConfig(kind="csv", classes=3, path=tmp_path / "data.csv")
    with pytest.raises(ContractError, match="declares 3"):
        load_dataset(cfg, seed=0)


def _linear_fit_accuracy(dataset) -> float:
    """Least-squares one-vs-rest linear classifier, scored on the test split."""

    def design(x):
        flat = x.reshape(len(x), -1)
        return np.hstack([flat, np.ones((len(flat), 1))])

    targets = np.eye(dataset.num_classes)[dataset.train_y]
    weights, *_ = np.linalg.lstsq(design(dataset.train_x), targets, rcond=None)
    predicted = np.argmax(design(dataset.test_x) @ weights, axis=1)
    return float(np.mean(predicted == dataset.test_y))


def test_well_separated_blobs_are_linearly_separable():
    dataset = generate_synthetic("blobs", classes=4, samples_per_class=200, separation=20.0, noise=1.0, seed=0, dims=8)
    assert _linear_fit_accuracy(dataset) >= 0.99


def test_blobs_without_separation_are_at_chance():
    dataset = generate_synthetic("blobs", classes=4, samples_per_class=2000, separation=0.0, noise=1.0, seed=0, dims=8)
    assert abs(_linear_fit_accuracy(dataset) - 0.25) <= 0.05
