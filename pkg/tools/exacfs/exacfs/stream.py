"""Class-incremental task stream over a dataset."""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from .datasets import Dataset
from .errors import ContractError


@dataclass(frozen=True)
class Task:
    index: int
    classes: Tuple[int, ...]
    train_idx: np.ndarray
    test_idx: np.ndarray


@dataclass(frozen=True)
class TaskStream:
    """Tasks with disjoint class sets.

    Class ids are relabeled by the ordering permutation so task t owns the
    contiguous ids [r^{t-1}, r^t); `ordering[i]` is the dataset label of id i.
    """

    tasks: List[Task]
    base_classes: int
    increment: int
    ordering: Tuple[int, ...]
    ordering_seed: int
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray

    def __len__(self) -> int:
        return len(self.tasks)

    def classes_seen(self, t: int) -> int:
        """r^t."""
        return self.base_classes + t * self.increment

    def train_data(self, t: int) -> Tuple[np.ndarray, np.ndarray]:
        idx = self.tasks[t].train_idx
        return self.train_x[idx], self.train_y[idx]


def build_task_stream(dataset: Dataset, base_classes: int, increment: int, ordering_seed: int) -> TaskStream:
    """Shuffle class ids by seed, then cut a base task and equal increments."""
    total = dataset.num_classes
    if not 1 <= base_classes <= total or increment < 1:
        raise ContractError(f"invalid split: base {base_classes}, increment {increment}, {total} classes")
    if (total - base_classes) % increment:
        raise ContractError(
            f"{total - base_classes} remaining classes do not divide into increments of {increment}"
        )
    ordering = np.random.default_rng(ordering_seed).permutation(total)
    relabel = np.empty(total, dtype=np.int64)
    relabel[ordering] = np.arange(total)
    train_y, test_y = relabel[dataset.train_y], relabel[dataset.test_y]

    bounds = [0, base_classes] + list(range(base_classes + increment, total + 1, increment))
    tasks: List[Task] = []
    for index, (low, high) in enumerate(zip(bounds[:-1], bounds[1:])):
        tasks.append(
            Task(
                index=index,
                classes=tuple(range(low, high)),
                train_idx=np.flatnonzero((train_y >= low) & (train_y < high)),
                test_idx=np.flatnonzero((test_y >= low) & (test_y < high)),
            )
        )
    return TaskStream(
        tasks=tasks,
        base_classes=base_classes,
        increment=increment,
        ordering=tuple(int(c) for c in ordering),
        ordering_seed=ordering_seed,
        train_x=dataset.train_x,
        train_y=train_y,
        test_x=dataset.test_x,
        test_y=test_y,
    )
