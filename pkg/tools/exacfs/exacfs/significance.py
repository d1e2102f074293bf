"""Class-wise feature significance estimated from per-sample loss gradients.

For class c and feature component q of stage j, the raw significance is the
mean over class-c samples of the squared loss gradient wrt that component (conv
gradients are first averaged over the h x w grid). Raw values are normalized
across classes per component and then blended into the history with an
exponential average.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, DimensionError, FormatError
from .network import IncrementalNet, stage_shapes
from .serialization import read_tensors, write_tensors

logger = logging.getLogger(__name__)

GradLike = Union[Tensor, np.ndarray]


@dataclass
class Accumulator:
    """Running sums of squared collapsed gradients, one (classes x d_j) matrix per stage."""

    sums: List[np.ndarray]
    counts: np.ndarray

    @classmethod
    def empty(cls, stage_dims: Sequence[int], num_classes: int) -> "Accumulator":
        return cls(
            sums=[np.zeros((num_classes, dim)) for dim in stage_dims],
            counts=np.zeros(num_classes, dtype=np.int64),
        )

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]


def collapse_gradient(grad: GradLike) -> np.ndarray:
    """Grid-average a (d,h,w) conv gradient to (d,); dense (d,) gradients pass through."""
    array = grad.data if isinstance(grad, Tensor) else np.asarray(grad, dtype=np.float64)
    if array.ndim == 3:
        return array.mean(axis=(1, 2))
    if array.ndim == 1:
        return array
    raise DimensionError(f"per-sample feature gradient must be (d,h,w) or (d,), got {array.shape}")


def accumulate(acc: Accumulator, grads: Sequence[GradLike], label: int) -> None:
    """Add one sample's squared collapsed gradients to its class row."""
    if len(grads) != len(acc.sums):
        raise DimensionError(f"expected {len(acc.sums)} stage gradients, got {len(grads)}")
    if not 0 <= label < acc.num_classes:
        raise ContractError(f"label {label} outside 0..{acc.num_classes - 1}")
    for stage, (grad, sums) in enumerate(zip(grads, acc.sums), start=1):
        collapsed = collapse_gradient(grad)
        if collapsed.shape != (sums.shape[1],):
            raise DimensionError(
                f"stage {stage}: gradient {np.shape(grad)} collapses to {collapsed.shape}, "
                f"expected ({sums.shape[1]},)"
            )
        sums[label] += collapsed * collapsed
    acc.counts[label] += 1


def finalize(acc: Accumulator) -> List[np.ndarray]:
    """Per-class means of the accumulated squared gradients."""
    missing = np.flatnonzero(acc.counts == 0).tolist()
    if missing:
        raise ContractError(f"no samples seen for classes {missing}")
    return [sums / acc.counts[:, None] for sums in acc.sums]


def normalize(raw: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Divide every component by its sum over classes so each column sums to 1.

    An all-zero column becomes uniform 1/r and is reported as degenerate.
    """
    normalized = []
    for stage, table in enumerate(raw, start=1):
        if np.any(table < 0):
            raise ContractError(f"stage {stage}: significances must be nonnegative")
        totals = table.sum(axis=0)
        degenerate = totals <= 0
        if np.any(degenerate):
            logger.warning(
                "stage %d: %d degenerate significance components (all-zero), using 1/%d",
                stage,
                int(degenerate.sum()),
                table.shape[0],
            )
        safe = np.where(degenerate, 1.0, totals)
        normalized.append(np.where(degenerate, 1.0 / table.shape[0], table / safe))
    return normalized


@dataclass
class SignificanceTable:
    """Aged, normalized significances: one (classes x d_j) matrix per stage j = 1..L."""

    stages: List[np.ndarray]
    beta: float
    task_id: int

    @property
    def num_classes(self) -> int:
        return self.stages[0].shape[0]

    def weights(self, stage: int, labels: Sequence[int]) -> np.ndarray:
        """Rows of stage `stage` (1-based) for the given old-class labels."""
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ContractError(
                f"labels {sorted(set(labels.tolist()))} not all covered by a table of {self.num_classes} classes"
            )
        return self.stages[stage - 1][labels]

    def uniform(self) -> "SignificanceTable":
        """Same shape, every entry 1/r (class-agnostic weighting)."""
        return SignificanceTable(
            [np.full_like(stage, 1.0 / stage.shape[0]) for stage in self.stages], self.beta, self.task_id
        )

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["stage", "component", "class", "value"])
            for stage, table in enumerate(self.stages, start=1):
                for component in range(table.shape[1]):
                    for cls in range(table.shape[0]):
                        writer.writerow([stage, component, cls, repr(float(table[cls, component]))])

    def save(self, path: Union[str, Path]) -> None:
        write_tensors(path, [*self.stages, np.array([self.beta, float(self.task_id)])])


def load_significance(path: Union[str, Path]) -> SignificanceTable:
    arrays = read_tensors(path)
    if len(arrays) < 2 or arrays[-1].shape != (2,):
        raise FormatError(str(path), "not a significance table container")
    beta, task_id = arrays[-1]
    return SignificanceTable(list(arrays[:-1]), float(beta), int(task_id))


def ema_update(
    table: Optional[SignificanceTable], fresh: Sequence[np.ndarray], beta: float
) -> SignificanceTable:
    """Blend fresh normalized significances into the history.

    Old classes get beta * old + (1 - beta) * fresh; classes without history take
    the fresh value. With no history at all this is the base case.
    """
    if not 0.0 <= beta <= 1.0:
        raise ContractError(f"beta must lie in [0, 1], got {beta}")
    if table is None:
        return SignificanceTable([np.array(stage) for stage in fresh], beta, 0)
    if len(fresh) != len(table.stages):
        raise DimensionError(f"fresh table has {len(fresh)} stages, history has {len(table.stages)}")
    old_classes = table.num_classes
    blended = []
    for old, new in zip(table.stages, fresh):
        if new.shape[0] < old_classes or new.shape[1] != old.shape[1]:
            raise DimensionError(f"fresh stage {new.shape} cannot extend history {old.shape}")
        stage = np.array(new)
        head = new[:old_classes]
        # equal inputs stay bit-equal
        stage[:old_classes] = np.where(head == old, old, beta * old + (1.0 - beta) * head)
        blended.append(stage)
    return SignificanceTable(blended, beta, table.task_id + 1)


def stage_dims(model: IncrementalNet) -> List[int]:
    """d_j for j = 1..L."""
    return [shape[0] for shape in stage_shapes(model.config, model.input_shape)] + [
        model.config.embed_dim
    ]


def estimate_task_significance(
    model: IncrementalNet,
    inputs: np.ndarray,
    labels: np.ndarray,
    previous: Optional[SignificanceTable],
    beta: float,
    batch_size: int = 64,
) -> SignificanceTable:
    """Run the per-task estimation over D^t and the exemplars, then age the history.

    The batch loss is the sum of per-sample losses; samples do not interact in
    the network, so each row of a feature gradient is that sample's own gradient.
    """
    acc = Accumulator.empty(stage_dims(model), model.num_classes)
    for start in range(0, len(labels), batch_size):
        batch_labels = labels[start : start + batch_size]
        model.zero_grad()
        features, logits = model.forward_with_features(inputs[start : start + batch_size])
        ad.backward(ad.reduce_sum(ad.cross_entropy(logits, batch_labels)))
        grads = [f.grad if f.grad is not None else np.zeros(f.shape) for f in features]
        for k, label in enumerate(batch_labels):
            accumulate(acc, [grad[k] for grad in grads], int(label))
    model.zero_grad()
    fresh = normalize(finalize(acc))
    table = ema_update(previous, fresh, beta)
    for stage, values in enumerate(table.stages, start=1):
        logger.debug("stage %d significance column sums %s", stage, np.round(values.sum(axis=0), 6))
    return table
