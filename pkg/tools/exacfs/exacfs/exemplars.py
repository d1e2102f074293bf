"""Fixed-budget per-class exemplar memory.

Exemplars are stored as indices into the training inputs, so later models
recompute their features from the raw samples.
"""

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Union

import numpy as np

from . import autodiff as ad
from .errors import ContractError
from .network import IncrementalNet

logger = logging.getLogger(__name__)


def _check_selection(sample_ids: Sequence[int], budget: int) -> None:
    if len(sample_ids) == 0:
        raise ContractError("cannot select exemplars from an empty class")
    if budget < 1:
        raise ContractError(f"exemplar budget must be >= 1, got {budget}")


def select_herding(sample_ids: Sequence[int], embeddings: np.ndarray, budget: int) -> List[int]:
    """Greedy herding: the k-th pick keeps the mean of the first k closest to the class mean.

    Ties go to the lowest position in `sample_ids`.
    """
    _check_selection(sample_ids, budget)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    prototype = embeddings.mean(axis=0)
    running = np.zeros_like(prototype)
    available = np.ones(len(sample_ids), dtype=bool)
    chosen: List[int] = []
    for k in range(1, min(budget, len(sample_ids)) + 1):
        distances = np.linalg.norm(prototype - (running + embeddings) / k, axis=1)
        distances[~available] = np.inf
        pick = int(np.argmin(distances))
        available[pick] = False
        running = running + embeddings[pick]
        chosen.append(pick)
    return [int(sample_ids[i]) for i in chosen]


def select_random(sample_ids: Sequence[int], budget: int, seed: int, class_id: int) -> List[int]:
    """Uniform draw without replacement, reproducible per (seed, class_id)."""
    _check_selection(sample_ids, budget)
    rng = np.random.default_rng([seed, class_id])
    order = rng.permutation(len(sample_ids))[:budget]
    return [int(sample_ids[i]) for i in order]


def select_closest_to_mean(sample_ids: Sequence[int], embeddings: np.ndarray, budget: int) -> List[int]:
    """The `budget` samples nearest to the class mean embedding, nearest first."""
    _check_selection(sample_ids, budget)
    embeddings = np.asarray(embeddings, dtype=np.float64)
    distances = np.linalg.norm(embeddings - embeddings.mean(axis=0), axis=1)
    order = np.argsort(distances, kind="stable")[:budget]
    return [int(sample_ids[i]) for i in order]


def compute_embeddings(model: IncrementalNet, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Embedder outputs f_L for a block of inputs, without recording a tape."""
    chunks = []
    with ad.no_grad():
        for start in range(0, len(inputs), batch_size):
            features, _ = model.forward_with_features(inputs[start : start + batch_size])
            chunks.append(features[-1].data)
    return np.concatenate(chunks) if chunks else np.zeros((0, model.config.embed_dim))


@dataclass
class ExemplarStore:
    """Retained training-sample indices per class (E^{0~t-1})."""

    budget_per_class: int
    strategy: str = "herding"
    rng_seed: int = 0
    classes: Dict[int, List[int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return sum(len(ids) for ids in self.classes.values())

    def indices(self) -> np.ndarray:
        """All retained sample indices, grouped by class in the order classes were added."""
        ids = [i for members in self.classes.values() for i in members]
        return np.asarray(ids, dtype=np.int64)

    def select(self, class_id: int, sample_ids: np.ndarray, model: IncrementalNet, inputs: np.ndarray) -> List[int]:
        if self.strategy == "random":
            return select_random(sample_ids, self.budget_per_class, self.rng_seed, class_id)
        embeddings = compute_embeddings(model, inputs[sample_ids])
        if self.strategy == "herding":
            return select_herding(sample_ids, embeddings, self.budget_per_class)
        if self.strategy == "closest_to_mean":
            return select_closest_to_mean(sample_ids, embeddings, self.budget_per_class)
        raise ContractError(f"unknown exemplar strategy '{self.strategy}'")

    def rebuild(
        self, class_ids: Iterable[int], inputs: np.ndarray, labels: np.ndarray, model: IncrementalNet
    ) -> None:
        """Select exemplars for newly finished classes; existing classes are left untouched."""
        for class_id in class_ids:
            class_id = int(class_id)
            if class_id in self.classes:
                continue
            sample_ids = np.flatnonzero(labels == class_id)
            self.classes[class_id] = self.select(class_id, sample_ids, model, inputs)
        logger.debug("exemplar store holds %d samples over %d classes", len(self), len(self.classes))

    def write_manifest(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["class", "rank", "sample_index"])
            for class_id, members in self.classes.items():
                for rank, sample_index in enumerate(members):
                    writer.writerow([class_id, rank, sample_index])
