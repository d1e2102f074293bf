"""Class-wise significance-weighted feature distillation.

DL_j is the mean over contributing samples of <w(label), delta f_j>, where
delta f_j holds the squared Frobenius distance per channel between the new and
the old model's features and w(label) is the old class's significance row (new
classes get a constant weight). The objective is CL + alpha * tau * sum_j DL_j.
"""

import logging
import math
from typing import Collection, List, Optional, Sequence, Set, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import DistillConfig
from .errors import ContractError, DimensionError
from .network import IncrementalNet, ModelSnapshot
from .significance import SignificanceTable

logger = logging.getLogger(__name__)


def delta_features(
    f_new: Tensor,
    f_old: Union[Tensor, np.ndarray],
    frobenius_normalize: bool = False,
    eps: float = 1e-8,
) -> Tensor:
    """Per-component squared distance between new and old features.

    Accepts one sample ((d,h,w) conv or (d,) dense) or a batch ((n,d,h,w) or
    (n,d)). Conv channels are compared as whole maps; with normalization each
    map is first divided by max(its Frobenius norm, eps). Dense features are
    compared per component, normalizing the whole vector. A 1x1 grid is
    compared as a dense vector.
    """
    old = f_old if isinstance(f_old, Tensor) else Tensor(f_old)
    if tuple(f_new.shape) != tuple(old.shape):
        raise DimensionError(f"feature shapes differ: new {f_new.shape} vs old {old.shape}")
    if f_new.ndim in (3, 4) and f_new.shape[-2] * f_new.shape[-1] == 1:
        f_new, old = f_new.reshape(*f_new.shape[:-2]), old.reshape(*old.shape[:-2])
    if f_new.ndim in (3, 4):
        lead = tuple(f_new.shape[:-2])
        grid = f_new.shape[-2] * f_new.shape[-1]
        new_maps, old_maps = f_new.reshape(*lead, grid), old.reshape(*lead, grid)
        if frobenius_normalize:
            new_maps = ad.l2_normalize(new_maps, axis=-1, eps=eps)
            old_maps = ad.l2_normalize(old_maps, axis=-1, eps=eps)
        diff = new_maps - old_maps
        return ad.reduce_sum(diff * diff, axis=-1)
    if f_new.ndim in (1, 2):
        if frobenius_normalize:
            f_new = ad.l2_normalize(f_new, axis=-1, eps=eps)
            old = ad.l2_normalize(old, axis=-1, eps=eps)
        diff = f_new - old
        return diff * diff
    raise DimensionError(f"unsupported feature rank {f_new.ndim} (shape {f_new.shape})")


def sample_weights(
    stage: int,
    labels: np.ndarray,
    table: SignificanceTable,
    num_old_classes: int,
    dim: int,
    cfg: DistillConfig,
) -> np.ndarray:
    """Weight rows per sample: table rows for old classes, a constant for new ones, 0 if excluded."""
    labels = np.asarray(labels, dtype=np.int64)
    old_mask = labels < num_old_classes
    weights = np.zeros((labels.size, dim))
    if np.any(old_mask):
        rows = table.weights(stage, labels[old_mask])
        if rows.shape[1] != dim:
            raise DimensionError(f"stage {stage}: table has {rows.shape[1]} components, features {dim}")
        weights[old_mask] = rows
    if cfg.include_new:
        weights[~old_mask] = cfg.new_class_significance
    return weights


def contributing_count(labels: np.ndarray, num_old_classes: int, include_new: bool) -> int:
    labels = np.asarray(labels)
    return int(labels.size if include_new else np.sum(labels < num_old_classes))


def stage_distill_loss(
    stage: int,
    f_new: Tensor,
    f_old: np.ndarray,
    labels: np.ndarray,
    table: SignificanceTable,
    num_old_classes: int,
    cfg: DistillConfig,
) -> Tensor:
    """DL_j for one batch from precomputed new (taped) and old (constant) features."""
    count = contributing_count(labels, num_old_classes, cfg.include_new)
    if count == 0:
        return Tensor(0.0)
    delta = delta_features(f_new, f_old, cfg.frobenius_normalize, cfg.eps_norm)
    weights = sample_weights(stage, labels, table, num_old_classes, delta.shape[1], cfg)
    return ad.reduce_sum(delta * weights) * (1.0 / count)


def distill_loss_stage(
    stage: int,
    x: np.ndarray,
    labels: np.ndarray,
    table: SignificanceTable,
    old: ModelSnapshot,
    model: IncrementalNet,
    cfg: DistillConfig,
) -> Tensor:
    """DL_j for a batch, running both models; gradients reach the new model only."""
    old_features, _ = old.forward_with_features(x)
    new_features, _ = model.forward_with_features(x)
    return stage_distill_loss(
        stage, new_features[stage - 1], old_features[stage - 1].data, labels, table, old.num_classes, cfg
    )


def temperature(r_t: int, c_t: int) -> float:
    """tau = sqrt(r_t / c_t): classes seen over classes new at this task."""
    if c_t <= 0 or c_t > r_t:
        raise ContractError(f"temperature needs 0 < c_t <= r_t, got r_t={r_t}, c_t={c_t}")
    return math.sqrt(r_t / c_t)


def total_loss(
    cl: Tensor,
    stage_losses: Sequence[Optional[Tensor]],
    alpha: float,
    tau: float,
    stages_enabled: Optional[Collection[int]] = None,
) -> Tensor:
    """CL + alpha * tau * sum of DL_j over the enabled stages (1-based)."""
    active = [
        loss
        for stage, loss in enumerate(stage_losses, start=1)
        if loss is not None and (stages_enabled is None or stage in stages_enabled)
    ]
    if alpha == 0 or not active:
        return cl
    distill = active[0]
    for loss in active[1:]:
        distill = distill + loss
    return cl + distill * (alpha * tau)


def enabled_stages(cfg: DistillConfig, num_features: int, method: str) -> Set[int]:
    """Stages that distill: configured list, else every conv stage; last conv stage only for that ablation."""
    if method == "last_stage_only":
        return {num_features - 1}
    if cfg.stages is not None:
        return set(cfg.stages)
    return set(range(1, num_features))


def batch_distill_losses(
    new_features: List[Tensor],
    old_features: List[Tensor],
    labels: np.ndarray,
    table: SignificanceTable,
    num_old_classes: int,
    cfg: DistillConfig,
    stages: Collection[int],
) -> List[Optional[Tensor]]:
    """DL_j for every stage j = 1..L, None where the stage is disabled."""
    losses: List[Optional[Tensor]] = []
    for stage in range(1, len(new_features) + 1):
        if stage not in stages:
            losses.append(None)
            continue
        losses.append(
            stage_distill_loss(
                stage,
                new_features[stage - 1],
                old_features[stage - 1].data,
                labels,
                table,
                num_old_classes,
                cfg,
            )
        )
    return losses
