"""Class-incremental training protocol.

Each task initializes the live model from the previous snapshot, grows the
classifier, trains on the new data plus the exemplar memory, optionally runs a
class-balanced fine-tune, re-estimates feature significance and stores
exemplars for the classes it introduced.
"""

import logging
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Collection, List, Optional, Union

import numpy as np

from . import autodiff as ad
from .config import RunConfig, dump_config
from .datasets import load_dataset
from .distillation import batch_distill_losses, enabled_stages, temperature, total_loss
from .errors import ContractError
from .exemplars import ExemplarStore, select_random
from .metrics import MetricsLog, TaskRecord
from .network import IncrementalNet, ModelSnapshot, classification_loss
from .optim import SGD, step_lr
from .significance import SignificanceTable, estimate_task_significance
from .stream import TaskStream, build_task_stream

logger = logging.getLogger(__name__)

FINETUNE_LR_SCALE = 0.01
TRAIN_PHASE, FINETUNE_PHASE = 0, 1


@dataclass
class TaskState:
    """Everything carried from one task to the next."""

    model: IncrementalNet
    store: ExemplarStore
    snapshot: Optional[ModelSnapshot] = None
    table: Optional[SignificanceTable] = None


@dataclass
class Evaluation:
    overall: float
    per_task: List[float]
    old_classes: Optional[float]
    new_classes: float


@dataclass
class DistillSetup:
    """Old model, weighting table and scale used by the distillation term of one task."""

    old: ModelSnapshot
    table: SignificanceTable
    alpha: float
    tau: float
    stages: Collection[int]


def initial_state(cfg: RunConfig, input_shape) -> TaskState:
    store = ExemplarStore(cfg.exemplars.budget, cfg.exemplars.strategy, cfg.seed)
    return TaskState(model=IncrementalNet(cfg.network, input_shape, cfg.seed), store=store)


def effective_alpha(cfg: RunConfig) -> float:
    return 0.0 if cfg.method == "finetune_only" else cfg.distill.alpha


def fit(
    model: IncrementalNet,
    inputs: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    lr: float,
    cfg: RunConfig,
    distill: Optional[DistillSetup],
    task: int,
    phase: int,
) -> None:
    """Minibatch SGD over (inputs, labels) minimizing CL plus the distillation term."""
    optimizer = SGD(model.parameters(), lr, cfg.optimizer.momentum, cfg.optimizer.weight_decay)
    rng = np.random.default_rng([cfg.seed, task, phase])
    batch_size = cfg.optimizer.batch_size
    use_distill = distill is not None and distill.alpha > 0
    for epoch in range(epochs):
        epoch_lr = step_lr(lr, epoch, epochs)
        if epoch_lr != optimizer.lr:
            logger.debug("task %d: lr %.3g -> %.3g at epoch %d", task, optimizer.lr, epoch_lr, epoch)
            optimizer.lr = epoch_lr
        order = rng.permutation(len(labels))
        loss_sum, stage_sums = 0.0, None
        for start in range(0, len(order), batch_size):
            idx = order[start : start + batch_size]
            xb, yb = inputs[idx], labels[idx]
            optimizer.zero_grad()
            out = model.run(xb)
            loss = classification_loss(out.logits, yb)
            if use_distill:
                old_features, _ = distill.old.forward_with_features(xb)
                stage_losses = batch_distill_losses(
                    out.features,
                    old_features,
                    yb,
                    distill.table,
                    distill.old.num_classes,
                    cfg.distill,
                    distill.stages,
                )
                loss = total_loss(loss, stage_losses, distill.alpha, distill.tau, distill.stages)
                values = np.array([0.0 if s is None else s.item() for s in stage_losses])
                stage_sums = values * len(idx) if stage_sums is None else stage_sums + values * len(idx)
            ad.backward(loss)
            optimizer.step()
            loss_sum += loss.item() * len(idx)
        logger.debug("task %d phase %d epoch %d: mean loss %.6f", task, phase, epoch, loss_sum / len(order))
        if stage_sums is not None:
            logger.debug("task %d epoch %d: distillation per stage %s", task, epoch, np.round(stage_sums / len(order), 6))
    model.zero_grad()


def balanced_subset(
    store: ExemplarStore, labels: np.ndarray, new_classes: Collection[int], budget: int, seed: int
) -> np.ndarray:
    """Exemplars of old classes plus at most `budget` random samples of every new class."""
    picks = [store.indices()]
    for class_id in new_classes:
        members = np.flatnonzero(labels == class_id)
        picks.append(np.asarray(select_random(members, budget, seed, class_id), dtype=np.int64))
    return np.concatenate(picks)


def balanced_finetune(
    model: IncrementalNet,
    inputs: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    cfg: RunConfig,
    distill: Optional[DistillSetup],
    task: int,
) -> IncrementalNet:
    """Short training pass on a class-balanced set at 1% of the base learning rate."""
    if epochs == 0:
        return model
    counts = np.bincount(labels, minlength=model.num_classes)
    if np.any(counts == 0):
        raise ContractError(f"balanced fine-tune: classes {np.flatnonzero(counts == 0).tolist()} have no samples")
    logger.debug("task %d: balanced fine-tune on %d samples", task, len(labels))
    fit(model, inputs, labels, epochs, cfg.optimizer.lr * FINETUNE_LR_SCALE, cfg, distill, task, FINETUNE_PHASE)
    return model


def train_task(t: int, state: TaskState, stream: TaskStream, cfg: RunConfig) -> TaskState:
    """Run one task of the protocol and return the state handed to the next task."""
    task = stream.tasks[t]
    distill = None
    if t == 0:
        model = state.model
    else:
        if state.snapshot is None or state.table is None:
            raise ContractError(f"task {t} needs the snapshot and significance table of task {t - 1}")
        model = IncrementalNet.from_snapshot(state.snapshot, cfg.seed)
        table = state.table.uniform() if cfg.method == "uniform_significance" else state.table
        distill = DistillSetup(
            old=state.snapshot,
            table=table,
            alpha=effective_alpha(cfg),
            tau=temperature(stream.classes_seen(t), len(task.classes)),
            stages=enabled_stages(cfg.distill, cfg.network.num_features, cfg.method),
        )
    model.task_id = t
    model.grow(len(task.classes))
    logger.info("task %d: training on classes %s (%d seen)", t, list(task.classes), model.num_classes)

    train_idx = np.concatenate([task.train_idx, state.store.indices()])
    fit(
        model,
        stream.train_x[train_idx],
        stream.train_y[train_idx],
        cfg.optimizer.epochs,
        cfg.optimizer.lr,
        cfg,
        distill,
        t,
        TRAIN_PHASE,
    )
    if t >= 1:
        subset = balanced_subset(state.store, stream.train_y, task.classes, cfg.exemplars.budget, cfg.seed)
        balanced_finetune(
            model, stream.train_x[subset], stream.train_y[subset], cfg.finetune.epochs, cfg, distill, t
        )

    table = estimate_task_significance(
        model, stream.train_x[train_idx], stream.train_y[train_idx], state.table, cfg.significance.beta
    )
    store = replace(state.store, classes=dict(state.store.classes))
    store.rebuild(task.classes, stream.train_x, stream.train_y, model)
    return TaskState(model=model, store=store, snapshot=model.snapshot(), table=table)


def predict(model, inputs: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Argmax class of every input; `model` is anything with `forward_with_features`."""
    chunks = []
    with ad.no_grad():
        for start in range(0, len(inputs), batch_size):
            _, logits = model.forward_with_features(inputs[start : start + batch_size])
            chunks.append(np.argmax(logits.data, axis=1))
    return np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)


def _accuracy(correct: np.ndarray) -> float:
    return float(np.mean(correct)) if correct.size else 0.0


def evaluate(model, stream: TaskStream, t: int) -> Evaluation:
    """Accuracy over the test sets of tasks 0..t, overall and per task."""
    idx = np.concatenate([stream.tasks[k].test_idx for k in range(t + 1)])
    correct = predict(model, stream.test_x[idx]) == stream.test_y[idx]
    per_task, offset = [], 0
    for k in range(t + 1):
        size = len(stream.tasks[k].test_idx)
        per_task.append(_accuracy(correct[offset : offset + size]))
        offset += size
    old_count = sum(len(stream.tasks[k].test_idx) for k in range(t))
    return Evaluation(
        overall=_accuracy(correct),
        per_task=per_task,
        old_classes=_accuracy(correct[:old_count]) if t > 0 else None,
        new_classes=per_task[-1],
    )


TaskCallback = Callable[[int, TaskState, Evaluation], None]


def run_experiment(cfg: RunConfig, on_task: Optional[TaskCallback] = None) -> MetricsLog:
    """Train and evaluate every task of the stream, logging one row per task."""
    dataset = load_dataset(cfg.dataset, cfg.seed)
    stream = build_task_stream(dataset, cfg.stream.base_classes, cfg.stream.increment, cfg.stream.ordering_seed)
    state = initial_state(cfg, dataset.input_shape)
    log = MetricsLog(cfg.run_label, cfg.seed)
    for t in range(len(stream)):
        started = time.perf_counter()
        state = train_task(t, state, stream, cfg)
        result = evaluate(state.model, stream, t)
        wall_ms = int(round((time.perf_counter() - started) * 1000))
        log.append(
            TaskRecord(
                task=t,
                classes_seen=stream.classes_seen(t),
                overall_acc=result.overall,
                per_task_accs=result.per_task,
                wall_ms=wall_ms,
                old_acc=result.old_classes,
                new_acc=result.new_classes,
            )
        )
        old = "-" if result.old_classes is None else f"{result.old_classes:.3f}"
        logger.info(
            "task %d done: %d classes, accuracy %.3f (old %s, new %.3f)",
            t,
            stream.classes_seen(t),
            result.overall,
            old,
            result.new_classes,
        )
        if on_task is not None:
            on_task(t, state, result)
    return log


def write_task_artifacts(out_dir: Path, t: int, state: TaskState) -> None:
    state.model.save(out_dir / f"model_task{t}.bin")
    state.table.write_csv(out_dir / f"significance_task{t}.csv")
    state.table.save(out_dir / f"significance_task{t}.bin")


def run_to_directory(cfg: RunConfig, out_dir: Union[str, Path], timings: bool = True) -> MetricsLog:
    """Run an experiment and write its metrics, config and per-task artifacts to out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(dump_config(cfg))
    final: List[TaskState] = []

    def on_task(t: int, state: TaskState, _: Evaluation) -> None:
        write_task_artifacts(out_dir, t, state)
        final[:] = [state]

    log = run_experiment(cfg, on_task)
    final[0].store.write_manifest(out_dir / "exemplars.csv")
    log.write_csv(out_dir / "metrics.csv", timings=timings)
    logger.info("wrote %s", out_dir / "metrics.csv")
    return log
