"""Ablation studies: one experiment per arm, all sharing the base config's seed."""

import csv
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Tuple, Union

from .config import RunConfig, with_updates
from .errors import ContractError
from .harness import run_to_directory
from .metrics import MetricsLog

logger = logging.getLogger(__name__)

BUDGETS = (5, 10, 20, 50, 100)
STUDIES = ("significance", "stages", "sampling", "budget")


def study_arms(study: str, base: RunConfig) -> List[Tuple[str, RunConfig]]:
    """(arm name, config) pairs of a study; arm names double as output subdirectories."""
    if study == "significance":
        updates = {"exacfs": {"method": "exacfs"}, "uniform_significance": {"method": "uniform_significance"}}
    elif study == "stages":
        updates = {"all_stages": {"method": "exacfs"}, "last_stage_only": {"method": "last_stage_only"}}
    elif study == "sampling":
        updates = {name: {"exemplars.strategy": name} for name in ("herding", "random", "closest_to_mean")}
    elif study == "budget":
        updates = {f"budget_{b}": {"exemplars.budget": b} for b in BUDGETS}
    else:
        raise ContractError(f"unknown study '{study}', expected one of {', '.join(STUDIES)}")
    return [(arm, with_updates(base, {**change, "label": arm})) for arm, change in updates.items()]


def _run_arm(arm: str, cfg: RunConfig, out_dir: Path, timings: bool) -> MetricsLog:
    logger.info("arm %s: starting", arm)
    log = run_to_directory(cfg, out_dir / arm, timings=timings)
    logger.info("arm %s: average incremental accuracy %.4f", arm, log.average_incremental_accuracy())
    return log


def run_ablation(
    study: str, base: RunConfig, out_dir: Union[str, Path], jobs: int = 1, timings: bool = True
) -> Dict[str, MetricsLog]:
    """Run every arm of a study and write `comparison.csv` next to the arm directories.

    Arms are independent, so with jobs > 1 they run in separate processes;
    results are merged in arm order.
    """
    arms = study_arms(study, base)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_run_arm, arm, cfg, out_dir, timings) for arm, cfg in arms]
            logs = [future.result() for future in futures]
    else:
        logs = [_run_arm(arm, cfg, out_dir, timings) for arm, cfg in arms]
    results = {arm: log for (arm, _), log in zip(arms, logs)}
    write_comparison(out_dir / "comparison.csv", results)
    return results


def write_comparison(path: Union[str, Path], results: Dict[str, MetricsLog]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["arm", "avg_incremental_accuracy"])
        for arm, log in results.items():
            writer.writerow([arm, repr(log.average_incremental_accuracy())])
    logger.info("wrote %s", path)
