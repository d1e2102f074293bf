#!/usr/bin/env -S uv run --script
# /// script
# dependencies = [
#   "numpy>=1.24",
#   "pydantic>=2.0",
#   "rich>=13.0.0",
# ]
# ///

"""Desk-scale forgetting benchmark for the exacfs engine.

Runs the 10-class stream of configs/desk_scale.json (base 5, five 1-class
increments, 20 exemplars per class) for every arm of three studies and checks
the directional expectations:

- forgetting: exacfs beats finetune_only by >= 5 points on every seed and is
  at least as good as uniform_significance on the seed mean
- stages: distilling all conv stages is at least as good as the last stage only
- budget: 20 exemplars per class beat 5 on every seed; 50 and 100 are reported
"""

import argparse
import sys
import time
from pathlib import Path
from typing import Dict, List

# Add project root and the tool package to path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))
sys.path.insert(0, str(project_root / "tools" / "exacfs"))

from evals.storage import EvalStorage
from exacfs.config import RunConfig, load_config, with_updates
from exacfs.harness import run_experiment
from exacfs.log import setup_logging
from rich.console import Console
from rich.table import Table

console = Console()

DESK_CONFIG = project_root / "configs" / "desk_scale.json"
DEFAULT_SEEDS = [1, 2, 3]
MARGIN_OVER_FINETUNE = 0.05

STUDIES: Dict[str, Dict[str, Dict[str, object]]] = {
    "forgetting": {
        "exacfs": {"method": "exacfs"},
        "finetune_only": {"method": "finetune_only"},
        "uniform_significance": {"method": "uniform_significance"},
    },
    "stages": {
        "all_stages": {"method": "exacfs"},
        "last_stage_only": {"method": "last_stage_only"},
    },
    "budget": {f"budget_{b}": {"exemplars.budget": b} for b in (5, 10, 20, 50, 100)},
}


def run_arm(study: str, arm: str, cfg: RunConfig, storage: EvalStorage) -> float:
    """Run one (arm, seed) experiment and store its result."""
    started = time.perf_counter()
    log = run_experiment(cfg)
    average = log.average_incremental_accuracy()
    last = log.rows[-1]
    storage.record_result(
        study=study,
        arm=arm,
        seed=cfg.seed,
        avg_incremental_accuracy=average,
        per_task_accs=[row.overall_acc for row in log.rows],
        metrics={
            "final_accuracy": last.overall_acc,
            "final_base_task_accuracy": last.per_task_accs[0],
            "wall_seconds": time.perf_counter() - started,
        },
        metadata={"config": cfg.model_dump(mode="json")},
    )
    console.print(f"  {arm:<22} seed {cfg.seed}: [green]{average:.4f}[/green]")
    return average


def run_study(study: str, base: RunConfig, seeds: List[int], storage: EvalStorage) -> Dict[str, List[float]]:
    console.print(f"\n[cyan]Running study: {study}[/cyan]")
    results: Dict[str, List[float]] = {}
    for arm, updates in STUDIES[study].items():
        results[arm] = [
            run_arm(study, arm, with_updates(base, {**updates, "seed": seed, "label": arm}), storage)
            for seed in seeds
        ]
    return results


def _mean(values: List[float]) -> float:
    return sum(values) / len(values)


def check_study(study: str, results: Dict[str, List[float]]) -> List[tuple]:
    """(expectation, passed) pairs for one study."""
    if study == "forgetting":
        gaps = [a - b for a, b in zip(results["exacfs"], results["finetune_only"])]
        return [
            (
                f"exacfs - finetune_only >= {MARGIN_OVER_FINETUNE:.2f} on every seed "
                f"(min gap {min(gaps):.4f})",
                all(gap >= MARGIN_OVER_FINETUNE for gap in gaps),
            ),
            (
                "mean exacfs >= mean uniform_significance",
                _mean(results["exacfs"]) >= _mean(results["uniform_significance"]),
            ),
        ]
    if study == "stages":
        return [
            (
                "mean all_stages >= mean last_stage_only",
                _mean(results["all_stages"]) >= _mean(results["last_stage_only"]),
            )
        ]
    checks = [
        (
            "budget_20 > budget_5 on every seed",
            all(a > b for a, b in zip(results["budget_20"], results["budget_5"])),
        )
    ]
    for high in ("budget_50", "budget_100"):
        below = _mean(results[high]) < _mean(results["budget_20"])
        console.print(f"  [dim]{high} below budget_20 on the seed mean: {below} (not asserted)[/dim]")
    return checks


def show_results(study: str, results: Dict[str, List[float]], seeds: List[int]):
    table = Table(title=f"Study: {study}")
    table.add_column("Arm", style="cyan")
    for seed in seeds:
        table.add_column(f"seed {seed}", justify="right")
    table.add_column("Mean", justify="right", style="green")
    for arm, values in results.items():
        table.add_row(arm, *(f"{v:.4f}" for v in values), f"{_mean(values):.4f}")
    console.print(table)


def show_seed_comparison(study: str, seeds: List[int], storage: EvalStorage):
    """Rank the arms of a study on each seed by their latest stored run."""
    for seed in seeds:
        ranked = storage.compare_arms(study, seed, arms=list(STUDIES[study]))
        if not ranked:
            continue
        best, *rest = ranked.values()
        top = best["avg_incremental_accuracy"]
        gaps = ", ".join(f"{row['arm']} -{top - row['avg_incremental_accuracy']:.4f}" for row in rest)
        console.print(f"  [dim]seed {seed}: best {best['arm']} {top:.4f}; {gaps}[/dim]")


def show_summary(storage: EvalStorage):
    """Show summary of all stored results."""
    console.print("\n[bold cyan]Results Summary[/bold cyan]\n")
    for study in STUDIES:
        summary = storage.get_summary(study=study, group_by="arm")
        if not summary:
            continue
        table = Table(title=f"Average incremental accuracy: {study}")
        table.add_column("Arm", style="cyan")
        table.add_column("Avg", justify="right", style="green")
        table.add_column("Min", justify="right")
        table.add_column("Max", justify="right")
        table.add_column("Count", justify="right")
        for row in summary:
            table.add_row(
                row["arm"],
                f"{row['avg_accuracy']:.4f}",
                f"{row['min_accuracy']:.4f}",
                f"{row['max_accuracy']:.4f}",
                str(row["count"]),
            )
        console.print(table)

    console.print("\n[bold]Recent Results[/bold]")
    for result in storage.get_results(limit=5):
        console.print(
            f"  [{result['timestamp']}] {result['study']}/{result['arm']} seed {result['seed']}: "
            f"{result['avg_incremental_accuracy']:.4f}"
        )


def main():
    parser = argparse.ArgumentParser(description="Run the desk-scale forgetting benchmark")
    parser.add_argument("--study", choices=list(STUDIES), help="Specific study to run (default: all)")
    parser.add_argument(
        "--config", type=Path, default=DESK_CONFIG, help="Base config (default: configs/desk_scale.json)"
    )
    parser.add_argument("--seeds", type=int, nargs="+", default=DEFAULT_SEEDS, help="Master seeds")
    parser.add_argument("--db", type=Path, help="Results database (default: evals/storage/results.db)")
    parser.add_argument("--summary", action="store_true", help="Show summary of results and exit")
    args = parser.parse_args()

    setup_logging()
    storage = EvalStorage(args.db)

    if args.summary:
        show_summary(storage)
        return

    base = load_config(args.config)
    studies = [args.study] if args.study else list(STUDIES)
    console.print(f"[bold]Studies:[/bold] {', '.join(studies)}")
    console.print(f"[bold]Seeds:[/bold] {', '.join(map(str, args.seeds))}")

    failed = 0
    for study in studies:
        results = run_study(study, base, args.seeds, storage)
        show_results(study, results, args.seeds)
        show_seed_comparison(study, args.seeds, storage)
        for expectation, passed in check_study(study, results):
            mark = "[green]PASS[/green]" if passed else "[red]FAIL[/red]"
            console.print(f"  {mark} {expectation}")
            failed += not passed

    if failed:
        console.print(f"\n[red]❌ {failed} expectations failed[/red]")
        sys.exit(1)
    console.print("\n[bold green]All expectations met[/bold green]")


if __name__ == "__main__":
    main()
