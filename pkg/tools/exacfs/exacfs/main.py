"""Command-line front end: run, ablate, gradcheck and report."""

import argparse
import sys
from pathlib import Path
from typing import List, Optional

from rich.console import Console
from rich.markup import escape
from rich.panel import Panel
from rich.table import Table

from .ablation import STUDIES, run_ablation
from .config import load_config, with_updates
from .errors import ConfigError, ExacfsError, FormatError
from .gradcheck import TOLERANCE, run_suite
from .harness import run_to_directory
from .log import setup_logging
from .report import aggregate, load_runs, render_csv, render_table

console = Console()

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="exacfs", description="Class-incremental learning with class-wise feature significance"
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    run = commands.add_parser("run", help="Run one experiment from a JSON config")
    run.add_argument("--config", required=True, type=Path, help="Experiment config (JSON)")
    run.add_argument("--out", required=True, type=Path, help="Output directory")
    run.add_argument("--seed", type=int, help="Override the config's master seed")
    run.add_argument("--no-timings", action="store_true", help="Write wall_ms as 0 for byte-stable metrics")

    ablate = commands.add_parser("ablate", help="Run every arm of an ablation study")
    ablate.add_argument("--study", required=True, choices=STUDIES)
    ablate.add_argument("--config", required=True, type=Path, help="Base experiment config (JSON)")
    ablate.add_argument("--out", required=True, type=Path, help="Output directory, one subdirectory per arm")
    ablate.add_argument("--jobs", type=int, default=1, help="Arms run in parallel (default: 1)")
    ablate.add_argument("--no-timings", action="store_true", help="Write wall_ms as 0 for byte-stable metrics")

    gradcheck = commands.add_parser("gradcheck", help="Finite-difference check of every operator and the loss")
    gradcheck.add_argument("--seed", type=int, default=0)

    report = commands.add_parser("report", help="Compare metrics CSVs, mean ± std per config label")
    report.add_argument("--input", required=True, nargs="+", help="metrics.csv files")
    report.add_argument("--format", choices=("table", "csv"), default="table")
    return parser


def _load(config_path: Path, seed: Optional[int]):
    config = load_config(config_path)
    if seed is not None:
        config = with_updates(config, {"seed": seed})
    return config


def cmd_run(args: argparse.Namespace) -> int:
    config = _load(args.config, args.seed)
    console.print(f"[cyan]🚀 Running {config.run_label} (seed {config.seed})...[/cyan]\n")
    log = run_to_directory(config, args.out, timings=not args.no_timings)

    table = Table(title=f"{config.run_label} / seed {config.seed}")
    table.add_column("Task", justify="right", style="cyan")
    table.add_column("Classes", justify="right")
    table.add_column("Accuracy", justify="right", style="green")
    table.add_column("Old classes", justify="right")
    table.add_column("New classes", justify="right")
    for row in log.rows:
        old = "-" if row.old_acc is None else f"{row.old_acc:.4f}"
        table.add_row(str(row.task), str(row.classes_seen), f"{row.overall_acc:.4f}", old, f"{row.new_acc:.4f}")
    console.print(table)
    console.print(
        Panel(
            f"Average incremental accuracy: [bold]{log.average_incremental_accuracy():.4f}[/bold]\n"
            f"Artifacts: {args.out}",
            border_style="green",
        )
    )
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace) -> int:
    if args.jobs < 1:
        console.print("[red]❌ Error: --jobs must be at least 1[/red]")
        return EXIT_USAGE
    config = load_config(args.config)
    console.print(f"[cyan]🧪 Ablation study '{args.study}' on {config.run_label}...[/cyan]\n")
    results = run_ablation(args.study, config, args.out, jobs=args.jobs, timings=not args.no_timings)

    table = Table(title=f"Study: {args.study}")
    table.add_column("Arm", style="cyan")
    table.add_column("Avg incr. acc", justify="right", style="green")
    for arm, log in results.items():
        table.add_row(arm, f"{log.average_incremental_accuracy():.4f}")
    console.print(table)
    console.print(f"[green]✓ Comparison written to {args.out / 'comparison.csv'}[/green]")
    return EXIT_OK


def cmd_gradcheck(args: argparse.Namespace) -> int:
    console.print(f"[cyan]🔍 Gradient checks (seed {args.seed})...[/cyan]\n")
    results = run_suite(seed=args.seed)
    table = Table(title="Max relative error")
    table.add_column("Check", style="cyan")
    table.add_column("Trials", justify="right")
    table.add_column("Max rel. error", justify="right")
    table.add_column("Status")
    for result in results:
        status = "[green]ok[/green]" if result.passed else "[red]FAIL[/red]"
        if result.error:
            status += f" {escape(result.error)}"
            error = "-"
        else:
            error = f"{result.max_error:.3e}"
        table.add_row(result.name, str(result.trials), error, status)
    console.print(table)

    failed = [result.name for result in results if not result.passed]
    if failed:
        console.print(f"[red]❌ {len(failed)} checks failed (tolerance {TOLERANCE:g}): {', '.join(failed)}[/red]")
        return EXIT_FAILURE
    console.print(f"[green]✓ All {len(results)} checks below {TOLERANCE:g}[/green]")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    try:
        rows = aggregate(load_runs(args.input))
    except FormatError as e:
        console.print(f"[red]❌ Error: {escape(str(e))}[/red]")
        return EXIT_USAGE
    if args.format == "csv":
        sys.stdout.write(render_csv(rows))
    else:
        console.print(render_table(rows))
    return EXIT_OK


COMMANDS = {"run": cmd_run, "ablate": cmd_ablate, "gradcheck": cmd_gradcheck, "report": cmd_report}


def main(argv: Optional[List[str]] = None) -> None:
    """Main execution function."""
    args = build_parser().parse_args(argv)
    setup_logging()
    try:
        code = COMMANDS[args.command](args)
    except ConfigError as e:
        console.print(f"[red]❌ Invalid config: {escape(str(e))}[/red]")
        code = EXIT_USAGE
    except ExacfsError as e:
        console.print(f"[red]❌ Error: {escape(str(e))}[/red]")
        code = EXIT_FAILURE
    except KeyboardInterrupt:
        console.print("\n[yellow]Cancelled by user.[/yellow]")
        code = EXIT_FAILURE
    except Exception as e:
        console.print(f"[red]❌ Unexpected error: {escape(str(e))}[/red]")
        code = EXIT_FAILURE
    sys.exit(code)
