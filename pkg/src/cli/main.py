# src/cli/main.py

"""
Command-line surface. Every command reads one YAML config and writes its
artifacts under one output directory.

    python -m src.cli.main --config config/config.yaml pipeline --seed 7 --override search.k=5

Exit codes: 0 success, 1 runtime failure, 2 invalid configuration.
"""

import functools
import os
import sys
from typing import Callable, List, Optional, Sequence, Tuple

import click
from dotenv import load_dotenv
from rich.console import Console
from rich.markup import escape
from rich.table import Table

from src.common.errors import AutoFieldError, ConfigError
from src.common.logging_setup import setup_logging
from src.common.settings import RunConfig
from src.pipeline.pipeline_service import (
    EVALUATION_FILE,
    LEDGER_FILE,
    RETRAIN_REPORT_FILE,
    SELECTION_FILE,
    SUBSETS_FILE,
    PipelineService,
    build_report,
)

console = Console(stderr=True)

EXIT_RUNTIME_ERROR = 1
EXIT_CONFIG_ERROR = 2


def _handle_errors(command: Callable) -> Callable:
    """Maps failures onto the exit-code contract."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except ConfigError as e:
            console.print(f"❌ [bold red]Configuration error:[/bold red] {escape(str(e))}")
            sys.exit(EXIT_CONFIG_ERROR)
        except AutoFieldError as e:
            console.print(f"❌ [bold red]{type(e).__name__}:[/bold red] {escape(str(e))}")
            sys.exit(EXIT_RUNTIME_ERROR)
        except (OSError, MemoryError) as e:
            console.print(f"❌ [bold red]Runtime failure:[/bold red] {escape(str(e))}")
            sys.exit(EXIT_RUNTIME_ERROR)

    return wrapper


def run_options(command: Callable) -> Callable:
    command = click.option("--override", "overrides", multiple=True, metavar="KEY=VALUE",
                           help="Config override, e.g. search.k=5 (repeatable).")(command)
    command = click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False),
                           help="Output directory (default: project.output_dir).")(command)
    command = click.option("--seed", type=click.IntRange(0, 2**64 - 1), default=None,
                           help="Run seed (default: config seed).")(command)
    return command


def _service(ctx: click.Context, seed: Optional[int], out_dir: Optional[str], overrides: Sequence[str],
             extra: Sequence[str] = ()) -> PipelineService:
    """Priority: command line > environment > config file > defaults."""
    all_overrides: List[str] = list(extra) + list(overrides)
    if seed is not None:
        all_overrides.append(f"seed={seed}")
    config = RunConfig.load(ctx.obj["config_path"], all_overrides)
    setup_logging(config.logging.level, config.logging.format)
    out_dir = out_dir or os.getenv("AUTOFIELD_OUTPUT_DIR") or config.project.output_dir
    console.print(f"📋 Config hash [bold]{config.config_hash()}[/bold], seed {config.seed}, output '{out_dir}'")
    return PipelineService(config, out_dir)


@click.group()
@click.option("--config", "config_path", default="config/config.yaml", show_default=True,
              type=click.Path(dir_okay=False), help="YAML run configuration.")
@click.pass_context
def cli(ctx: click.Context, config_path: str):
    """Feature-field selection for click-through models: search, retrain, evaluate, enumerate."""
    load_dotenv("config/.env")
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path


@cli.command()
@run_options
@click.pass_context
@_handle_errors
def prepare(ctx, seed, out_dir, overrides):
    """Read, encode and split the configured raw data into dataset.afd."""
    service = _service(ctx, seed, out_dir, overrides)
    path = service.prepare()
    console.print(f"✅ Dataset written to {path}")


@cli.command()
@run_options
@click.pass_context
@_handle_errors
def synth(ctx, seed, out_dir, overrides):
    """Generate the planted synthetic dataset into dataset.afd."""
    service = _service(ctx, seed, out_dir, overrides, extra=["data.source=synthetic"])
    path = service.prepare()
    console.print(f"✅ Synthetic dataset written to {path}")


@cli.command()
@run_options
@click.pass_context
@_handle_errors
def search(ctx, seed, out_dir, overrides):
    """Learn the field controller and write trace.jsonl, selection.json and search.ckpt."""
    service = _service(ctx, seed, out_dir, overrides)
    result = service.search()
    names = service.splits.field_names()
    console.print(f"✅ Selected fields {result.selected} ({', '.join(names[n] for n in result.selected)}) -> "
                  f"{service.path(SELECTION_FILE)}")


@cli.command()
@run_options
@click.pass_context
@_handle_errors
def retrain(ctx, seed, out_dir, overrides):
    """Retrain on the selected fields; write model.ckpt, retrain_report.json and a report.csv row."""
    service = _service(ctx, seed, out_dir, overrides)
    report = service.retrain()
    console.print(f"✅ Test AUC {report.test_auc:.6f}, logloss {report.test_logloss:.6f} "
                  f"after {report.epochs_trained} epochs -> {service.path(RETRAIN_REPORT_FILE)}")


@cli.command()
@run_options
@click.option("--checkpoint", default=None, type=click.Path(dir_okay=False), help="Model checkpoint (default: <out>/model.ckpt).")
@click.option("--split", type=click.Choice(["train", "validation", "test"]), default="test", show_default=True)
@click.pass_context
@_handle_errors
def evaluate(ctx, seed, out_dir, overrides, checkpoint, split):
    """Score a saved model on one split and write evaluation.json."""
    service = _service(ctx, seed, out_dir, overrides)
    result = service.evaluate(checkpoint, split)
    console.print(f"✅ {split} AUC {result['auc']:.6f}, logloss {result['logloss']:.6f} -> "
                  f"{service.path(EVALUATION_FILE)}")


@cli.command(name="enumerate")
@run_options
@click.pass_context
@_handle_errors
def enumerate_subsets(ctx, seed, out_dir, overrides):
    """Train every field subset (or every K-subset) and write subsets.csv."""
    service = _service(ctx, seed, out_dir, overrides)
    report, percentile = service.enumerate()
    _print_strata(report.summary())
    console.print(f"✅ {len(report)} subsets -> {service.path(SUBSETS_FILE)}")
    if percentile is not None:
        console.print(f"🎯 Selection percentile within its K-stratum: {percentile:.4f}")


@cli.command()
@run_options
@click.pass_context
@_handle_errors
def pipeline(ctx, seed, out_dir, overrides):
    """search -> retrain -> evaluate."""
    service = _service(ctx, seed, out_dir, overrides)
    outcome = service.run_pipeline()
    if outcome["evaluation"] is None:
        console.print("⚠️ No field was selected; retrain and evaluate skipped. Selection and trace are in "
                      f"{service.path(SELECTION_FILE)}, a blank row in {service.path(LEDGER_FILE)}")
        return
    console.print(f"🎉 Selected {outcome['selected']}; test AUC {outcome['evaluation']['auc']:.6f}, "
                  f"logloss {outcome['evaluation']['logloss']:.6f}; ledger {service.path(LEDGER_FILE)}")


@cli.command()
@click.argument("ledgers", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--subsets", "subsets_path", default=None, type=click.Path(exists=True, dir_okay=False),
              help="subsets.csv from `enumerate`, for percentiles and the scatter data.")
@click.option("--out", "out_dir", default=".", type=click.Path(file_okay=False), show_default=True)
@click.pass_context
@_handle_errors
def report(ctx, ledgers: Tuple[str, ...], subsets_path, out_dir):
    """Merge report.csv ledgers into merged_report.csv and scatter.csv."""
    setup_logging()
    merged, scatter, rankings = build_report(list(ledgers), subsets_path, out_dir)
    console.print(f"✅ {len(merged)} unique runs -> {os.path.join(out_dir, 'merged_report.csv')}; "
                  f"{len(scatter)} scatter points -> {os.path.join(out_dir, 'scatter.csv')}")
    for r in rankings:
        console.print(f"🎯 {r['config_hash']} K={r['k']} fields {r['fields']}: percentile {r['percentile']:.4f}")


def _print_strata(summary: dict) -> None:
    table = Table(title="AUC per K-stratum")
    for column in ("K", "subsets", "min", "median", "max", "best fields"):
        table.add_column(column)
    for k, s in summary["strata"].items():
        table.add_row(k, str(s["count"]), f"{s['min']:.4f}", f"{s['q50']:.4f}", f"{s['max']:.4f}", str(s["best_fields"]))
    console.print(table)


if __name__ == "__main__":
    cli(obj={})
