import dataclasses
import logging
from pathlib import Path
from typing import Annotated, List, Optional

import typer
from rich.console import Console
from rich import print as rprint

from repofix.config import RunConfig, load_config, override
from repofix.core import ConfigurationError, RepofixError
from repofix.evaluation import load_instances, run_eval
from repofix.formatters import (
    build_eval_table,
    build_index_table,
    build_localization_view,
    build_solutions_table,
    format_rate,
)
from repofix.indexer import get_index_info
from repofix.pipeline import (
    PLAN_FILE,
    index_dir_of,
    read_problem,
    run_fix,
    run_index,
    run_localize,
)

logger = logging.getLogger(__name__)

app = typer.Typer(
    name="repofix",
    help="Localize the code an issue is about and produce a test-validated patch",
    add_completion=False,
)
console = Console()
error_console = Console(stderr=True)


def handle_error(e: Exception) -> None:
    """Central error handler for CLI."""
    if isinstance(e, RepofixError):
        error_console.print(f"[red]Error:[/red] {e}")
        raise typer.Exit(code=e.exit_code)
    error_console.print(f"[red]Unexpected Error:[/red] {e}")
    logging.exception("Unexpected error occurred")
    raise typer.Exit(code=1)


def parse_temperatures(value: Optional[str]) -> Optional[tuple]:
    """Parse '0.0,0.4,0.8' into a tuple of floats."""
    if value is None:
        return None
    try:
        return tuple(float(part) for part in value.split(",") if part.strip())
    except ValueError as e:
        raise ConfigurationError(f"Invalid temperature list '{value}'") from e


def resize_schedule(temperatures: tuple, k: int) -> tuple:
    """Cut the schedule to k entries, or spread k evenly up to its highest value."""
    if k < 1:
        raise ConfigurationError("--k must be at least 1")
    if k <= len(temperatures):
        return tuple(temperatures[:k])
    top = max(max(temperatures), 0.8)
    return tuple(round(top * i / (k - 1), 3) for i in range(k))


def _config(ctx: typer.Context) -> RunConfig:
    return ctx.obj["config"]


@app.callback()
def main(
    ctx: typer.Context,
    config_file: Annotated[
        Optional[Path], typer.Option("--config", "-c", help="TOML configuration file")
    ] = None,
    run_dir: Annotated[
        Optional[Path], typer.Option("--run-dir", help="Directory for run logs and reports")
    ] = None,
    backend: Annotated[
        Optional[str], typer.Option("--backend", help="Completion backend: live, replay or record")
    ] = None,
    transcript: Annotated[
        Optional[Path], typer.Option("--transcript", help="Transcript file for replay/record")
    ] = None,
    verbose: bool = typer.Option(False, "--verbose", "-v", help="Enable debug logging"),
) -> None:
    """
    repofix - issue-driven fault localization and patch generation
    """
    ctx.ensure_object(dict)

    if verbose:
        logging.basicConfig(level=logging.DEBUG)
    else:
        logging.basicConfig(level=logging.WARNING)

    # Always suppress HTTP client debug logs
    logging.getLogger("httpx").setLevel(logging.WARNING)
    logging.getLogger("httpcore").setLevel(logging.WARNING)

    try:
        config = load_config(str(config_file) if config_file else None)
        llm = override(
            config.llm,
            backend=backend,
            transcript=str(transcript) if transcript else None,
        )
        config = dataclasses.replace(
            config, llm=llm, run_dir=str(run_dir) if run_dir else config.run_dir
        )
    except Exception as e:
        handle_error(e)
    ctx.obj["config"] = config


@app.command()
def index(
    ctx: typer.Context,
    root: Annotated[Path, typer.Option("--root", help="Repository root to index")] = Path("."),
    out: Annotated[Optional[Path], typer.Option("--out", help="Index output directory")] = None,
    ext: Annotated[
        Optional[List[str]], typer.Option("--ext", help="Source file extension (repeatable)")
    ] = None,
    exclude: Annotated[
        Optional[List[str]], typer.Option("--exclude", help="Glob of paths to skip (repeatable)")
    ] = None,
) -> None:
    """
    Build the repository map, code schematics and vector index.
    """
    try:
        config = _config(ctx)
        index_config = override(
            config.index,
            extensions=tuple(ext) if ext else None,
            exclude=tuple(exclude) if exclude else None,
        )
        config = dataclasses.replace(
            config,
            repo_root=str(root),
            index_dir=str(out) if out else config.index_dir,
            index=index_config,
        )
        built, location = run_index(config)
        rprint(
            f"[green]Indexed {len(built.repo_map)} files "
            f"({len(built.vector_index)} documents) into {location}[/green]"
        )
    except Exception as e:
        handle_error(e)


@app.command()
def info(
    ctx: typer.Context,
    index_dir: Annotated[
        Optional[Path], typer.Option("--index", help="Index directory to inspect")
    ] = None,
    root: Annotated[
        Optional[Path], typer.Option("--root", help="Repository whose default index to inspect")
    ] = None,
) -> None:
    """
    Show metadata of a persisted index.
    """
    try:
        config = _config(ctx)
        if root:
            config = dataclasses.replace(config, repo_root=str(root))
        location = index_dir or index_dir_of(config)
        details = get_index_info(location)
        if not details.exists:
            rprint(f"[yellow]No index found at {location}[/yellow]")
            return
        console.print(build_index_table(details, str(location)))
    except Exception as e:
        handle_error(e)


@app.command()
def localize(
    ctx: typer.Context,
    issue: Annotated[str, typer.Option("--issue", help="Issue text file, or '-' for stdin")],
    index_dir: Annotated[Optional[Path], typer.Option("--index", help="Index directory")] = None,
    root: Annotated[
        Optional[Path], typer.Option("--root", help="Repository root (defaults to cwd)")
    ] = None,
    top_k: Annotated[
        Optional[int], typer.Option("--top-k", help="Candidate files kept after the union")
    ] = None,
    l_max: Annotated[
        Optional[int], typer.Option("--l-max", help="Files kept for location extraction")
    ] = None,
    out: Annotated[Optional[Path], typer.Option("--out", help="Where to write the plan")] = None,
) -> None:
    """
    Localize the issue to files and edit locations and write the edit plan.
    """
    try:
        config = _config(ctx)
        config = dataclasses.replace(
            config,
            repo_root=str(root) if root else config.repo_root,
            index_dir=str(index_dir) if index_dir else config.index_dir,
            localizer=override(config.localizer, cap=top_k, l_max=l_max),
        )
        problem = read_problem(issue, config.repo_root or ".")
        result = run_localize(config, problem, out=out)
        for renderable in build_localization_view(result):
            console.print(renderable)
        if out:
            rprint(f"[dim]Plan written to {out}[/dim]")
        else:
            rprint(f"[dim]Plan written to the run directory ({PLAN_FILE})[/dim]")
    except Exception as e:
        handle_error(e)


@app.command()
def fix(
    ctx: typer.Context,
    issue: Annotated[str, typer.Option("--issue", help="Issue text file, or '-' for stdin")],
    index_dir: Annotated[Optional[Path], typer.Option("--index", help="Index directory")] = None,
    root: Annotated[
        Optional[Path], typer.Option("--root", help="Repository root (defaults to cwd)")
    ] = None,
    k: Annotated[
        Optional[int], typer.Option("--k", help="Number of candidate solutions")
    ] = None,
    temps: Annotated[
        Optional[str], typer.Option("--temps", help="Comma-separated sampling temperatures")
    ] = None,
    retry: Annotated[
        Optional[int], typer.Option("--retry", help="Retries per structured completion")
    ] = None,
    out: Annotated[Optional[Path], typer.Option("--out", help="Artifact output directory")] = None,
    reindex: bool = typer.Option(False, "--reindex", help="Rebuild the index before fixing"),
) -> None:
    """
    Run the full pipeline and write the chosen patch.
    """
    try:
        config = _config(ctx)
        temperatures = parse_temperatures(temps) or config.engine.temperatures
        if k is not None:
            if temps is not None and len(temperatures) != k:
                raise ConfigurationError(
                    f"--k {k} does not match {len(temperatures)} temperatures"
                )
            if temps is None:
                temperatures = resize_schedule(temperatures, k)
        config = dataclasses.replace(
            config,
            repo_root=str(root) if root else config.repo_root,
            index_dir=str(index_dir) if index_dir else config.index_dir,
            out_dir=str(out) if out else config.out_dir,
            engine=override(config.engine, temperatures=temperatures, retry_budget=retry),
        )
        problem = read_problem(issue, config.repo_root or ".")
        outcome = run_fix(config, problem, reindex=reindex)

        if outcome.candidates:
            chosen = outcome.solutions.chosen if outcome.solutions else None
            console.print(build_solutions_table(outcome.candidates, chosen))
        if outcome.error is not None:
            stage = outcome.report.get("failed_stage")
            error_console.print(f"[red]Error:[/red] {stage}: {outcome.error}")
            rprint(f"[dim]Report written to {outcome.out_dir}[/dim]")
            raise typer.Exit(code=outcome.error.exit_code)
        rprint(f"[green]Patch written to {outcome.out_dir / 'chosen.patch'}[/green]")
    except typer.Exit:
        raise
    except Exception as e:
        handle_error(e)


@app.command("eval")
def evaluate(
    ctx: typer.Context,
    instances: Annotated[Path, typer.Option("--instances", help="JSON-lines instance file")],
    checkouts: Annotated[
        Optional[Path],
        typer.Option("--checkouts", help="Checkout directory for benchmark-shaped records"),
    ] = None,
    with_fix: bool = typer.Option(False, "--fix", help="Also run the full fix per instance"),
) -> None:
    """
    Score file localization (and optionally resolution) over instances.
    """
    try:
        config = _config(ctx)
        loaded = load_instances(instances, checkouts_dir=checkouts)
        report = run_eval(loaded, config, fix=with_fix)
        console.print(build_eval_table(report))
        rprint(f"Top-5 localization: [bold]{format_rate(report.top5)}[/bold]")
    except Exception as e:
        handle_error(e)


def run() -> None:
    app()
