"""
Display formatting utilities for the repofix CLI.

This module renders index metadata, localization results, candidate
solutions and evaluation scores as rich tables and trees.
"""

from typing import Any, Dict, List, Optional

from rich.table import Table
from rich.tree import Tree

from repofix.core import CandidateFileSet, EditPlan
from repofix.engine import CandidateSolution, CandidateStatus
from repofix.evaluation import EvalReport
from repofix.indexer import IndexInfo
from repofix.localizer import LocalizationResult

STATUS_STYLES = {
    CandidateStatus.GENERATED: "white",
    CandidateStatus.SPLICE_FAILED: "red",
    CandidateStatus.REGRESSED: "yellow",
    CandidateStatus.SURVIVED: "green",
    CandidateStatus.REFINED: "cyan",
    CandidateStatus.SELECTED: "bold green",
}


def key_value_table() -> Table:
    table = Table(show_header=False, box=None, padding=(0, 1))
    table.add_column("Key", style="bold")
    table.add_column("Value")
    return table


def format_rate(rate: Optional[float]) -> str:
    """Format a percentage, or 'n/a' when nothing was scored."""
    return "n/a" if rate is None else f"{rate:.1f}%"


def format_span(start: int, end: Optional[int]) -> str:
    if end is None or end == start:
        return f"L{start}"
    return f"L{start}-{end}"


def build_index_table(info: IndexInfo, location: str) -> Table:
    """Build the key/value table for 'repofix info'.

    Args:
        info: Manifest metadata of a persisted index
        location: Directory the index was read from

    Returns:
        Table ready for printing
    """
    table = key_value_table()
    table.add_row("Status", "[green]Present[/green]" if info.exists else "[yellow]Missing[/yellow]")
    if info.version is not None:
        table.add_row("Version", str(info.version))
    if info.root:
        table.add_row("Repository", info.root)
    if info.created:
        table.add_row("Created", info.created)
    if info.embedder:
        table.add_row("Embedder", f"{info.embedder} (dim {info.dim})")
    table.add_row("Files", str(info.file_count))
    table.add_row("Code units", str(info.unit_count))
    table.add_row("Documents", str(info.document_count))
    table.add_row("Location", location)
    return table


def provenance_label(candidates: CandidateFileSet, path: str) -> str:
    sources = sorted(candidates.provenance.get(path, ()))
    return "+".join(sources) if sources else "-"


def build_candidates_table(candidates: CandidateFileSet, selected: List[str]) -> Table:
    """Build a table of candidate files with their provenance.

    Args:
        candidates: Ranked candidate files from retrieval and the file map
        selected: Files kept for location extraction

    Returns:
        Table with one row per candidate, selected files marked
    """
    table = Table(title="Candidate files")
    table.add_column("#", justify="right", style="dim")
    table.add_column("File")
    table.add_column("Found by")
    table.add_column("Selected", justify="center")
    for rank, path in enumerate(candidates.ranked_files, 1):
        mark = "[green]yes[/green]" if path in selected else ""
        table.add_row(str(rank), path, provenance_label(candidates, path), mark)
    return table


def build_plan_tree(plan: EditPlan) -> Tree:
    """Render an edit plan grouped by file."""
    tree = Tree("[bold]Edit plan[/bold]")
    nodes: Dict[str, Tree] = {}
    for element in plan.elements:
        loc = element.location
        node = nodes.get(loc.file)
        if node is None:
            node = nodes[loc.file] = tree.add(f"[bold blue]{loc.file}[/bold blue]")
        name = loc.name or "<module>"
        span = format_span(loc.start_line, loc.end_line)
        label = f"[green]{loc.level.value}[/green] {name} [dim]{span}[/dim]"
        node.add(label).add(f"[italic]{element.instruction}[/italic]")
    return tree


def build_localization_view(result: LocalizationResult) -> List[Any]:
    """Renderables summarizing a localization run, in display order."""
    summary = key_value_table()
    summary.add_row("Queries", str(result.queries.n))
    summary.add_row("Retrieved", ", ".join(result.rag_files) or "-")
    summary.add_row("From file map", ", ".join(result.map_files) or "-")
    if result.map_truncated:
        summary.add_row("File map", "[yellow]truncated to fit the token budget[/yellow]")
    rationale = result.selection.rationale or "-"
    summary.add_row("Selection", f"{', '.join(result.selection.files)} [dim]({rationale})[/dim]")
    for path, error in sorted(result.file_errors.items()):
        summary.add_row("Skipped", f"{path}: [red]{error}[/red]")
    return [
        summary,
        build_candidates_table(result.candidates, result.selection.files),
        build_plan_tree(result.plan),
    ]


def format_status(status: CandidateStatus) -> str:
    style = STATUS_STYLES.get(status, "white")
    return f"[{style}]{status.value}[/{style}]"


def build_solutions_table(candidates: List[CandidateSolution], chosen: Optional[int]) -> Table:
    """Build a table of candidate solutions for 'repofix fix'.

    Args:
        candidates: Every candidate the run produced
        chosen: Id of the selected candidate, if any

    Returns:
        Table with status, test counts and regressions per candidate
    """
    table = Table(title="Candidates")
    table.add_column("Id", justify="right")
    table.add_column("Temp", justify="right")
    table.add_column("Status")
    table.add_column("Tests")
    table.add_column("Regressions")
    for c in candidates:
        marker = " *" if c.id == chosen else ""
        counts = c.report.counts() if c.report else None
        if counts:
            tests = f"{counts['pass']} pass / {counts['fail'] + counts['error']} fail"
        else:
            tests = "-"
        regressed = ", ".join(c.diff.regressed_tests()) if c.diff else ""
        table.add_row(
            f"{c.id}{marker}",
            f"{c.temperature:g}",
            format_status(c.status),
            tests,
            regressed or "-",
        )
    return table


def build_eval_table(report: EvalReport) -> Table:
    """Build the per-instance table plus summary rows for 'repofix eval'."""
    table = Table(title="Evaluation")
    table.add_column("Instance")
    table.add_column("Top-1", justify="center")
    table.add_column("Top-5", justify="center")
    table.add_column("Resolved", justify="center")
    table.add_column("Note", style="dim")

    def mark(value: Optional[bool]) -> str:
        if value is None:
            return "-"
        return "[green]yes[/green]" if value else "[red]no[/red]"

    for r in report.results:
        if r.errored:
            table.add_row(r.instance_id, "-", "-", "-", r.error or "")
            continue
        table.add_row(r.instance_id, mark(r.top1_hit), mark(r.top5_hit), mark(r.resolved), "")

    table.add_section()
    table.add_row(
        f"[bold]{len(report.scored)} scored, {report.errors} errored[/bold]",
        format_rate(report.top1),
        format_rate(report.top5),
        format_rate(report.resolution),
        "",
    )
    return table
