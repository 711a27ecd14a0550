"""
Syntax-guided textual editing.

Edit targets are resolved to line spans with the parser, and replacements are
spliced between the untouched prefix and suffix of the file, so that bytes
outside the span never change.
"""

import ast
import io
import logging
import os
import re
import tokenize
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Set, Tuple

from repofix.core import (
    CodeUnit,
    EditRejectedError,
    LocationLevel,
    PlanElement,
    RelevantLocation,
    ResolutionError,
    UnitKind,
)
from repofix.parsers import format_syntax_error, parse_file
from repofix.workspace import read_source, split_lines, write_source

logger = logging.getLogger(__name__)

SNAP_TOLERANCE = 2

_FSTRING_START = getattr(tokenize, "FSTRING_START", None)
_FSTRING_END = getattr(tokenize, "FSTRING_END", None)


@dataclass(frozen=True)
class EditTarget:
    location: RelevantLocation
    resolved_span: Tuple[int, int]
    indent: str


@dataclass(frozen=True)
class GeneratedCode:
    text: str
    temperature: float = 0.0
    attempt: int = 1


@dataclass(frozen=True)
class SpliceResult:
    new_content: str
    changed_span: Tuple[int, int]
    syntax_ok: bool
    replaced_span: Tuple[int, int] = (0, 0)
    diagnostic: Optional[str] = None

    @property
    def line_delta(self) -> int:
        new_len = self.changed_span[1] - self.changed_span[0] + 1
        old_len = self.replaced_span[1] - self.replaced_span[0] + 1
        return new_len - old_len


def _leading(line: str) -> str:
    return line[: len(line) - len(line.lstrip(" \t"))]


def _is_blank(line: str) -> bool:
    return not line.strip()


def extract_span(content: str, span: Tuple[int, int]) -> str:
    """Text of 1-based inclusive line span."""
    return "".join(split_lines(content)[span[0] - 1 : span[1]])


def _matching_units(units: List[CodeUnit], location: RelevantLocation) -> List[CodeUnit]:
    if location.level == LocationLevel.CLASS:
        kinds = {UnitKind.CLASS}
    else:
        kinds = {UnitKind.FUNCTION, UnitKind.METHOD}
    named = [u for u in units if u.kind in kinds and u.qualified_name == location.name]
    if not named:
        # Unqualified method names are accepted when they are unambiguous by line.
        named = [u for u in units if u.kind in kinds and u.name == location.name]
    return named


def find_unit(units: List[CodeUnit], location: RelevantLocation) -> CodeUnit:
    """Disambiguates a named location by its start line.

    An exact start line (decorator or def line) wins; otherwise the location
    snaps onto the single candidate within SNAP_TOLERANCE lines.

    Raises:
        ResolutionError: If no unique unit matches
    """
    named = _matching_units(units, location)
    if not named:
        raise ResolutionError(
            f"No {location.level.value} named '{location.name}' in {location.file}"
        )
    line = location.start_line
    exact = [u for u in named if line in (u.start_line, u.def_line)]
    if len(exact) == 1:
        return exact[0]
    near = [
        u
        for u in named
        if min(abs(u.start_line - line), abs(u.def_line - line)) <= SNAP_TOLERANCE
    ]
    if len(near) == 1:
        logger.debug(
            f"Snapped {location.name} from line {line} to line {near[0].start_line}"
        )
        return near[0]
    found = ", ".join(str(u.start_line) for u in named)
    raise ResolutionError(
        f"'{location.name}' at line {line} does not match a unique definition in "
        f"{location.file} (definitions start at lines {found})"
    )


def resolve_span(content: str, location: RelevantLocation) -> EditTarget:
    """Resolves a location to a concrete span of the current file content.

    Raises:
        ResolutionError: When the location does not correspond to a unique span
    """
    lines = split_lines(content)
    schematic = parse_file(location.file, content)
    if not schematic.parse_ok:
        raise ResolutionError(
            f"{location.file} does not parse: {schematic.parse_error}"
        )

    if location.level == LocationLevel.TOP_LEVEL:
        if location.end_line is None:
            raise ResolutionError("Top-level locations need an end line")
        start = max(1, location.start_line)
        end = min(len(lines), location.end_line)
        if start > end:
            raise ResolutionError(
                f"Top-level span {location.start_line}-{location.end_line} is outside "
                f"{location.file} ({len(lines)} lines)"
            )
        for unit in schematic.units:
            if unit.overlaps(start, end):
                raise ResolutionError(
                    f"Top-level span {start}-{end} intersects {unit.kind.value} "
                    f"'{unit.qualified_name}' (lines {unit.start_line}-{unit.end_line})"
                )
        first = next((ln for ln in lines[start - 1 : end] if not _is_blank(ln)), "")
        return EditTarget(location=location, resolved_span=(start, end), indent=_leading(first))

    unit = find_unit(schematic.units, location)
    indent = _leading(lines[unit.def_line - 1]) if unit.def_line else ""
    return EditTarget(location=location, resolved_span=unit.span, indent=indent)


def string_continuation_lines(text: str) -> Set[int]:
    """0-based indices of lines that continue a multi-line string literal."""
    return _scan(text)[0]


def _scan(text: str) -> Tuple[Set[int], List[int]]:
    """String continuation lines and first lines of logical statements (0-based)."""
    inside: Set[int] = set()
    starts: List[int] = []
    open_fstrings: List[int] = []
    at_line_start = True
    try:
        for tok in tokenize.generate_tokens(io.StringIO(text).readline):
            if tok.type in (tokenize.NEWLINE, tokenize.NL):
                at_line_start = True
                continue
            if tok.type in (tokenize.INDENT, tokenize.DEDENT, tokenize.COMMENT, tokenize.ENDMARKER):
                continue
            if at_line_start:
                starts.append(tok.start[0] - 1)
                at_line_start = False
            if tok.type == tokenize.STRING and tok.end[0] > tok.start[0]:
                inside.update(range(tok.start[0], tok.end[0]))
            elif _FSTRING_START is not None and tok.type == _FSTRING_START:
                open_fstrings.append(tok.start[0])
            elif _FSTRING_END is not None and tok.type == _FSTRING_END and open_fstrings:
                start_row = open_fstrings.pop()
                inside.update(range(start_row, tok.end[0]))
    except (tokenize.TokenError, IndentationError, SyntaxError):
        lines = split_lines(text)
        return set(), [i for i, line in enumerate(lines) if not _is_blank(line)]
    return inside, starts


def base_indent(text: str) -> str:
    """Common leading whitespace of the statements in text."""
    lines = split_lines(text)
    _, starts = _scan(text)
    if not starts:
        return ""
    return os.path.commonprefix([_leading(lines[i]) for i in starts])


def _indentable(lines: List[str], text: str) -> List[int]:
    skip, _ = _scan(text)
    return [i for i, line in enumerate(lines) if i not in skip and not _is_blank(line)]


def dedent_code(text: str) -> str:
    """Removes the common statement indentation, leaving string bodies alone."""
    prefix = base_indent(text)
    if not prefix:
        return text
    lines = split_lines(text)
    for i in _indentable(lines, text):
        if lines[i].startswith(prefix):
            lines[i] = lines[i][len(prefix) :]
    return "".join(lines)


def indent_code(text: str, indent: str) -> str:
    if not indent:
        return text
    lines = split_lines(text)
    for i in _indentable(lines, text):
        lines[i] = indent + lines[i]
    return "".join(lines)


def _trim_blank_lines(text: str) -> str:
    lines = split_lines(text)
    while lines and _is_blank(lines[0]):
        lines.pop(0)
    while lines and _is_blank(lines[-1]):
        lines.pop()
    return "".join(lines)


def prepare_replacement(text: str) -> Tuple[str, str]:
    """Normalizes a replacement and checks that it parses at column 0.

    Returns:
        (trimmed text, text dedented to column 0)

    Raises:
        EditRejectedError: With the parser diagnostic
    """
    trimmed = _trim_blank_lines(text.replace("\r\n", "\n"))
    dedented = dedent_code(trimmed)
    try:
        ast.parse(dedented)
    except (SyntaxError, ValueError) as e:
        raise EditRejectedError(
            f"Generated code does not parse: {format_syntax_error(e)}"
        ) from e
    return trimmed, dedented


def splice(content: str, target: EditTarget, replacement: GeneratedCode) -> SpliceResult:
    """Replaces the target span with the re-indented replacement.

    Raises:
        EditRejectedError: If the replacement does not parse on its own
    """
    trimmed, dedented = prepare_replacement(replacement.text)
    if base_indent(trimmed) == target.indent:
        code = trimmed
    else:
        code = indent_code(dedented, target.indent)

    lines = split_lines(content)
    start, end = target.resolved_span
    original = lines[start - 1 : end]
    newline = "\r\n" if original and original[-1].endswith("\r\n") else "\n"

    if code:
        code = code.rstrip("\n") + "\n"
        if newline != "\n":
            code = re.sub(r"(?<!\r)\n", newline, code)
        if original and not original[-1].endswith("\n"):
            code = code[: -len(newline)]

    prefix = "".join(lines[: start - 1])
    suffix = "".join(lines[end:])
    new_content = prefix + code + suffix

    new_len = len(split_lines(code))
    changed = (start, start + new_len - 1)

    diagnostic = None
    try:
        ast.parse(new_content)
        syntax_ok = True
    except (SyntaxError, ValueError) as e:
        syntax_ok = False
        diagnostic = f"Edited file does not parse: {format_syntax_error(e)}"

    return SpliceResult(
        new_content=new_content,
        changed_span=changed,
        syntax_ok=syntax_ok,
        replaced_span=(start, end),
        diagnostic=diagnostic,
    )


def apply_plan_element(workspace, element: PlanElement, code: GeneratedCode) -> SpliceResult:
    """Resolves, splices and writes one plan element inside a workspace.

    The file is written only when the edited content parses.

    Raises:
        ResolutionError: If the file is missing or the location does not resolve
        EditRejectedError: If the replacement does not parse, or does not fit the
                           file's encoding
    """
    path = Path(workspace) / element.location.file
    if not path.is_file():
        raise ResolutionError(f"File not found in workspace: {element.location.file}")

    content = read_source(path)
    target = resolve_span(content, element.location)
    result = splice(content, target, code)
    if result.syntax_ok:
        try:
            write_source(path, result.new_content)
        except UnicodeEncodeError as e:
            raise EditRejectedError(
                f"Edited {element.location.file} cannot be written as {e.encoding}: {e.reason}"
            ) from e
        logger.debug(
            f"Applied edit to {element.location.file} lines "
            f"{target.resolved_span[0]}-{target.resolved_span[1]}"
        )
    else:
        logger.debug(f"Edit to {element.location.file} rejected: {result.diagnostic}")
    return result


@dataclass
class LineShifts:
    """Tracks how earlier edits moved the lines of later plan elements."""

    edits: Dict[str, List[Tuple[int, int]]] = field(default_factory=dict)

    def record(self, file: str, result: SpliceResult) -> None:
        self.edits.setdefault(file, []).append((result.replaced_span[1], result.line_delta))

    def adjust(self, location: RelevantLocation) -> RelevantLocation:
        delta = 0
        for end, d in self.edits.get(location.file, []):
            if location.start_line + delta > end:
                delta += d
        if not delta:
            return location
        end_line = location.end_line + delta if location.end_line is not None else None
        return replace(location, start_line=location.start_line + delta, end_line=end_line)
