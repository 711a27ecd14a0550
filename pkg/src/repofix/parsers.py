"""
Source parsing utilities.

This module turns source files into FileSchematic objects (classes, functions,
methods with their signatures, arguments, decorators, docstrings and spans) and
renders the method-level embedding documents used for retrieval.
"""

import ast
import io
import logging
import tokenize
from typing import Dict, Iterator, List, Optional, Protocol, Sequence, Tuple, Union

from repofix.core import Arg, CodeUnit, EmbeddingDocument, FileSchematic, UnitKind
from repofix.workspace import decode_source

logger = logging.getLogger(__name__)

FunctionNode = Union[ast.FunctionDef, ast.AsyncFunctionDef]

DOCUMENT_TEMPLATE = (
    "Method {name} with arguments {args} have signature as {signature} "
    "is described using {docstring} also have {decorators} as decorators "
    "and return statement described as {returns}."
)
MISSING = "None"


class SourceParser(Protocol):
    """Grammar-specific parser producing a FileSchematic."""

    def parse(self, path: str, source: str) -> FileSchematic: ...


class PythonParser:
    """Schematic extraction for Python sources via the stdlib ast module."""

    def parse(self, path: str, source: str) -> FileSchematic:
        try:
            tree = ast.parse(source, filename=path)
        except (SyntaxError, ValueError) as e:
            logger.debug(f"Failed to parse {path}: {e}")
            return FileSchematic(
                path=path, units=[], parse_ok=False, parse_error=format_syntax_error(e)
            )

        lines = source.splitlines(keepends=True)
        units: List[CodeUnit] = []
        for node in _module_level_defs(tree.body):
            if isinstance(node, ast.ClassDef):
                units.append(_class_unit(node, source, lines))
                for child in _module_level_defs(node.body, descend=False):
                    if isinstance(child, (ast.FunctionDef, ast.AsyncFunctionDef)):
                        units.append(
                            _function_unit(child, source, lines, parent_class=node.name)
                        )
            else:
                units.append(_function_unit(node, source, lines))

        return FileSchematic(path=path, units=units)


PARSERS: Dict[str, SourceParser] = {".py": PythonParser()}


def get_parser(path: str) -> Optional[SourceParser]:
    """Returns the parser registered for the file extension of path."""
    for ext, parser in PARSERS.items():
        if path.endswith(ext):
            return parser
    return None


def parse_file(path: str, source: Union[str, bytes]) -> FileSchematic:
    """Parses a repository file into its schematic.

    Args:
        path: Repo-relative path of the file
        source: Full file content; undecodable bytes produce a failed schematic

    Returns:
        FileSchematic, with parse_ok=False and a diagnostic when parsing fails
    """
    if isinstance(source, bytes):
        try:
            source = decode_source(source)
        except (SyntaxError, UnicodeDecodeError) as e:
            return FileSchematic(
                path=path,
                units=[],
                parse_ok=False,
                parse_error=f"cannot decode source: {e}",
            )

    parser = get_parser(path) or PARSERS[".py"]
    return parser.parse(path, source)


def format_syntax_error(e: Exception) -> str:
    if isinstance(e, SyntaxError):
        location = f"line {e.lineno}" if e.lineno else "unknown line"
        if e.offset:
            location += f", column {e.offset}"
        text = f"SyntaxError: {e.msg} ({location})"
        if e.text:
            text += f"\n    {e.text.rstrip()}"
        return text
    return f"{type(e).__name__}: {e}"


def _module_level_defs(
    body: Sequence[ast.stmt], descend: bool = True
) -> Iterator[Union[FunctionNode, ast.ClassDef]]:
    """Yields class and function definitions in source order.

    With descend=True, definitions nested in module-level if/try/with blocks
    are included as well (conditionally defined functions).
    """
    for stmt in body:
        if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            yield stmt
        elif descend and isinstance(stmt, ast.If):
            yield from _module_level_defs(stmt.body)
            yield from _module_level_defs(stmt.orelse)
        elif descend and isinstance(stmt, (ast.Try, ast.TryStar)):
            yield from _module_level_defs(stmt.body)
            for handler in stmt.handlers:
                yield from _module_level_defs(handler.body)
            yield from _module_level_defs(stmt.orelse)
            yield from _module_level_defs(stmt.finalbody)
        elif descend and isinstance(stmt, (ast.With, ast.AsyncWith)):
            yield from _module_level_defs(stmt.body)


def _span(node: Union[FunctionNode, ast.ClassDef]) -> Tuple[int, int]:
    start = node.lineno
    if node.decorator_list:
        start = min(start, min(d.lineno for d in node.decorator_list))
    end = node.end_lineno or node.lineno
    return start, end


def _segment(source: str, node: Optional[ast.AST]) -> Optional[str]:
    if node is None:
        return None
    return ast.get_source_segment(source, node) or ast.unparse(node)


def _decorators(node: Union[FunctionNode, ast.ClassDef], source: str) -> Tuple[str, ...]:
    return tuple("@" + (_segment(source, d) or "") for d in node.decorator_list)


def extract_signature(node: Union[FunctionNode, ast.ClassDef], lines: List[str]) -> str:
    """Returns the verbatim header text of a definition, without its colon."""
    end = node.body[0].lineno if node.body else node.end_lineno or node.lineno
    header = "".join(lines[node.lineno - 1 : end])
    header = header[node.col_offset :]

    depth = 0
    try:
        for tok in tokenize.generate_tokens(io.StringIO(header).readline):
            if tok.type != tokenize.OP:
                continue
            if tok.string in "([{":
                depth += 1
            elif tok.string in ")]}":
                depth -= 1
            elif tok.string == ":" and depth == 0:
                row, col = tok.start
                header_lines = header.splitlines(keepends=True)
                text = "".join(header_lines[: row - 1]) + header_lines[row - 1][:col]
                return text.rstrip()
    except (tokenize.TokenError, IndentationError, SyntaxError):
        pass

    # Fallback: rebuild the header from the tree.
    logger.debug(f"Falling back to unparsed signature for {node.name}")
    return ast.unparse(node).splitlines()[len(node.decorator_list)].rstrip(":")


def _args(node: FunctionNode, source: str) -> Tuple[Arg, ...]:
    a = node.args
    positional = a.posonlyargs + a.args
    defaults: List[Optional[ast.expr]] = [None] * (len(positional) - len(a.defaults))
    defaults += list(a.defaults)

    result = [
        Arg(arg.arg, _segment(source, arg.annotation), _segment(source, default))
        for arg, default in zip(positional, defaults)
    ]
    if a.vararg:
        result.append(Arg(a.vararg.arg, _segment(source, a.vararg.annotation)))
    for arg, kw_default in zip(a.kwonlyargs, a.kw_defaults):
        result.append(
            Arg(arg.arg, _segment(source, arg.annotation), _segment(source, kw_default))
        )
    if a.kwarg:
        result.append(Arg(a.kwarg.arg, _segment(source, a.kwarg.annotation)))
    return tuple(result)


def _own_returns(node: FunctionNode) -> Iterator[ast.Return]:
    """Return statements of node itself, skipping nested defs and classes."""
    stack: List[ast.AST] = list(node.body)
    found = []
    while stack:
        current = stack.pop()
        if isinstance(current, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef, ast.Lambda)):
            continue
        if isinstance(current, ast.Return):
            found.append(current)
        stack.extend(ast.iter_child_nodes(current))
    yield from sorted(found, key=lambda r: (r.lineno, r.col_offset))


def _function_unit(
    node: FunctionNode,
    source: str,
    lines: List[str],
    parent_class: Optional[str] = None,
) -> CodeUnit:
    returns = tuple(
        _segment(source, r.value) or ""
        for r in _own_returns(node)
        if r.value is not None
    )
    return CodeUnit(
        kind=UnitKind.METHOD if parent_class else UnitKind.FUNCTION,
        name=node.name,
        qualified_name=f"{parent_class}.{node.name}" if parent_class else node.name,
        span=_span(node),
        signature=extract_signature(node, lines),
        args=_args(node, source),
        decorators=_decorators(node, source),
        docstring=ast.get_docstring(node),
        return_statements=returns,
        parent_class=parent_class,
        def_line=node.lineno,
    )


def _class_unit(node: ast.ClassDef, source: str, lines: List[str]) -> CodeUnit:
    return CodeUnit(
        kind=UnitKind.CLASS,
        name=node.name,
        qualified_name=node.name,
        span=_span(node),
        signature=extract_signature(node, lines),
        decorators=_decorators(node, source),
        docstring=ast.get_docstring(node),
        def_line=node.lineno,
    )


def render_args(args: Sequence[Arg]) -> str:
    """Canonical argument rendering: bare names in brackets."""
    return str([a.name for a in args])


def render_document(unit: CodeUnit) -> str:
    """Instantiates the embedding document template for one function or method."""
    return DOCUMENT_TEMPLATE.format(
        name=unit.name,
        args=render_args(unit.args),
        signature=unit.signature,
        docstring=unit.docstring if unit.docstring else MISSING,
        decorators=", ".join(unit.decorators) if unit.decorators else MISSING,
        returns="; ".join(unit.return_statements) if unit.return_statements else MISSING,
    )


def build_embedding_documents(schematic: FileSchematic) -> List[EmbeddingDocument]:
    """Builds one embedding document per function or method unit."""
    if not schematic.parse_ok:
        return []
    return [
        EmbeddingDocument(
            document=render_document(unit),
            file_name=schematic.path,
            parent_class=unit.parent_class,
            unit_ref=(unit.qualified_name, unit.start_line),
        )
        for unit in schematic.units
        if unit.kind in (UnitKind.FUNCTION, UnitKind.METHOD)
    ]


def format_schematic(schematic: FileSchematic) -> str:
    """Renders a schematic as an indented outline for prompts."""
    if not schematic.parse_ok:
        return f"{schematic.path}: (unparseable: {schematic.parse_error})"
    if not schematic.units:
        return f"{schematic.path}: (no classes or functions)"

    out = [f"{schematic.path}:"]
    for unit in schematic.units:
        indent = "    " if unit.kind == UnitKind.METHOD else "  "
        for decorator in unit.decorators:
            out.append(f"{indent}{decorator}")
        signature = " ".join(unit.signature.split())
        out.append(f"{indent}{signature}  # lines {unit.start_line}-{unit.end_line}")
        if unit.docstring:
            summary = unit.docstring.strip().splitlines()[0]
            out.append(f'{indent}    """{summary}"""')
    return "\n".join(out)
