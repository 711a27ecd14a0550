"""
Repository indexing for repofix.

This module walks a repository, builds the repository file map and per-file
schematics, embeds method-level documents, and reads/writes the index
artifacts (repo_map.json, schematics.json, embedding_docs.jsonl, vectors.idx,
index.json).
"""

import fnmatch
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from repofix.config import EmbedderConfig, IndexConfig
from repofix.core import (
    ROOT_DIR_KEY,
    Arg,
    CodeUnit,
    CorruptArtifactError,
    FileSchematic,
    IndexingError,
    RepoFileMap,
    UnitKind,
)
from repofix.parsers import build_embedding_documents, parse_file
from repofix import vectors

logger = logging.getLogger(__name__)

MANIFEST_FILE = "index.json"
REPO_MAP_FILE = "repo_map.json"
SCHEMATICS_FILE = "schematics.json"
INDEX_ARTIFACT_VERSION = 1


@dataclass
class RepoIndex:
    """Everything the localizer needs about one repository."""

    root: str
    repo_map: RepoFileMap
    schematics: Dict[str, FileSchematic]
    vector_index: vectors.VectorIndex


@dataclass
class IndexInfo:
    """Metadata about a persisted index."""

    exists: bool
    version: Optional[int]
    root: Optional[str]
    created: Optional[str]
    embedder: Optional[str]
    dim: Optional[int]
    file_count: int
    unit_count: int
    document_count: int


def _is_excluded(rel_dir: str, name: str, config: IndexConfig) -> bool:
    if name in config.excluded_dirs:
        return True
    rel_path = f"{rel_dir}/{name}" if rel_dir != ROOT_DIR_KEY else name
    return any(
        fnmatch.fnmatch(name, pattern) or fnmatch.fnmatch(rel_path, pattern)
        for pattern in config.exclude
    )


def scan_repository(root, config: Optional[IndexConfig] = None) -> RepoFileMap:
    """Builds the repository file map of all source files under root.

    Args:
        root: Repository root directory
        config: Extension set and exclusions

    Returns:
        RepoFileMap keyed by '/'-separated directory relative to root ('.' for root)

    Raises:
        IndexingError: If root does not exist or is not a directory
    """
    config = config or IndexConfig()
    root_path = Path(root)
    if not root_path.is_dir():
        raise IndexingError(f"Repository root not found or not a directory: {root}")

    repo_map = RepoFileMap()

    def on_error(err: OSError) -> None:
        message = f"Skipping unreadable directory {err.filename}: {err.strerror}"
        logger.warning(message)
        repo_map.warnings.append(message)

    for current, dirs, files in os.walk(root_path, onerror=on_error):
        rel = Path(current).relative_to(root_path).as_posix()
        rel_dir = ROOT_DIR_KEY if rel in ("", ".") else rel
        dirs[:] = sorted(d for d in dirs if not _is_excluded(rel_dir, d, config))

        names = sorted(
            f
            for f in files
            if f.endswith(config.extensions)
            and not _is_excluded(rel_dir, f, config)
            and os.path.isfile(os.path.join(current, f))
        )
        if names:
            repo_map.entries[rel_dir] = names

    logger.debug(f"Scanned {root_path}: {len(repo_map)} source files")
    return repo_map


def render_repo_map(repo_map: RepoFileMap, max_depth: Optional[int] = None) -> str:
    """Serializes the map with sorted keys, one directory per line.

    Args:
        repo_map: The repository file map
        max_depth: Only include directories at most this many levels deep

    Returns:
        Byte-stable JSON text
    """
    keys = sorted(repo_map.entries)
    if max_depth is not None:
        keys = [k for k in keys if k == ROOT_DIR_KEY or k.count("/") < max_depth]
    if not keys:
        return "{}"
    lines = [
        f"  {json.dumps(key, ensure_ascii=False)}: "
        f"{json.dumps(repo_map.entries[key], ensure_ascii=False)}"
        for key in keys
    ]
    return "{\n" + ",\n".join(lines) + "\n}"


def fit_repo_map(repo_map: RepoFileMap, token_budget: int) -> Tuple[str, bool]:
    """Renders the map, dropping deeper directories until it fits the budget.

    Tokens are approximated as four characters each.

    Returns:
        (rendered text, whether truncation occurred)
    """
    text = render_repo_map(repo_map)
    if len(text) // 4 <= token_budget:
        return text, False

    depth = max((k.count("/") + 1 for k in repo_map.entries if k != ROOT_DIR_KEY), default=1)
    while depth > 1:
        depth -= 1
        text = render_repo_map(repo_map, max_depth=depth)
        if len(text) // 4 <= token_budget:
            break
    logger.warning(f"Repository map truncated to depth {depth} to fit the token budget")
    return text, True


def parse_repository(root, repo_map: RepoFileMap, workers: int = 1) -> Dict[str, FileSchematic]:
    """Parses every mapped file; the result is ordered by path."""
    root_path = Path(root)

    def parse_one(rel_path: str) -> FileSchematic:
        try:
            source = (root_path / rel_path).read_bytes()
        except OSError as e:
            return FileSchematic(path=rel_path, units=[], parse_ok=False, parse_error=str(e))
        return parse_file(rel_path, source)

    paths = sorted(repo_map.paths())
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        schematics = list(pool.map(parse_one, paths))

    failed = [s.path for s in schematics if not s.parse_ok]
    if failed:
        logger.warning(f"{len(failed)} file(s) failed to parse: {', '.join(failed[:5])}")
    return {s.path: s for s in schematics}


def build_vector_index(
    schematics: Dict[str, FileSchematic], embedder: vectors.Embedder
) -> vectors.VectorIndex:
    index = vectors.VectorIndex(embedder.dim)
    for path in sorted(schematics):
        for doc in build_embedding_documents(schematics[path]):
            index.add(doc, vectors.embed(doc.document, embedder))
    return index.freeze()


def build_index(
    root,
    config: Optional[IndexConfig] = None,
    embedder: Optional[vectors.Embedder] = None,
) -> RepoIndex:
    """Scans, parses and embeds a repository."""
    config = config or IndexConfig()
    embedder = embedder or vectors.HashEmbedder()
    repo_map = scan_repository(root, config)
    schematics = parse_repository(root, repo_map, workers=config.workers)
    vector_index = build_vector_index(schematics, embedder)
    logger.debug(
        f"Indexed {len(schematics)} files, {len(vector_index)} embedding documents"
    )
    return RepoIndex(
        root=str(Path(root).resolve()),
        repo_map=repo_map,
        schematics=schematics,
        vector_index=vector_index,
    )


def _unit_to_dict(unit: CodeUnit) -> Dict[str, Any]:
    return {
        "kind": unit.kind.value,
        "name": unit.name,
        "qualified_name": unit.qualified_name,
        "args": [[a.name, a.annotation, a.default] for a in unit.args],
        "signature": unit.signature,
        "decorators": list(unit.decorators),
        "docstring": unit.docstring,
        "return_statements": list(unit.return_statements),
        "span": [unit.span[0], unit.span[1]],
        "parent_class": unit.parent_class,
        "def_line": unit.def_line,
    }


def _dict_to_unit(data: Dict[str, Any]) -> CodeUnit:
    return CodeUnit(
        kind=UnitKind(data["kind"]),
        name=data["name"],
        qualified_name=data["qualified_name"],
        span=(int(data["span"][0]), int(data["span"][1])),
        signature=data.get("signature", ""),
        args=tuple(Arg(a[0], a[1], a[2]) for a in data.get("args", [])),
        decorators=tuple(data.get("decorators", [])),
        docstring=data.get("docstring"),
        return_statements=tuple(data.get("return_statements", [])),
        parent_class=data.get("parent_class"),
        def_line=int(data.get("def_line", 0)),
    )


def schematic_to_dict(schematic: FileSchematic) -> Dict[str, Any]:
    return {
        "path": schematic.path,
        "parse_ok": schematic.parse_ok,
        "parse_error": schematic.parse_error,
        "units": [_unit_to_dict(u) for u in schematic.units],
    }


def dict_to_schematic(data: Dict[str, Any]) -> FileSchematic:
    return FileSchematic(
        path=data["path"],
        units=[_dict_to_unit(u) for u in data.get("units", [])],
        parse_ok=bool(data.get("parse_ok", True)),
        parse_error=data.get("parse_error"),
    )


def write_index(
    index: RepoIndex, out_dir, embedder_config: Optional[EmbedderConfig] = None
) -> Path:
    """Writes all index artifacts into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    (out / REPO_MAP_FILE).write_text(render_repo_map(index.repo_map) + "\n", encoding="utf-8")
    with open(out / SCHEMATICS_FILE, "w", encoding="utf-8") as f:
        json.dump(
            [schematic_to_dict(index.schematics[p]) for p in sorted(index.schematics)],
            f,
            indent=2,
        )
    vectors.persist(index.vector_index, out)

    embedder_config = embedder_config or EmbedderConfig()
    manifest = {
        "version": INDEX_ARTIFACT_VERSION,
        "timestamp": datetime.now(timezone.utc).isoformat(),
        "root": index.root,
        "embedder": embedder_config.backend,
        "embedder_model": embedder_config.model or None,
        "dim": index.vector_index.dim,
        "file_count": len(index.schematics),
        "unit_count": sum(len(s.units) for s in index.schematics.values()),
        "document_count": len(index.vector_index),
        "warnings": index.repo_map.warnings,
    }
    with open(out / MANIFEST_FILE, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    logger.debug(f"Wrote index artifacts to {out}")
    return out


def _read_json(path: Path) -> Any:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise CorruptArtifactError(f"Missing index artifact {path}") from e
    except json.JSONDecodeError as e:
        raise CorruptArtifactError(f"Corrupt index artifact {path}: {e}") from e


def load_index(index_dir) -> RepoIndex:
    """Loads index artifacts written by write_index."""
    src = Path(index_dir)
    manifest = _read_json(src / MANIFEST_FILE)
    if manifest.get("version") != INDEX_ARTIFACT_VERSION:
        raise CorruptArtifactError(
            f"Index version mismatch (expected {INDEX_ARTIFACT_VERSION}, "
            f"got {manifest.get('version')}). Rebuild the index."
        )

    raw_map = _read_json(src / REPO_MAP_FILE)
    try:
        repo_map = RepoFileMap(entries={k: list(v) for k, v in raw_map.items()})
        schematics = {
            d["path"]: dict_to_schematic(d) for d in _read_json(src / SCHEMATICS_FILE)
        }
    except (AttributeError, KeyError, TypeError, ValueError) as e:
        raise CorruptArtifactError(f"Corrupt index artifacts in {src}: {e}") from e

    return RepoIndex(
        root=manifest.get("root", ""),
        repo_map=repo_map,
        schematics=schematics,
        vector_index=vectors.load(src),
    )


def get_index_info(index_dir) -> IndexInfo:
    """Inspects the index manifest without loading vectors."""
    path = Path(index_dir) / MANIFEST_FILE
    if not path.exists():
        return IndexInfo(
            exists=False,
            version=None,
            root=None,
            created=None,
            embedder=None,
            dim=None,
            file_count=0,
            unit_count=0,
            document_count=0,
        )
    try:
        data = _read_json(path)
    except CorruptArtifactError as e:
        logger.warning(str(e))
        data = {}
    return IndexInfo(
        exists=True,
        version=data.get("version"),
        root=data.get("root"),
        created=data.get("timestamp"),
        embedder=data.get("embedder"),
        dim=data.get("dim"),
        file_count=int(data.get("file_count", 0)),
        unit_count=int(data.get("unit_count", 0)),
        document_count=int(data.get("document_count", 0)),
    )
