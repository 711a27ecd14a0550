"""
Scratch workspaces and unified diffs.

Every candidate edits its own full copy of the pristine checkout. Patches are
computed against the pristine files with repo-relative a/ and b/ paths and can
be applied back onto a checkout.
"""

import codecs
import difflib
import hashlib
import io
import logging
import os
import re
import shutil
import tempfile
import tokenize
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Tuple

from repofix.core import PatchApplyError, WorkspaceError

logger = logging.getLogger(__name__)

NO_EOL = "\\ No newline at end of file"
DEV_NULL = "/dev/null"
# Copies need this much headroom beyond the tree size.
DISK_MARGIN = 1.1
# Tool state that may sit in a checkout; never copied or diffed.
SCRATCH_IGNORE = (".repofix",)

_HUNK_HEADER = re.compile(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@")


def tree_size(root) -> int:
    total = 0
    for current, _, files in os.walk(root):
        for name in files:
            try:
                total += os.lstat(os.path.join(current, name)).st_size
            except OSError:
                continue
    return total


def create_scratch(pristine, parent=None, prefix: str = "repofix-") -> Path:
    """Copies the pristine checkout into a fresh scratch directory.

    Raises:
        WorkspaceError: If the checkout is missing, the disk is too small,
                        or the copy fails
    """
    source = Path(pristine)
    if not source.is_dir():
        raise WorkspaceError(f"Checkout not found: {pristine}")

    if parent is not None:
        Path(parent).mkdir(parents=True, exist_ok=True)
    base = tempfile.mkdtemp(prefix=prefix, dir=parent)

    needed = int(tree_size(source) * DISK_MARGIN)
    free = shutil.disk_usage(base).free
    if needed > free:
        shutil.rmtree(base, ignore_errors=True)
        raise WorkspaceError(
            f"Insufficient disk space for a workspace copy: need {needed} bytes, {free} free"
        )

    target = Path(base) / "repo"
    try:
        shutil.copytree(
            source, target, symlinks=True, ignore=shutil.ignore_patterns(*SCRATCH_IGNORE)
        )
    except (OSError, shutil.Error) as e:
        shutil.rmtree(base, ignore_errors=True)
        raise WorkspaceError(f"Failed to copy {pristine}: {e}") from e

    logger.debug(f"Created workspace {target}")
    return target


def destroy(workspace) -> None:
    """Removes a workspace created by create_scratch; safe to call twice."""
    path = Path(workspace)
    base = path.parent if path.name == "repo" else path
    if base.exists():
        shutil.rmtree(base, ignore_errors=True)
        logger.debug(f"Destroyed workspace {path}")


def tree_hashes(root, skip: Iterable[str] = ()) -> Dict[str, str]:
    """SHA-256 of every file under root, keyed by '/'-separated relative path.

    Directories named in skip are not descended.
    """
    root_path = Path(root)
    hashes = {}
    for current, dirs, files in os.walk(root_path):
        dirs[:] = sorted(d for d in dirs if d not in skip)
        for name in sorted(files):
            path = Path(current) / name
            if path.is_symlink():
                continue
            rel = path.relative_to(root_path).as_posix()
            hashes[rel] = hashlib.sha256(path.read_bytes()).hexdigest()
    return hashes


def split_lines(text: str) -> List[str]:
    """Splits on \\n only, keeping line endings."""
    parts = text.split("\n")
    lines = [p + "\n" for p in parts[:-1]]
    if parts[-1]:
        lines.append(parts[-1])
    return lines


def _diff_lines(lines: Iterable[str]) -> List[str]:
    out = []
    for line in lines:
        if line.endswith("\n"):
            out.append(line)
        else:
            out.append(line + "\n")
            out.append(NO_EOL + "\n")
    return out


def file_diff(path: str, before: Optional[str], after: Optional[str]) -> str:
    """Unified diff of one file; None stands for an absent file."""
    if before == after:
        return ""
    a = split_lines(before or "")
    b = split_lines(after or "")
    fromfile = f"a/{path}" if before is not None else DEV_NULL
    tofile = f"b/{path}" if after is not None else DEV_NULL
    lines = list(difflib.unified_diff(a, b, fromfile=fromfile, tofile=tofile))
    if not lines:
        return ""
    return "".join(lines[:2] + _diff_lines(lines[2:]))


def source_encoding(data: bytes) -> str:
    """Encoding declared by a BOM or coding cookie, as the interpreter reads it.

    Raises:
        SyntaxError: If the declaration is unknown, conflicting, or the first
                     lines are not valid UTF-8 without one
    """
    encoding, _ = tokenize.detect_encoding(io.BytesIO(data).readline)
    return encoding


def decode_source(data: bytes) -> str:
    """Decodes source bytes without newline translation; a UTF-8 BOM is dropped."""
    return data.decode(source_encoding(data))


def encode_source(text: str, previous: Optional[bytes] = None) -> bytes:
    """Encodes text in the encoding its coding cookie declares.

    A BOM carried by the previous content of the file is kept.

    Raises:
        UnicodeEncodeError: If text does not fit the declared encoding
    """
    encoding = source_encoding(text.encode("utf-8", errors="surrogatepass"))
    if encoding == "utf-8" and previous is not None and previous.startswith(codecs.BOM_UTF8):
        encoding = "utf-8-sig"
    return text.encode(encoding)


def read_source(path) -> str:
    """Reads source text without newline translation, honouring BOM and coding cookie."""
    return decode_source(Path(path).read_bytes())


def write_source(path, text: str) -> None:
    """Writes source text in the file's own encoding; nothing is written if encoding fails."""
    target = Path(path)
    previous = target.read_bytes() if target.is_file() else None
    target.write_bytes(encode_source(text, previous))


def _read(path: Path) -> Optional[str]:
    if not path.is_file():
        return None
    return read_source(path)


def diff_workspace(pristine, workspace, paths: Optional[Iterable[str]] = None) -> str:
    """Patch turning the pristine checkout into the workspace.

    Args:
        pristine: Original checkout
        workspace: Edited copy
        paths: Repo-relative files to compare; all files when omitted
    """
    if paths is None:
        original = tree_hashes(pristine, skip=SCRATCH_IGNORE)
        edited = tree_hashes(workspace, skip=SCRATCH_IGNORE)
        names = set(original) | set(edited)
        paths = [p for p in names if original.get(p) != edited.get(p)]
    chunks = []
    for rel in sorted(set(paths)):
        chunks.append(file_diff(rel, _read(Path(pristine) / rel), _read(Path(workspace) / rel)))
    return "".join(chunks)


@dataclass
class Hunk:
    old_start: int
    old_len: int
    new_start: int
    new_len: int
    lines: List[Tuple[str, str]] = field(default_factory=list)


@dataclass
class FilePatch:
    old_path: Optional[str]
    new_path: Optional[str]
    hunks: List[Hunk] = field(default_factory=list)

    @property
    def path(self) -> str:
        return self.new_path or self.old_path or ""


def _strip_prefix(name: str) -> Optional[str]:
    name = name.split("\t")[0].strip()
    if name == DEV_NULL:
        return None
    if name.startswith(("a/", "b/")):
        return name[2:]
    return name


def parse_patch(text: str) -> List[FilePatch]:
    """Splits a multi-file unified diff into per-file hunks.

    Raises:
        PatchApplyError: On malformed headers or hunks
    """
    lines = split_lines(text)
    patches: List[FilePatch] = []
    i = 0
    while i < len(lines):
        line = lines[i]
        has_header = i + 1 < len(lines) and lines[i + 1].startswith("+++ ")
        if not line.startswith("--- ") or not has_header:
            i += 1
            continue
        current = FilePatch(_strip_prefix(line[4:]), _strip_prefix(lines[i + 1][4:]))
        patches.append(current)
        i += 2
        while i < len(lines) and lines[i].startswith("@@"):
            m = _HUNK_HEADER.match(lines[i])
            if not m:
                raise PatchApplyError(f"Malformed hunk header: {lines[i].rstrip()}")
            hunk = Hunk(
                old_start=int(m.group(1)),
                old_len=int(m.group(2)) if m.group(2) is not None else 1,
                new_start=int(m.group(3)),
                new_len=int(m.group(4)) if m.group(4) is not None else 1,
            )
            i += 1
            old_seen = new_seen = 0
            while i < len(lines) and (old_seen < hunk.old_len or new_seen < hunk.new_len):
                body = lines[i]
                tag, content = body[:1], body[1:]
                if tag == "\\":
                    i += 1
                    continue
                if tag not in (" ", "-", "+"):
                    if body.strip() == "":
                        tag, content = " ", "\n"
                    else:
                        raise PatchApplyError(f"Unexpected line in hunk for {current.path}")
                if i + 1 < len(lines) and lines[i + 1].startswith("\\"):
                    content = content.rstrip("\n")
                hunk.lines.append((tag, content))
                if tag != "+":
                    old_seen += 1
                if tag != "-":
                    new_seen += 1
                i += 1
            if i < len(lines) and lines[i].startswith("\\"):
                prev_tag, prev = hunk.lines[-1]
                hunk.lines[-1] = (prev_tag, prev.rstrip("\n"))
                i += 1
            current.hunks.append(hunk)
    return patches


def apply_hunks(original: str, hunks: List[Hunk], path: str = "") -> str:
    """Applies hunks to text, verifying every context and removed line."""
    source = split_lines(original)
    out: List[str] = []
    pos = 0
    for hunk in hunks:
        start = hunk.old_start - 1 if hunk.old_len else hunk.old_start
        if start < pos or start > len(source):
            raise PatchApplyError(f"Hunk at line {hunk.old_start} out of range in {path}")
        out.extend(source[pos:start])
        pos = start
        for tag, content in hunk.lines:
            if tag == "+":
                out.append(content)
                continue
            if pos >= len(source) or source[pos] != content:
                raise PatchApplyError(
                    f"Hunk at line {hunk.old_start} does not apply to {path} (line {pos + 1})"
                )
            if tag == " ":
                out.append(content)
            pos += 1
    out.extend(source[pos:])
    return "".join(out)


def apply_patch(root, text: str) -> List[str]:
    """Applies a multi-file unified diff under root.

    Every file is checked before anything is written, so a failing patch
    leaves the tree untouched.

    Returns:
        Repo-relative paths that were written or removed

    Raises:
        PatchApplyError: If any hunk fails to apply
    """
    root_path = Path(root)
    results: List[Tuple[Path, Optional[str]]] = []
    for fp in parse_patch(text):
        if fp.old_path is None and fp.new_path is None:
            raise PatchApplyError("Patch header names no file")
        target = root_path / fp.path
        if fp.old_path is None:
            if target.exists():
                raise PatchApplyError(f"Patch creates {fp.path}, which already exists")
            original = ""
        else:
            source = root_path / fp.old_path
            if not source.is_file():
                raise PatchApplyError(f"Patched file not found: {fp.old_path}")
            original = read_source(source)
        updated = apply_hunks(original, fp.hunks, fp.path)
        results.append((target, None if fp.new_path is None else updated))

    touched = []
    for target, content in results:
        if content is None:
            target.unlink(missing_ok=True)
        else:
            target.parent.mkdir(parents=True, exist_ok=True)
            write_source(target, content)
        touched.append(target.relative_to(root_path).as_posix())
    logger.debug(f"Applied patch to {len(touched)} file(s) under {root_path}")
    return touched
