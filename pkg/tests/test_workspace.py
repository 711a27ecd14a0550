"""Tests for workspace.py module."""

import random

import pytest

from repofix.core import PatchApplyError, WorkspaceError
from repofix import workspace as ws


# Test scratch lifecycle
def test_scratch_copy_matches_pristine(sample_repo, tmp_path):
    scratch = ws.create_scratch(sample_repo, parent=tmp_path / "scratch")
    try:
        assert ws.tree_hashes(scratch) == ws.tree_hashes(sample_repo)
    finally:
        ws.destroy(scratch)


def test_scratch_copies_are_isolated(sample_repo):
    a = ws.create_scratch(sample_repo)
    b = ws.create_scratch(sample_repo)
    try:
        (a / "calc" / "stats.py").write_text("changed\n")
        assert (b / "calc" / "stats.py").read_text() != "changed\n"
        assert ws.tree_hashes(b) == ws.tree_hashes(sample_repo)
    finally:
        ws.destroy(a)
        ws.destroy(b)


def test_destroy_is_idempotent(sample_repo):
    scratch = ws.create_scratch(sample_repo)
    ws.destroy(scratch)
    ws.destroy(scratch)
    assert not scratch.exists()
    assert not scratch.parent.exists()


def test_scratch_of_missing_checkout(tmp_path):
    with pytest.raises(WorkspaceError, match="not found"):
        ws.create_scratch(tmp_path / "missing")


def test_scratch_insufficient_disk(sample_repo, monkeypatch):
    class Usage:
        free = 1

    monkeypatch.setattr(ws.shutil, "disk_usage", lambda path: Usage())
    with pytest.raises(WorkspaceError, match="Insufficient disk"):
        ws.create_scratch(sample_repo)


def test_scratch_skips_tool_state(sample_repo):
    """Test that a .repofix directory in the checkout is neither copied nor diffed."""
    state = sample_repo / ".repofix" / "runs" / "old"
    state.mkdir(parents=True)
    (state / "report.json").write_text("{}\n")

    scratch = ws.create_scratch(sample_repo)
    try:
        assert not (scratch / ".repofix").exists()
        assert (scratch / "calc" / "stats.py").is_file()
        assert ws.diff_workspace(sample_repo, scratch) == ""
    finally:
        ws.destroy(scratch)


# Test diffs
def test_split_lines_keeps_endings():
    assert ws.split_lines("a\r\nb\x0cc\nd") == ["a\r\n", "b\x0cc\n", "d"]
    assert ws.split_lines("") == []


def test_file_diff_headers():
    patch = ws.file_diff("pkg/m.py", "a\nb\n", "a\nc\n")
    assert patch.startswith("--- a/pkg/m.py\n+++ b/pkg/m.py\n@@ -1,2 +1,2 @@\n")
    assert "-b\n+c\n" in patch
    assert ws.file_diff("pkg/m.py", "same\n", "same\n") == ""


def test_file_diff_missing_newline():
    patch = ws.file_diff("m.py", "x = 1", "x = 2")
    assert patch.count(ws.NO_EOL) == 2


def test_file_diff_new_and_deleted_files():
    created = ws.file_diff("new.py", None, "x = 1\n")
    assert created.startswith("--- /dev/null\n+++ b/new.py\n")
    deleted = ws.file_diff("old.py", "x = 1\n", None)
    assert deleted.startswith("--- a/old.py\n+++ /dev/null\n")


# Test patch application
def test_diff_then_apply_reproduces_workspace(sample_repo):
    scratch = ws.create_scratch(sample_repo)
    target = ws.create_scratch(sample_repo)
    try:
        stats = scratch / "calc" / "stats.py"
        ws.write_source(stats, ws.read_source(stats).replace("(len(values) - 1)", "len(values)"))
        (scratch / "calc" / "extra.py").write_text("VALUE = 1")
        (scratch / "calc" / "text.py").unlink()

        patch = ws.diff_workspace(sample_repo, scratch)
        touched = ws.apply_patch(target, patch)
        assert sorted(touched) == ["calc/extra.py", "calc/stats.py", "calc/text.py"]
        assert ws.tree_hashes(target) == ws.tree_hashes(scratch)
    finally:
        ws.destroy(scratch)
        ws.destroy(target)


def test_apply_patch_random_edits(tmp_path):
    """Test that diffs of random line edits apply back exactly."""
    rng = random.Random(11)
    for trial in range(50):
        lines = [f"line {i}{' x' * rng.randint(0, 2)}\n" for i in range(rng.randint(1, 40))]
        before = "".join(lines)
        edited = list(lines)
        for _ in range(rng.randint(1, 5)):
            op = rng.choice(["insert", "delete", "replace"])
            pos = rng.randrange(len(edited) + 1)
            if op == "insert":
                edited.insert(pos, f"new {trial}\n")
            elif edited and pos < len(edited):
                if op == "delete":
                    del edited[pos]
                else:
                    edited[pos] = f"changed {pos}\n"
        after = "".join(edited)
        if rng.random() < 0.3:
            after = after.rstrip("\n")

        root = tmp_path / f"t{trial}"
        root.mkdir()
        ws.write_source(root / "f.txt", before)
        ws.apply_patch(root, ws.file_diff("f.txt", before, after))
        assert ws.read_source(root / "f.txt") == after


def test_failing_patch_leaves_tree_untouched(sample_repo):
    before = ws.tree_hashes(sample_repo)
    good = ws.file_diff("calc/text.py", ws.read_source(sample_repo / "calc" / "text.py"), "x = 1\n")
    bad = ws.file_diff("calc/stats.py", "not the content\n", "other\n")
    with pytest.raises(PatchApplyError, match="does not apply"):
        ws.apply_patch(sample_repo, good + bad)
    assert ws.tree_hashes(sample_repo) == before


def test_apply_patch_errors(tmp_path):
    with pytest.raises(PatchApplyError, match="not found"):
        ws.apply_patch(tmp_path, ws.file_diff("missing.py", "a\n", "b\n"))
    (tmp_path / "exists.py").write_text("x\n")
    with pytest.raises(PatchApplyError, match="already exists"):
        ws.apply_patch(tmp_path, ws.file_diff("exists.py", None, "y\n"))
    with pytest.raises(PatchApplyError, match="Malformed hunk"):
        ws.apply_patch(tmp_path, "--- a/exists.py\n+++ b/exists.py\n@@ nonsense @@\n")
