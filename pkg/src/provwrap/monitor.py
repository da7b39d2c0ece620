"""Observation of file activity around the wrapped command.

Three independent sources feed classification: recursive content-hashed
directory snapshots taken before and after the run, an optional syscall
trace transcript, and the line-oriented control-channel file the child can
append to (addressed via the YPROV_CONTROL environment variable).
"""

from __future__ import annotations

import fnmatch
import hashlib
import logging
import os
import re
from dataclasses import dataclass
from enum import Enum
from pathlib import Path, PurePosixPath
from typing import Iterable, Sequence

from .errors import ControlParseError, TraceParseError

log = logging.getLogger(__name__)

_HASH_CHUNK = 1 << 20


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        while True:
            chunk = handle.read(_HASH_CHUNK)
            if not chunk:
                break
            digest.update(chunk)
    return digest.hexdigest()


def matches_exclusion(rel_path: str, patterns: Sequence[str]) -> bool:
    """True when rel_path or any of its ancestor directories matches a glob."""
    if not patterns:
        return False
    candidates = [rel_path]
    parent = PurePosixPath(rel_path).parent
    while str(parent) not in (".", "/", ""):
        candidates.append(str(parent))
        parent = parent.parent
    return any(
        fnmatch.fnmatchcase(candidate, pattern)
        for candidate in candidates
        for pattern in patterns
    )


class EventKind(Enum):
    READ_INTENT = "ReadIntent"
    WRITE_INTENT = "WriteIntent"
    CREATED = "Created"
    MODIFIED = "Modified"
    REMOVED = "Removed"


@dataclass(frozen=True)
class FileEvent:
    """One observed filesystem fact."""

    path: Path
    kind: EventKind
    seq: int
    pid: int | None = None


@dataclass(frozen=True)
class Snapshot:
    """Recursive listing of regular files under root: rel path -> (size, mtime, sha256)."""

    root: Path
    entries: dict[str, tuple[int, float, str]]


def take_snapshot(root: Path, excludes: Sequence[str] = ()) -> Snapshot:
    """Hash every regular file under root, skipping exclusion matches.

    Unreadable files are skipped with a warning; they never abort the
    snapshot. Symlinked directories are not followed.
    """
    root = Path(root).resolve()
    if not root.is_dir():
        raise NotADirectoryError(f"snapshot root is not a directory: {root}")
    entries: dict[str, tuple[int, float, str]] = {}
    for dirpath, dirnames, filenames in os.walk(root):
        rel_dir = os.path.relpath(dirpath, root)
        kept = []
        for name in sorted(dirnames):
            rel = name if rel_dir == "." else f"{rel_dir}/{name}"
            if not matches_exclusion(rel, excludes):
                kept.append(name)
        dirnames[:] = kept
        for name in sorted(filenames):
            rel = name if rel_dir == "." else f"{rel_dir}/{name}"
            if matches_exclusion(rel, excludes):
                continue
            full = Path(dirpath) / name
            if not full.is_file():
                continue  # fifos, sockets, dangling symlinks
            try:
                size = full.stat().st_size
                mtime = full.stat().st_mtime
                digest = sha256_file(full)
            except OSError as exc:
                log.warning("snapshot skipping unreadable file %s: %s", full, exc)
                continue
            entries[rel] = (size, mtime, digest)
    return Snapshot(root=root, entries=entries)


def diff_snapshots(before: Snapshot, after: Snapshot) -> list[FileEvent]:
    """Compare two snapshots of the same root.

    New paths become Created, vanished paths Removed, and common paths with
    differing (size, sha256) Modified; mtime alone never marks a file
    modified. Output is grouped Created/Modified/Removed, path-sorted
    within each group.
    """
    if before.root != after.root:
        raise ValueError(
            f"snapshot roots differ: {before.root} vs {after.root}"
        )
    before_keys = set(before.entries)
    after_keys = set(after.entries)
    created = sorted(after_keys - before_keys)
    removed = sorted(before_keys - after_keys)
    modified = sorted(
        rel
        for rel in before_keys & after_keys
        if (before.entries[rel][0], before.entries[rel][2])
        != (after.entries[rel][0], after.entries[rel][2])
    )
    events: list[FileEvent] = []
    for group, kind in (
        (created, EventKind.CREATED),
        (modified, EventKind.MODIFIED),
        (removed, EventKind.REMOVED),
    ):
        for rel in group:
            events.append(
                FileEvent(
                    path=(before.root / rel).resolve(),
                    kind=kind,
                    seq=len(events),
                )
            )
    return events


# --- trace transcript parsing -----------------------------------------------

_OPEN_SYSCALLS = ("open", "openat", "creat")
_WRITE_FLAGS = {"O_WRONLY", "O_RDWR", "O_CREAT", "O_TRUNC", "O_APPEND"}

_PID_PREFIX = re.compile(r"^(?:\[pid\s+(\d+)\]\s*|(\d+)\s+)")
_OPEN_CALL = re.compile(r"^(open|openat|creat)\(")
_RESUMED = re.compile(r"^<\.\.\.\s+(\w+)\s+resumed>\s*(.*)$")
_RETURN = re.compile(r"\)\s*=\s*(-?\d+)(?:\s+(.*))?$")
_FLAGS_AFTER_PATH = re.compile(r"^\s*,\s*([A-Za-z0-9_|]+)")
_UNFINISHED_SUFFIX = "<unfinished ...>"


class _Malformed(Exception):
    pass


def _unescape_path(raw: str, lineno: int) -> str:
    """Decode the backslash escapes a tracer puts inside quoted paths.

    Handles \\" \\\\ \\n \\t and 3-digit octal byte escapes; anything else
    passes through verbatim with a warning. Octal escapes are raw bytes, so
    the result is assembled as bytes and decoded as UTF-8 with surrogate
    escapes to stay lossless.
    """
    out = bytearray()
    i = 0
    while i < len(raw):
        ch = raw[i]
        if ch != "\\":
            out.extend(ch.encode("utf-8"))
            i += 1
            continue
        if i + 1 >= len(raw):
            out.extend(b"\\")
            break
        nxt = raw[i + 1]
        if nxt == '"':
            out.extend(b'"')
            i += 2
        elif nxt == "\\":
            out.extend(b"\\")
            i += 2
        elif nxt == "n":
            out.extend(b"\n")
            i += 2
        elif nxt == "t":
            out.extend(b"\t")
            i += 2
        elif raw[i + 1 : i + 4].isdigit() and len(raw[i + 1 : i + 4]) == 3:
            octal = raw[i + 1 : i + 4]
            if all(c in "01234567" for c in octal):
                out.append(int(octal, 8))
                i += 4
            else:
                log.warning("trace line %d: unknown escape \\%s kept verbatim", lineno, octal)
                out.extend(("\\" + octal).encode("utf-8"))
                i += 4
        else:
            log.warning("trace line %d: unknown escape \\%s kept verbatim", lineno, nxt)
            out.extend(("\\" + nxt).encode("utf-8"))
            i += 2
    return bytes(out).decode("utf-8", errors="surrogateescape")


def _take_quoted(text: str) -> tuple[str, int] | None:
    """Return (raw inner text, index past closing quote) of the first quoted string."""
    start = text.find('"')
    if start < 0:
        return None
    i = start + 1
    while i < len(text):
        if text[i] == "\\":
            i += 2
            continue
        if text[i] == '"':
            return text[start + 1 : i], i + 1
        i += 1
    return None


def _parse_open_call(call: str, syscall: str, lineno: int) -> tuple[str, bool]:
    """Extract (raw path, write intent) from a completed open-family call."""
    quoted = _take_quoted(call)
    if quoted is None:
        raise _Malformed(f"{syscall} call without a quoted path")
    raw_path, end = quoted
    path = _unescape_path(raw_path, lineno)
    if syscall == "creat":
        return path, True  # creat is open with O_CREAT|O_WRONLY|O_TRUNC
    flags_match = _FLAGS_AFTER_PATH.match(call[end:])
    if flags_match is None:
        raise _Malformed(f"{syscall} call without flags after the path")
    flags = set(flags_match.group(1).split("|"))
    return path, bool(flags & _WRITE_FLAGS)


def parse_trace_stream(
    lines: Iterable[str],
    strict: bool = False,
    cwd: Path | None = None,
) -> list[FileEvent]:
    """Turn a syscall tracer transcript into read/write intent events.

    Only successful open/openat/creat calls produce events; failed calls
    (return -1) and all other lines are ignored. "<unfinished ...>" lines
    are held and joined with their matching "resumed" line by (pid,
    syscall) before parsing, so the event is ordered at the resume point.
    In lenient mode (default) malformed open lines and unpaired resumed
    lines are skipped with a warning; in strict mode they raise
    TraceParseError naming the line number. When cwd is given, relative
    paths are resolved against it.
    """
    events: list[FileEvent] = []
    pending: dict[tuple[int | None, str], str] = {}

    def problem(lineno: int, message: str) -> None:
        if strict:
            raise TraceParseError(f"line {lineno}: {message}")
        log.warning("trace line %d skipped: %s", lineno, message)

    def emit(call: str, syscall: str, pid: int | None, lineno: int) -> None:
        returned = _RETURN.search(call)
        if returned is None:
            problem(lineno, f"{syscall} call without a parsable return value")
            return
        if int(returned.group(1)) < 0:
            return  # failed call
        try:
            path_text, write_intent = _parse_open_call(call, syscall, lineno)
        except _Malformed as exc:
            problem(lineno, str(exc))
            return
        path = Path(path_text)
        if cwd is not None:
            path = (cwd / path).resolve() if not path.is_absolute() else path.resolve()
        events.append(
            FileEvent(
                path=path,
                kind=EventKind.WRITE_INTENT if write_intent else EventKind.READ_INTENT,
                seq=len(events),
                pid=pid,
            )
        )

    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\n").strip()
        if not line:
            continue
        pid: int | None = None
        prefix = _PID_PREFIX.match(line)
        if prefix:
            pid = int(prefix.group(1) or prefix.group(2))
            line = line[prefix.end():]
        resumed = _RESUMED.match(line)
        if resumed:
            syscall, rest = resumed.group(1), resumed.group(2)
            if syscall not in _OPEN_SYSCALLS:
                continue
            key = (pid, syscall)
            if key not in pending:
                problem(lineno, f"resumed {syscall} with no matching unfinished call")
                continue
            emit(pending.pop(key) + rest, syscall, pid, lineno)
            continue
        call_start = _OPEN_CALL.match(line)
        if call_start is None:
            continue  # not an open-family line
        syscall = call_start.group(1)
        if line.endswith(_UNFINISHED_SUFFIX):
            pending[(pid, syscall)] = line[: -len(_UNFINISHED_SUFFIX)].rstrip()
            continue
        emit(line, syscall, pid, lineno)

    for pid, syscall in pending:
        log.warning("unfinished %s call (pid %s) never resumed", syscall, pid)
    return events


# --- control channel ----------------------------------------------------------

class DirectiveKind(Enum):
    INPUT = "INPUT"
    OUTPUT = "OUTPUT"
    UNTRACK = "UNTRACK"
    END_RUN = "END_RUN"


@dataclass(frozen=True)
class ControlDirective:
    """One parsed line of the control-channel file."""

    kind: DirectiveKind
    path: str = ""
    run_name: str | None = None
    seq: int = 0

    def to_line(self) -> str:
        """Canonical wire form, without the trailing LF."""
        if self.kind is DirectiveKind.END_RUN:
            if self.run_name is None:
                return "END_RUN"
            return f"END_RUN\t{self.run_name}"
        return f"{self.kind.value}\t{self.path}"


_PATH_VERBS = {
    "INPUT": DirectiveKind.INPUT,
    "OUTPUT": DirectiveKind.OUTPUT,
    "UNTRACK": DirectiveKind.UNTRACK,
}


def parse_control_stream(lines: Iterable[str]) -> list[ControlDirective]:
    """Parse control-channel lines: VERB<TAB>ARG, one directive per line.

    seq is the 0-based line index; blank lines are ignored but still
    consume an index. The channel is wholly under this tool's protocol, so
    any unknown verb or missing path is always an error naming the
    (1-based) line number.
    """
    directives: list[ControlDirective] = []
    for index, raw in enumerate(lines):
        line = raw[:-1] if raw.endswith("\n") else raw
        if line == "":
            continue
        verb, sep, arg = line.partition("\t")
        if verb == "END_RUN":
            run_name = arg if sep and arg != "" else None
            directives.append(
                ControlDirective(kind=DirectiveKind.END_RUN, run_name=run_name, seq=index)
            )
        elif verb in _PATH_VERBS:
            if not sep or arg == "":
                raise ControlParseError(f"line {index + 1}: {verb} requires a path")
            directives.append(
                ControlDirective(kind=_PATH_VERBS[verb], path=arg, seq=index)
            )
        else:
            raise ControlParseError(f"line {index + 1}: unknown verb {verb!r}")
    return directives
