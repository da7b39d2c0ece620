"""Merging observed events and directives into categorized artifact records.

Records land in one of three bundle sub-trees (inputs/, outputs/, src/)
mirroring their location relative to the working directory; END_RUN
directives split the merged timeline into consecutive segments, one bundle
each.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Sequence

from .monitor import (
    ControlDirective,
    DirectiveKind,
    EventKind,
    FileEvent,
    matches_exclusion,
    sha256_file,
)

log = logging.getLogger(__name__)

MEGABYTE = 1_000_000  # decimal MB

DEFAULT_EXCLUDES = (".git", "*/.git", "*__pycache__*", "*.pyc")


class Category(Enum):
    INPUT = "Input"
    OUTPUT = "Output"
    SOURCE = "Source"
    ENVIRONMENT = "Environment"


class LoggedBy(Enum):
    AUTO = "auto"
    USER = "user"


class Backend(Enum):
    AUTO = "auto"
    DIFF = "diff"
    TRACE = "trace"


@dataclass
class RunConfig:
    """Full configuration surface of one wrapped run."""

    run_name: str = "experiment_run"
    provenance_directory: str = "prov"
    prefix: str = "yProv4DA"
    default_namespace: str = "http://example.org/"
    create_json_file: bool = False
    create_dot_file: bool = False
    create_svg_file: bool = False
    create_rocrate: bool = True
    save_input_files_full: bool = True
    save_input_files_subset: bool = False
    skip_files_larger_than: int = 50
    verbose: bool = False
    source_extensions: frozenset[str] = frozenset({".py"})
    source_roots: tuple[str, ...] = ()
    watch_dirs: tuple[Path, ...] = ()
    backend: Backend = Backend.AUTO
    excludes: tuple[str, ...] = DEFAULT_EXCLUDES

    def __post_init__(self) -> None:
        if self.skip_files_larger_than <= 0:
            raise ValueError("skip_files_larger_than must be positive")
        if not self.prefix:
            raise ValueError("prefix must be non-empty")
        directory = self.provenance_directory
        if not directory or directory.startswith("/") or "/" in directory or "\\" in directory:
            raise ValueError(
                "provenance_directory must be a single relative path component"
            )


@dataclass
class ArtifactRecord:
    """A classified artifact, ready for provenance and packaging."""

    original_path: Path
    bundle_relative_path: str
    category: Category
    also_generated: bool = False
    logged_by: LoggedBy = LoggedBy.AUTO
    sha256: str | None = None
    size_bytes: int | None = None
    copied: bool = True
    skip_reason: str | None = None


@dataclass
class RunSegment:
    """One END_RUN-delimited slice of the timeline."""

    name: str
    records: list[ArtifactRecord] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)


def apply_size_threshold(record: ArtifactRecord, limit_mb: int) -> ArtifactRecord:
    """Mark records above the copy limit as metadata-only.

    The digest is kept so the entity remains identifiable even when the
    file itself is not copied into the bundle.
    """
    if record.size_bytes is None:
        raise ValueError("size_bytes must be populated before thresholding")
    if record.size_bytes > limit_mb * MEGABYTE:
        return replace(record, copied=False, skip_reason="size_threshold")
    return record


@dataclass
class _PathState:
    read_seen: bool = False
    write_seen: bool = False
    user_logged: bool = False
    untracked: bool = False


def _resolve_directive_path(raw: str, cwd: Path) -> Path:
    p = Path(raw)
    if not p.is_absolute():
        p = cwd / p
    return p.resolve()


def _relative_to_cwd(path: Path, cwd: Path) -> str | None:
    try:
        return path.relative_to(cwd).as_posix()
    except ValueError:
        return None


def _sanitize_external(path: Path) -> str:
    return str(path).replace("/", "__")


def _is_source_path(path: Path, rel: str | None, config: RunConfig) -> bool:
    if path.suffix in config.source_extensions:
        return True
    if config.source_roots:
        target = rel if rel is not None else str(path)
        if matches_exclusion(target, config.source_roots):
            return True
    return False


def _bundle_path(category: Category, rel: str | None, path: Path) -> str:
    if rel is None:
        return "inputs/_external/" + _sanitize_external(path)
    top = {
        Category.INPUT: "inputs",
        Category.ENVIRONMENT: "inputs",
        Category.OUTPUT: "outputs",
        Category.SOURCE: "src",
    }[category]
    return f"{top}/{rel}"


def _finish_record(record: ArtifactRecord, config: RunConfig) -> ArtifactRecord:
    if record.original_path.is_file():
        try:
            record.size_bytes = record.original_path.stat().st_size
            record.sha256 = sha256_file(record.original_path)
        except OSError as exc:
            log.warning("could not hash %s: %s", record.original_path, exc)
            record.copied = False
            record.skip_reason = "vanished"
            return record
    else:
        record.copied = False
        record.skip_reason = "vanished"
        return record
    if record.category is Category.INPUT:
        if config.save_input_files_subset:
            record.copied = False
            record.skip_reason = "subset_mode"
        elif not config.save_input_files_full:
            record.copied = False
            record.skip_reason = "not_saved"
    if record.copied:
        record = apply_size_threshold(record, config.skip_files_larger_than)
    return record


def _classify_group(
    items: Sequence[ControlDirective | FileEvent],
    config: RunConfig,
    cwd: Path,
    entry_script: Path | None,
    exclude_patterns: tuple[str, ...],
    watched_roots: Sequence[Path],
    errors: list[str],
) -> list[ArtifactRecord]:
    states: dict[Path, _PathState] = {}
    order: list[Path] = []

    def state_for(path: Path) -> _PathState:
        if path not in states:
            states[path] = _PathState()
            order.append(path)
        return states[path]

    def excluded(path: Path) -> bool:
        rel = _relative_to_cwd(path, cwd)
        target = rel if rel is not None else str(path)
        return matches_exclusion(target, exclude_patterns)

    for item in items:
        if isinstance(item, ControlDirective):
            if "\t" in item.path or "\n" in item.path:
                errors.append(
                    f"directive path contains TAB/LF and was ignored: {item.path!r}"
                )
                continue
            path = _resolve_directive_path(item.path, cwd)
            if excluded(path):
                continue
            if item.kind is DirectiveKind.UNTRACK:
                state_for(path).untracked = True
                continue
            in_watched = any(
                path == root or root in path.parents for root in watched_roots
            )
            if not in_watched and not path.exists():
                errors.append(
                    f"directive path outside watched roots does not exist: {item.path!r}"
                )
                continue
            st = state_for(path)
            st.user_logged = True
            if item.kind is DirectiveKind.INPUT:
                st.read_seen = True
            else:
                st.write_seen = True
        else:
            path = item.path
            if excluded(path):
                continue
            st = state_for(path)
            if item.kind is EventKind.READ_INTENT:
                st.read_seen = True
            elif item.kind in (
                EventKind.WRITE_INTENT,
                EventKind.CREATED,
                EventKind.MODIFIED,
            ):
                st.write_seen = True
            elif item.kind is EventKind.REMOVED:
                st.write_seen = False  # transient file: discard pending output

    records: list[ArtifactRecord] = []

    def emit(path: Path, st: _PathState) -> None:
        rel = _relative_to_cwd(path, cwd)
        is_entry = entry_script is not None and path == entry_script
        is_environment = rel == "requirements.txt"
        if is_environment:
            category = Category.ENVIRONMENT
        elif is_entry or (st.read_seen and _is_source_path(path, rel, config)):
            category = Category.SOURCE
        elif st.read_seen:
            category = Category.INPUT
        else:
            category = Category.OUTPUT
        also_generated = st.write_seen and category is not Category.OUTPUT
        record = ArtifactRecord(
            original_path=path,
            bundle_relative_path=_bundle_path(category, rel, path),
            category=category,
            also_generated=also_generated,
            logged_by=LoggedBy.USER if st.user_logged else LoggedBy.AUTO,
        )
        records.append(_finish_record(record, config))

    for path in order:
        st = states[path]
        if st.untracked or not (st.read_seen or st.write_seen):
            continue
        emit(path, st)

    # The entry script and a top-level requirements.txt are recorded in
    # every segment (unless untracked): each bundle must be re-executable
    # on its own, and the diff backend cannot observe reads.
    forced: list[Path] = []
    if entry_script is not None:
        forced.append(entry_script)
    requirements = cwd / "requirements.txt"
    if requirements.is_file():
        # deliberately unresolved: a symlinked manifest still classifies as
        # the working directory's environment record
        forced.append(requirements)
    for path in forced:
        st = states.get(path)
        if st is not None and (st.untracked or st.read_seen or st.write_seen):
            continue  # already emitted, or untracked
        if excluded(path):
            continue
        emit(path, st or _PathState())

    return records


def classify(
    events: Sequence[FileEvent],
    directives: Sequence[ControlDirective],
    config: RunConfig,
    cwd: Path,
    entry_script: Path | None = None,
) -> list[RunSegment]:
    """Partition the merged timeline into segments of classified records.

    Events and directives are merged by seq (directives first on ties) and
    split at each END_RUN; a trailing implicit segment always exists.
    Within a segment, a path both read and created collapses into a single
    Input record flagged also_generated; UNTRACK anywhere in a segment
    removes that path's record entirely, and an UNTRACK in a later segment
    downgrades earlier copies of the path to metadata-only.
    """
    cwd = Path(cwd)
    if not cwd.is_absolute():
        raise ValueError("cwd must be an absolute path")
    cwd = cwd.resolve()
    if entry_script is not None:
        entry_script = Path(entry_script).resolve()

    exclude_patterns = tuple(config.excludes) + (
        f"{config.provenance_directory}_*",
    )
    watched_roots = [cwd] + [Path(w).resolve() for w in config.watch_dirs]

    timeline: list[tuple[int, int, int, ControlDirective | FileEvent]] = sorted(
        [(d.seq, 0, i, d) for i, d in enumerate(directives)]
        + [(e.seq, 1, i, e) for i, e in enumerate(events)],
        key=lambda entry: entry[:3],
    )

    groups: list[list[ControlDirective | FileEvent]] = []
    explicit_names: list[str | None] = []
    current: list[ControlDirective | FileEvent] = []
    for _, _, _, item in timeline:
        if isinstance(item, ControlDirective) and item.kind is DirectiveKind.END_RUN:
            groups.append(current)
            explicit_names.append(item.run_name)
            current = []
        else:
            current.append(item)
    groups.append(current)
    explicit_names.append(None)

    taken_names: set[str] = set()
    segments: list[RunSegment] = []
    for index, (group, explicit) in enumerate(zip(groups, explicit_names)):
        if explicit:
            name = explicit
        else:
            name = config.run_name if index == 0 else f"{config.run_name}_{index}"
        while name in taken_names:
            name = f"{name}_{index}"
        taken_names.add(name)
        errors: list[str] = []
        records = _classify_group(
            group, config, cwd, entry_script, exclude_patterns, watched_roots, errors
        )
        segments.append(RunSegment(name=name, records=records, errors=errors))

    # Late UNTRACK: a segment's untracks downgrade matching records that
    # earlier segments already produced (they stay in provenance but are
    # not copied).
    for index, group in enumerate(groups):
        untracked = {
            _resolve_directive_path(item.path, cwd)
            for item in group
            if isinstance(item, ControlDirective)
            and item.kind is DirectiveKind.UNTRACK
            and "\t" not in item.path
            and "\n" not in item.path
        }
        if not untracked:
            continue
        for earlier in segments[:index]:
            for record in earlier.records:
                if record.original_path in untracked and record.copied:
                    record.copied = False
                    record.skip_reason = "untracked_late"

    return segments
