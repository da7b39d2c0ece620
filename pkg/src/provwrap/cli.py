"""Command-line wrapper: snapshot, spawn, collect, classify, build, write.

Usage: provwrap [flags] -- COMMAND [ARG...]

The child's stdout/stderr pass through untouched; all wrapper diagnostics
go to stderr. The wrapper exits with the child's status (bundles are
written even when the child fails), 2 for usage errors, 3 for provenance
failures after a successful child run, and 127 when the command cannot be
spawned at all.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import shutil
import sys
import tempfile
from pathlib import Path

from .bundle import allocate_run_dir, write_bundle
from .classify import Backend, DEFAULT_EXCLUDES, RunConfig, classify
from .monitor import (
    ControlDirective,
    DirectiveKind,
    FileEvent,
    Snapshot,
    diff_snapshots,
    parse_control_stream,
    parse_trace_stream,
    take_snapshot,
)
from .provmodel import build_document
from .runmeta import capture_run

log = logging.getLogger(__name__)

USAGE_EXIT = 2
PROVENANCE_EXIT = 3
SPAWN_EXIT = 127

_STRACE_ARGS = ["-f", "-qq", "-e", "trace=open,openat,creat", "-s", "4096"]


def build_arg_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="provwrap",
        description="Run a command and package its inputs, outputs and "
        "source into a re-executable provenance bundle.",
        epilog="Separate wrapper flags from the wrapped command with `--`.",
    )
    parser.add_argument("--name", default="experiment_run", help="run name")
    parser.add_argument("--dir", default="prov", help="provenance directory base name")
    parser.add_argument("--prefix", default="yProv4DA", help="qualified-name prefix")
    parser.add_argument(
        "--namespace", default="http://example.org/", help="namespace URI for the prefix"
    )
    parser.add_argument(
        "--json", action="store_true", help="also write a standalone provenance JSON copy"
    )
    parser.add_argument("--dot", action="store_true", help="write provenance.dot")
    parser.add_argument("--svg", action="store_true", help="write provenance.svg")
    parser.add_argument(
        "--no-rocrate", action="store_true", help="skip ro-crate-metadata.json"
    )
    parser.add_argument(
        "--no-save-inputs",
        action="store_true",
        help="record input metadata only, do not copy input files",
    )
    parser.add_argument(
        "--subset-inputs",
        action="store_true",
        help="subset mode: inputs are recorded with digests but not copied",
    )
    parser.add_argument(
        "--max-file-mb", type=int, default=50, help="skip copying files larger than this"
    )
    parser.add_argument(
        "--source-ext",
        action="append",
        default=[],
        metavar="EXT",
        help="extension treated as source code (repeatable; default .py)",
    )
    parser.add_argument(
        "--source-root",
        action="append",
        default=[],
        metavar="GLOB",
        help="paths under this glob are source code (repeatable)",
    )
    parser.add_argument(
        "--watch",
        action="append",
        default=[],
        metavar="DIR",
        help="additional directory to snapshot (repeatable)",
    )
    parser.add_argument(
        "--exclude",
        action="append",
        default=[],
        metavar="GLOB",
        help="exclude matching paths from tracking (repeatable)",
    )
    parser.add_argument(
        "--backend", choices=["auto", "diff", "trace"], default="auto"
    )
    parser.add_argument("--verbose", action="store_true")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    extensions = {
        ext if ext.startswith(".") else f".{ext}" for ext in args.source_ext
    } or {".py"}
    return RunConfig(
        run_name=args.name,
        provenance_directory=args.dir,
        prefix=args.prefix,
        default_namespace=args.namespace,
        create_json_file=args.json,
        create_dot_file=args.dot,
        create_svg_file=args.svg,
        create_rocrate=not args.no_rocrate,
        save_input_files_full=not args.no_save_inputs,
        save_input_files_subset=args.subset_inputs,
        skip_files_larger_than=args.max_file_mb,
        verbose=args.verbose,
        source_extensions=frozenset(extensions),
        source_roots=tuple(args.source_root),
        watch_dirs=tuple(Path(w) for w in args.watch),
        backend=Backend(args.backend),
        excludes=DEFAULT_EXCLUDES + tuple(args.exclude),
    )


def select_backend(config: RunConfig) -> Backend:
    if config.backend is not Backend.AUTO:
        return config.backend
    if sys.platform.startswith("linux") and shutil.which("strace"):
        return Backend.TRACE
    return Backend.DIFF


def detect_entry_script(command: list[str], cwd: Path, extensions: frozenset[str]) -> Path | None:
    """Best-effort guess of the wrapped command's entry script.

    The first argument that resolves to an existing file with a source
    extension wins; interpreter names and flags never resolve to files.
    """
    for arg in command:
        candidate = Path(arg)
        if not candidate.is_absolute():
            candidate = cwd / candidate
        if candidate.is_file() and candidate.suffix in extensions:
            return candidate.resolve()
    return None


def unify_timeline(
    events: list[FileEvent],
    directives: list[ControlDirective],
    control_path: Path | None,
    trace_order: bool,
    cwd: Path | None = None,
) -> tuple[list[FileEvent], list[ControlDirective]]:
    """Put events and directives on one shared seq axis.

    Trace events are genuinely ordered, and each control-file write-open in
    the trace anchors the corresponding directive right after it. Snapshot
    diffs carry no intra-run ordering, so there each event is anchored to
    the first directive naming the same path (placing it in that
    directive's segment) and unmentioned events trail after all directives.
    Control-file opens never reach classification.
    """
    if trace_order:
        anchors = [
            event.seq
            for event in events
            if control_path is not None and event.path == control_path
        ]
        kept = [
            dataclasses.replace(event, seq=event.seq * 2)
            for event in events
            if control_path is None or event.path != control_path
        ]
        out_directives = []
        for index, directive in enumerate(directives):
            if anchors:
                anchor = anchors[min(index, len(anchors) - 1)]
                seq = anchor * 2 + 1
            else:
                seq = len(events) * 2 + 1 + index
            out_directives.append(dataclasses.replace(directive, seq=seq))
        return kept, out_directives

    base = Path.cwd() if cwd is None else Path(cwd)
    mentioned: dict[Path, int] = {}
    for index, directive in enumerate(directives):
        if directive.kind is DirectiveKind.END_RUN:
            continue
        if "\t" in directive.path or "\n" in directive.path:
            continue
        path = Path(directive.path)
        if not path.is_absolute():
            path = base / path
        path = path.resolve()
        mentioned.setdefault(path, index)
    out_directives = [
        dataclasses.replace(directive, seq=index * 2)
        for index, directive in enumerate(directives)
    ]
    out_events = []
    unanchored = 0
    for event in events:
        if event.path in mentioned:
            seq = mentioned[event.path] * 2 + 1
        else:
            seq = len(directives) * 2 + 1 + unanchored
            unanchored += 1
        out_events.append(dataclasses.replace(event, seq=seq))
    return out_events, out_directives


def run(argv: list[str]) -> int:
    """Execute the full wrapper pipeline; returns the process exit code."""
    if "--" not in argv:
        print(
            "usage: provwrap [flags] -- COMMAND [ARG...]  (the `--` separator "
            "is required)",
            file=sys.stderr,
        )
        return USAGE_EXIT
    split = argv.index("--")
    flag_args, command = argv[:split], argv[split + 1 :]
    if not command:
        print("error: no command given after `--`", file=sys.stderr)
        return USAGE_EXIT

    parser = build_arg_parser()
    try:
        args = parser.parse_args(flag_args)
        config = config_from_args(args)
    except SystemExit:
        return USAGE_EXIT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT

    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if config.verbose else logging.WARNING,
        format="provwrap: %(levelname)s: %(message)s",
    )

    cwd = Path.cwd().resolve()
    backend = select_backend(config)
    entry_script = detect_entry_script(command, cwd, config.source_extensions)
    snapshot_excludes = tuple(config.excludes) + (
        f"{config.provenance_directory}_*",
    )
    watch_roots = [cwd]
    for extra in config.watch_dirs:
        extra = Path(extra).resolve()
        if extra.is_dir():
            watch_roots.append(extra)
        else:
            log.warning("watch directory does not exist, skipping: %s", extra)

    with tempfile.TemporaryDirectory(prefix="provwrap-") as scratch:
        # Resolved so trace events (which are resolved) compare equal to it.
        control_path = (Path(scratch) / "control").resolve()
        control_path.touch()
        trace_path = Path(scratch) / "trace"

        before: dict[Path, Snapshot] = {}
        if backend is Backend.DIFF:
            before = {root: take_snapshot(root, snapshot_excludes) for root in watch_roots}

        spawn_argv = None
        if backend is Backend.TRACE:
            spawn_argv = ["strace", *_STRACE_ARGS, "-o", str(trace_path), *command]

        try:
            meta = capture_run(
                command,
                {"YPROV_CONTROL": str(control_path)},
                spawn_argv=spawn_argv,
                verbose=config.verbose,
            )
        except OSError as exc:
            target = (spawn_argv or command)[0]
            print(f"error: cannot run {target!r}: {exc}", file=sys.stderr)
            return SPAWN_EXIT
        child_status = meta.exit_status

        try:
            if backend is Backend.TRACE:
                with open(trace_path, "r", encoding="utf-8", errors="surrogateescape") as handle:
                    events = parse_trace_stream(handle, cwd=cwd)
                # Auto-detection stays inside the watched roots; everything
                # else enters provenance via the control channel only.
                events = [
                    event
                    for event in events
                    if event.path == control_path
                    or any(
                        event.path == root or root in event.path.parents
                        for root in watch_roots
                    )
                ]
                events = [
                    dataclasses.replace(event, seq=index)
                    for index, event in enumerate(events)
                ]
            else:
                events = []
                for root in watch_roots:
                    after = take_snapshot(root, snapshot_excludes)
                    for event in diff_snapshots(before[root], after):
                        events.append(dataclasses.replace(event, seq=len(events)))

            control_lines = control_path.read_text(encoding="utf-8").split("\n")
            directives = parse_control_stream(control_lines)

            events, directives = unify_timeline(
                events,
                directives,
                control_path,
                trace_order=backend is Backend.TRACE,
                cwd=cwd,
            )
            segments = classify(
                events,
                directives,
                config,
                cwd,
                entry_script=entry_script,
            )

            for segment in segments:
                bundle_dir = allocate_run_dir(config.provenance_directory, cwd)
                segment_config = dataclasses.replace(config, run_name=segment.name)
                doc = build_document(segment.records, meta, segment_config)
                report = write_bundle(segment, doc, meta, segment_config, bundle_dir)
                for message in (*segment.errors, *report.warnings):
                    log.warning("%s", message)
                if config.verbose:
                    log.debug(
                        "bundle %s: %d files, %d bytes copied",
                        bundle_dir,
                        len(report.files_written),
                        report.bytes_copied,
                    )
        except Exception as exc:  # exit-code policy boundary for provenance failures
            print(f"provwrap: provenance capture failed: {exc}", file=sys.stderr)
            if child_status != 0:
                print(
                    f"provwrap: wrapped command had exited with status {child_status}",
                    file=sys.stderr,
                )
                return child_status
            return PROVENANCE_EXIT

    return child_status


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
