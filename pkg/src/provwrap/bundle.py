"""Bundle directory allocation and writing.

A bundle is one numbered directory (<base>_<k>) holding the copied
artifacts under inputs/, outputs/ and src/, the provenance records, and
the crate descriptor. The copied entry script re-executes from the
original working directory because artifact layout mirrors
working-directory-relative paths.
"""

from __future__ import annotations

import logging
import shutil
from dataclasses import dataclass, field
from pathlib import Path

from .classify import RunConfig, RunSegment
from .errors import BundleError
from .monitor import sha256_file
from .provmodel import ProvDocument, build_document
from .runmeta import RunMetadata
from .serialize import render_svg, to_dot, to_prov_json, to_rocrate_metadata

log = logging.getLogger(__name__)


@dataclass
class BundleReport:
    """What one write_bundle call put on disk."""

    bundle_dir: Path
    files_written: list[str] = field(default_factory=list)
    bytes_copied: int = 0
    warnings: list[str] = field(default_factory=list)


def allocate_run_dir(base_name: str, parent: Path) -> Path:
    """Create and return <parent>/<base_name>_<k> for the smallest free k.

    Creation is exclusive (mkdir), so concurrent wrapper invocations race
    safely: a collision just retries with the next k.
    """
    parent = Path(parent)
    k = 0
    while True:
        candidate = parent / f"{base_name}_{k}"
        try:
            candidate.mkdir()
        except FileExistsError:
            k += 1
            continue
        return candidate


def write_bundle(
    segment: RunSegment,
    doc: ProvDocument,
    meta: RunMetadata,
    config: RunConfig,
    bundle_dir: Path,
) -> BundleReport:
    """Copy artifacts and write all serialized products into bundle_dir.

    Copies are digest-verified after the fact; a mismatch is a hard error
    because a corrupted bundle must never be reported as success. A source
    file that vanished between classification and copy is downgraded to
    metadata-only with a warning, and the provenance document is rebuilt
    so it describes what the bundle really contains.
    """
    bundle_dir = Path(bundle_dir)
    if not bundle_dir.is_dir():
        raise BundleError(f"bundle directory does not exist: {bundle_dir}")
    if any(bundle_dir.iterdir()):
        raise BundleError(f"bundle directory is not empty: {bundle_dir}")

    report = BundleReport(bundle_dir=bundle_dir)
    downgraded = False
    for record in segment.records:
        if not record.copied:
            continue
        source = record.original_path
        destination = bundle_dir / record.bundle_relative_path
        if not source.is_file():
            report.warnings.append(
                f"{source} vanished before copy; keeping metadata only"
            )
            record.copied = False
            record.skip_reason = "vanished"
            downgraded = True
            continue
        destination.parent.mkdir(parents=True, exist_ok=True)
        shutil.copyfile(source, destination)
        digest = sha256_file(destination)
        if record.sha256 is not None and digest != record.sha256:
            raise BundleError(
                f"digest mismatch after copying {source} to {destination}; "
                "the file changed during packaging"
            )
        report.bytes_copied += destination.stat().st_size
        report.files_written.append(record.bundle_relative_path)

    if downgraded:
        doc = build_document(segment.records, meta, config)

    prov_json = to_prov_json(doc)
    (bundle_dir / "provenance.json").write_bytes(prov_json)
    report.files_written.append("provenance.json")

    if config.create_dot_file or config.create_svg_file:
        dot_text = to_dot(doc)
        if config.create_dot_file:
            (bundle_dir / "provenance.dot").write_text(dot_text, encoding="utf-8")
            report.files_written.append("provenance.dot")
        if config.create_svg_file:
            svg = render_svg(dot_text)
            (bundle_dir / "provenance.svg").write_bytes(svg)
            report.files_written.append("provenance.svg")

    if config.create_rocrate:
        crate = to_rocrate_metadata(segment, meta, config)
        (bundle_dir / "ro-crate-metadata.json").write_bytes(crate)
        report.files_written.append("ro-crate-metadata.json")

    if config.create_json_file:
        # Standalone convenience copy beside the bundle, e.g. prov_0.provenance.json.
        sibling = bundle_dir.with_name(bundle_dir.name + ".provenance.json")
        sibling.write_bytes(prov_json)

    return report
