"""Bundle directory allocation and writing."""

import hashlib
import json
import os

import pytest

from provwrap import (
    BundleError,
    Category,
    RunConfig,
    RunSegment,
    allocate_run_dir,
    build_document,
    write_bundle,
)

from conftest import make_meta, make_record


class TestAllocateRunDir:
    def test_first_allocation(self, tmp_path):
        assert allocate_run_dir("prov", tmp_path).name == "prov_0"

    def test_smallest_unused_suffix(self, tmp_path):
        (tmp_path / "prov_0").mkdir()
        (tmp_path / "prov_1").mkdir()
        assert allocate_run_dir("prov", tmp_path).name == "prov_2"

    def test_fills_gap(self, tmp_path):
        (tmp_path / "prov_0").mkdir()
        (tmp_path / "prov_2").mkdir()
        assert allocate_run_dir("prov", tmp_path).name == "prov_1"

    def test_directory_actually_created(self, tmp_path):
        path = allocate_run_dir("prov", tmp_path)
        assert path.is_dir()

    @pytest.mark.skipif(os.geteuid() == 0, reason="root ignores directory modes")
    def test_unwritable_parent(self, tmp_path):
        locked = tmp_path / "locked"
        locked.mkdir()
        locked.chmod(0o555)
        try:
            with pytest.raises(OSError):
                allocate_run_dir("prov", locked)
        finally:
            locked.chmod(0o755)

    def test_missing_parent_raises(self, tmp_path):
        with pytest.raises(OSError):
            allocate_run_dir("prov", tmp_path / "nonexistent")

    def test_concurrent_allocations_never_collide(self, tmp_path):
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=8) as pool:
            dirs = list(pool.map(lambda _: allocate_run_dir("prov", tmp_path), range(16)))
        assert len({d.name for d in dirs}) == 16
        assert sorted(d.name for d in dirs) == sorted(f"prov_{k}" for k in range(16))


def _segment_from_tree(workdir, names_and_categories):
    records = []
    for name, category in names_and_categories:
        path = workdir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        content = f"content of {name}\n".encode()
        path.write_bytes(content)
        top = {
            Category.INPUT: "inputs",
            Category.OUTPUT: "outputs",
            Category.SOURCE: "src",
            Category.ENVIRONMENT: "inputs",
        }[category]
        records.append(
            make_record(
                f"{top}/{name}",
                original_path=path,
                category=category,
                sha256=hashlib.sha256(content).hexdigest(),
                size_bytes=len(content),
            )
        )
    return RunSegment(name="experiment_run", records=records)


class TestWriteBundle:
    def test_sample_bundle_contents(self, tmp_path, config):
        workdir = tmp_path / "work"
        workdir.mkdir()
        segment = _segment_from_tree(
            workdir,
            [
                ("results.csv", Category.INPUT),
                ("example.png", Category.OUTPUT),
                ("examples/main.py", Category.SOURCE),
                ("requirements.txt", Category.ENVIRONMENT),
            ],
        )
        meta = make_meta()
        doc = build_document(segment.records, meta, config)
        bundle_dir = allocate_run_dir("prov", tmp_path)
        report = write_bundle(segment, doc, meta, config, bundle_dir)

        assert (bundle_dir / "inputs/results.csv").is_file()
        assert (bundle_dir / "outputs/example.png").is_file()
        assert (bundle_dir / "src/examples/main.py").is_file()
        assert (bundle_dir / "inputs/requirements.txt").is_file()
        assert (bundle_dir / "provenance.json").is_file()
        assert (bundle_dir / "ro-crate-metadata.json").is_file()
        assert not (bundle_dir / "provenance.dot").exists()
        assert sorted(report.files_written) == sorted(
            [
                "inputs/results.csv",
                "outputs/example.png",
                "src/examples/main.py",
                "inputs/requirements.txt",
                "provenance.json",
                "ro-crate-metadata.json",
            ]
        )
        assert report.bytes_copied == sum(
            r.size_bytes for r in segment.records
        )

    def test_copies_are_byte_exact(self, tmp_path, config):
        workdir = tmp_path / "work"
        workdir.mkdir()
        segment = _segment_from_tree(workdir, [("data.bin", Category.INPUT)])
        meta = make_meta()
        doc = build_document(segment.records, meta, config)
        bundle_dir = allocate_run_dir("prov", tmp_path)
        write_bundle(segment, doc, meta, config, bundle_dir)
        assert (bundle_dir / "inputs/data.bin").read_bytes() == (
            workdir / "data.bin"
        ).read_bytes()

    def test_zero_record_segment(self, tmp_path, config):
        segment = RunSegment(name="experiment_run")
        meta = make_meta()
        doc = build_document([], meta, config)
        bundle_dir = allocate_run_dir("prov", tmp_path)
        write_bundle(segment, doc, meta, config, bundle_dir)
        on_disk = sorted(p.name for p in bundle_dir.iterdir())
        assert on_disk == ["provenance.json", "ro-crate-metadata.json"]

    def test_non_copied_record_stays_out_of_bundle(self, tmp_path, config):
        workdir = tmp_path / "work"
        workdir.mkdir()
        segment = _segment_from_tree(workdir, [("big.bin", Category.INPUT)])
        segment.records[0].copied = False
        segment.records[0].skip_reason = "size_threshold"
        meta = make_meta()
        doc = build_document(segment.records, meta, config)
        bundle_dir = allocate_run_dir("prov", tmp_path)
        write_bundle(segment, doc, meta, config, bundle_dir)
        assert not (bundle_dir / "inputs/big.bin").exists()
        payload = json.loads((bundle_dir / "provenance.json").read_bytes())
        entity = payload["entity"]["yProv4DA:inputs/big.bin"]
        assert entity["yprov:copied"] == "false"

    def test_vanished_file_downgraded_with_warning(self, tmp_path, config):
        workdir = tmp_path / "work"
        workdir.mkdir()
        segment = _segment_from_tree(workdir, [("fleeting.csv", Category.INPUT)])
        (workdir / "fleeting.csv").unlink()
        meta = make_meta()
        doc = build_document(segment.records, meta, config)
        bundle_dir = allocate_run_dir("prov", tmp_path)
        report = write_bundle(segment, doc, meta, config, bundle_dir)
        assert any("vanished" in w for w in report.warnings)
        payload = json.loads((bundle_dir / "provenance.json").read_bytes())
        entity = payload["entity"]["yProv4DA:inputs/fleeting.csv"]
        assert entity["yprov:copied"] == "false"
        assert entity["yprov:skip_reason"] == "vanished"
        crate = json.loads((bundle_dir / "ro-crate-metadata.json").read_bytes())
        parts = [p["@id"] for p in crate["@graph"][1]["hasPart"]]
        assert parts == ["provenance.json"]

    def test_digest_mismatch_is_hard_error(self, tmp_path, config):
        workdir = tmp_path / "work"
        workdir.mkdir()
        segment = _segment_from_tree(workdir, [("racy.csv", Category.INPUT)])
        segment.records[0].sha256 = "0" * 64  # simulate concurrent modification
        meta = make_meta()
        doc = build_document(segment.records, meta, config)
        bundle_dir = allocate_run_dir("prov", tmp_path)
        with pytest.raises(BundleError, match="digest mismatch"):
            write_bundle(segment, doc, meta, config, bundle_dir)

    def test_optional_outputs_follow_flags(self, tmp_path, monkeypatch):
        import provwrap.bundle as bundle_module

        monkeypatch.setattr(
            bundle_module, "render_svg", lambda dot_text: b"<?xml fake svg"
        )
        config = RunConfig(create_dot_file=True, create_svg_file=True, create_json_file=True)
        segment = RunSegment(name="experiment_run")
        meta = make_meta()
        doc = build_document([], meta, config)
        bundle_dir = allocate_run_dir("prov", tmp_path)
        write_bundle(segment, doc, meta, config, bundle_dir)
        assert (bundle_dir / "provenance.dot").is_file()
        assert (bundle_dir / "provenance.svg").read_bytes() == b"<?xml fake svg"
        sibling = tmp_path / "prov_0.provenance.json"
        assert sibling.is_file()
        assert sibling.read_bytes() == (bundle_dir / "provenance.json").read_bytes()

    def test_rocrate_can_be_disabled(self, tmp_path):
        config = RunConfig(create_rocrate=False)
        segment = RunSegment(name="experiment_run")
        meta = make_meta()
        doc = build_document([], meta, config)
        bundle_dir = allocate_run_dir("prov", tmp_path)
        write_bundle(segment, doc, meta, config, bundle_dir)
        assert not (bundle_dir / "ro-crate-metadata.json").exists()

    def test_dirty_bundle_dir_rejected(self, tmp_path, config):
        bundle_dir = allocate_run_dir("prov", tmp_path)
        (bundle_dir / "leftover").write_text("x")
        meta = make_meta()
        doc = build_document([], meta, config)
        with pytest.raises(BundleError, match="not empty"):
            write_bundle(RunSegment(name="x"), doc, meta, config, bundle_dir)

    def test_listed_files_all_exist(self, tmp_path, config):
        workdir = tmp_path / "work"
        workdir.mkdir()
        segment = _segment_from_tree(
            workdir, [("a.csv", Category.INPUT), ("b.png", Category.OUTPUT)]
        )
        meta = make_meta()
        doc = build_document(segment.records, meta, config)
        bundle_dir = allocate_run_dir("prov", tmp_path)
        report = write_bundle(segment, doc, meta, config, bundle_dir)
        for rel in report.files_written:
            assert (bundle_dir / rel).is_file()
        assert len(set(report.files_written)) == len(report.files_written)
