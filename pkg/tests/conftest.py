"""Shared builders for provenance-model test inputs."""

import textwrap
from datetime import datetime, timezone
from pathlib import Path

import pytest

from provwrap import ArtifactRecord, Category, LoggedBy, RunConfig, RunMetadata


def make_meta(**overrides) -> RunMetadata:
    values = dict(
        command="python examples/main.py",
        argv=["python", "examples/main.py"],
        start_time=datetime(2026, 8, 10, 9, 0, 0, 0, tzinfo=timezone.utc),
        end_time=datetime(2026, 8, 10, 9, 0, 2, 500000, tzinfo=timezone.utc),
        exit_status=0,
        username="alice",
        hostname="workbench",
        cwd=Path("/work"),
        git_commit=None,
    )
    values.update(overrides)
    return RunMetadata(**values)


def make_record(bundle_path="inputs/results.csv", **overrides) -> ArtifactRecord:
    values = dict(
        original_path=Path("/work") / bundle_path.split("/", 1)[1],
        bundle_relative_path=bundle_path,
        category=Category.INPUT,
        also_generated=False,
        logged_by=LoggedBy.AUTO,
        sha256="a" * 64,
        size_bytes=120,
        copied=True,
        skip_reason=None,
    )
    values.update(overrides)
    return ArtifactRecord(**values)


def write_sample_project(workdir: Path) -> None:
    """The deterministic golden fixture: a script that reads
    assets/results.csv, logs it on the control channel, and writes an
    example.png analog. Re-running the copied script from the original
    working directory reproduces the output byte for byte."""
    (workdir / "assets").mkdir()
    (workdir / "examples").mkdir()
    (workdir / "assets" / "results.csv").write_text("x,points\n0,1\n1,4\n2,9\n")
    (workdir / "requirements.txt").write_text("pandas==2.2\n")
    (workdir / "examples" / "main.py").write_text(
        textwrap.dedent(
            """\
            import csv
            import os

            control = os.environ.get("YPROV_CONTROL")
            if control:
                with open(control, "a") as fh:
                    fh.write("INPUT\\tassets/results.csv\\n")

            with open("assets/results.csv") as fh:
                rows = list(csv.reader(fh))
            total = sum(int(row[1]) for row in rows[1:])
            with open("example.png", "wb") as fh:
                fh.write(b"\\x89PNG-analog:" + str(total).encode())
            """
        )
    )


@pytest.fixture
def meta() -> RunMetadata:
    return make_meta()


@pytest.fixture
def config() -> RunConfig:
    return RunConfig()
