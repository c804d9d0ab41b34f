"""Unit tests for the SQLAlchemy run ledger."""

import pytest

from levitrap.core.schemas import RunManifest
from levitrap.pipeline.ledger import LedgerManager, RunRecord


@pytest.fixture
def ledger(tmp_path):
    manager = LedgerManager(url=f"sqlite:///{tmp_path / 'runs.sqlite'}")
    manager.create_tables()
    return manager


def make_manifest(command="simulate"):
    return RunManifest(command=command, output_directory="out", tool_version="0.1.0", master_seed=7, flags={"workers": 2})


def test_record_start_and_finish(ledger):
    """A run is stored as running and updated with its outcome."""
    manifest = make_manifest()
    ledger.record_start(manifest)
    assert ledger.runs()[0].status == "running"

    manifest.status = "ok"
    manifest.outputs.append("out/trajectory.npz")
    ledger.record_finish(manifest)

    record = ledger.runs()[0]
    assert record.manifest_id == manifest.manifest_id
    assert record.status == "ok"
    assert record.master_seed == 7
    assert record.output_paths == ["out/trajectory.npz"]
    assert record.finished_at is not None


def test_runs_filter_by_command(ledger):
    for command in ("simulate", "cool", "simulate"):
        ledger.record_start(make_manifest(command))
    assert len(ledger.runs()) == 3
    assert len(ledger.runs("simulate")) == 2
    assert [r.command for r in ledger.runs("cool")] == ["cool"]


def test_record_from_manifest_serializes_flags():
    record = RunRecord.from_manifest(make_manifest())
    assert record.flags == '{"workers": 2}'
    assert record.created_at.tzinfo is None
    assert "simulate" in repr(record)


def test_engine_is_lazy(tmp_path):
    manager = LedgerManager(url=f"sqlite:///{tmp_path / 'lazy.sqlite'}")
    assert manager._engine is None
    assert manager.engine is manager.engine
