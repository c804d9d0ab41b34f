"""Unit tests for report schemas, the run manifest and batch records."""

import json
from dataclasses import replace

import pytest

from levitrap.analysis.characterize import QmFit
from levitrap.analysis.feedback import ModeTemperature
from levitrap.core.exceptions import ConfigParseError
from levitrap.core.schemas import (
    DpQueryRecord,
    GasQueryRecord,
    HeatQueryRecord,
    ModeTemperatureReport,
    QmFitReport,
    RunManifest,
    parse_batch_line,
)


def test_manifest_defaults():
    manifest = RunManifest(command="simulate", output_directory="out", tool_version="0.1.0")
    assert len(manifest.manifest_id) == 32
    assert manifest.status == "running"
    assert manifest.outputs == []
    assert manifest.timestamp.tzinfo is not None


def test_manifests_get_unique_ids():
    a = RunManifest(command="psd", output_directory="out", tool_version="0.1.0")
    b = RunManifest(command="psd", output_directory="out", tool_version="0.1.0")
    assert a.manifest_id != b.manifest_id


def test_reports_validate_from_analysis_objects():
    """Reports are built straight from the analysis dataclasses."""
    fit = QmFit(
        charge_to_mass=75.0,
        standard_error=0.5,
        scan_points=((2.0, 1e4), (3.0, 1.5e4), (4.0, 2e4)),
        model="approx",
        q_max=0.24,
    )
    report = QmFitReport.model_validate(fit)
    assert report.charge_to_mass == 75.0
    assert report.scan_points[1] == (3.0, 1.5e4)
    assert report.default_geometry is False

    point = ModeTemperature(temperature=0.5, uncertainty=0.05, mode="y", method="kinetic", frequency=6168.0)
    as_report = ModeTemperatureReport.model_validate(point)
    assert as_report.phonon_occupation == pytest.approx(point.phonon_occupation)
    assert as_report.heating is False
    escaped = ModeTemperatureReport.model_validate(replace(point, temperature=1e4, heating=True, escaped=True))
    assert escaped.heating and escaped.escaped


def test_parse_batch_line_dispatches_on_kind():
    gas = parse_batch_line(json.dumps({"kind": "gas", "pressure": 6e-6, "radius": 2e-8}), 1)
    dp = parse_batch_line(json.dumps({"kind": "dp", "mass": 1e-15, "separation": 2e-6}), 2)
    heat = parse_batch_line(
        json.dumps({
            "kind": "heat",
            "intensity": 0.637e6,
            "anchor_intensity": 165e6,
            "anchor_absorption_coefficient": 3.0,
            "anchor_temperature": 500.0,
        }),
        3,
    )
    assert isinstance(gas, GasQueryRecord)
    assert gas.budget == 1.0
    assert isinstance(dp, DpQueryRecord)
    assert dp.density == 3500.0
    assert dp.radius is None
    assert isinstance(heat, HeatQueryRecord)


@pytest.mark.parametrize(
    "line",
    [
        "{not json",
        '{"kind": "laser", "power": 1}',
        '{"kind": "dp", "separation": 1e-6}',
    ],
)
def test_parse_batch_line_rejects_bad_records(line):
    """Malformed JSON, unknown kinds and missing fields are config errors with a line number."""
    with pytest.raises(ConfigParseError) as exc_info:
        parse_batch_line(line, 7, "queries.jsonl")
    assert exc_info.value.line == 7
