"""Unit tests for decoherence rates, collapse lifetimes and the heat balance."""

import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from levitrap.core.exceptions import ConfigParseError, DomainError, ValidationError
from levitrap.physics.decohere import (
    CALIBRATED_MODEL,
    CLOSED_FORM,
    DpQuery,
    GasDecoherenceQuery,
    HeatAnchor,
    HeatBalanceModel,
    calibrate_radiative_constant,
    dp_lifetime,
    dp_overlap_factor,
    dp_self_energy,
    evaluate_batch,
    gas_decoherence_rate,
    internal_temperature_balance,
    min_pressure,
)

ANCHOR = HeatAnchor(intensity=165e6, absorption_coefficient=3.0, balance_temperature=500.0)


def test_gas_rate_reference_value():
    """A 20 nm sphere at 6e-6 Pa of nitrogen decoheres at about 7.3e3 1/s."""
    rate = gas_decoherence_rate(GasDecoherenceQuery(pressure=6e-6, radius=20e-9))
    assert rate == pytest.approx(7263.0, rel=1e-3)


def test_min_pressure_for_interferometer_time():
    pressure = min_pressure(1e-4, 20e-9)
    assert pressure == pytest.approx(8.26e-6, rel=2e-3)
    rate = gas_decoherence_rate(GasDecoherenceQuery(pressure, 20e-9))
    assert rate * 1e-4 == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(
    pressure=st.floats(min_value=1e-12, max_value=1e3),
    radius=st.floats(min_value=1e-9, max_value=1e-5),
    factor=st.floats(min_value=0.1, max_value=10.0),
)
def test_gas_rate_scales_with_pressure_and_area(pressure, radius, factor):
    """Linear in pressure, quadratic in radius."""
    base = gas_decoherence_rate(GasDecoherenceQuery(pressure, radius))
    assert gas_decoherence_rate(GasDecoherenceQuery(pressure * factor, radius)) == pytest.approx(base * factor, rel=1e-9)
    assert gas_decoherence_rate(GasDecoherenceQuery(pressure, radius * factor)) == pytest.approx(base * factor**2, rel=1e-9)


def test_gas_query_validation():
    with pytest.raises(ValidationError):
        GasDecoherenceQuery(pressure=-1.0, radius=1e-8)
    with pytest.raises(ValidationError):
        GasDecoherenceQuery(pressure=1.0, radius=0.0)
    with pytest.raises(ValidationError):
        min_pressure(0.0, 1e-8)
    with pytest.raises(ValidationError):
        min_pressure(1.0, 1e-8, budget=0.0)


def test_overlap_factor_branches():
    """Branches meet at lambda = 1 and approach 1.2 far apart."""
    assert dp_overlap_factor(0.0) == 0.0
    assert dp_overlap_factor(1.0) == pytest.approx(0.7)
    assert dp_overlap_factor(1.0 + 1e-12) == pytest.approx(0.7)
    assert dp_overlap_factor(1e9) == pytest.approx(1.2)
    with pytest.raises(DomainError):
        dp_overlap_factor(-0.1)


@settings(max_examples=50, deadline=None)
@given(lo=st.floats(min_value=0.0, max_value=50.0), step=st.floats(min_value=1e-3, max_value=10.0))
def test_overlap_factor_is_monotone(lo, step):
    assert dp_overlap_factor(lo + step) >= dp_overlap_factor(lo)


def test_dp_reference_lifetime():
    """1e-15 kg of bulk diamond split by 2 um lives about 0.65 s."""
    query = DpQuery.from_density(1e-15, 2e-6)
    assert query.radius == pytest.approx(4.087e-7, rel=1e-3)
    assert query.overlap_parameter == pytest.approx(2.447, rel=1e-3)
    assert dp_overlap_factor(query.overlap_parameter) == pytest.approx(0.9957, abs=1e-4)
    assert dp_self_energy(query) == pytest.approx(1.626e-34, rel=2e-3)
    assert dp_lifetime(query) == pytest.approx(0.6486, rel=2e-3)


def test_dp_zero_separation_never_collapses():
    assert math.isinf(dp_lifetime(DpQuery(mass=1e-15, radius=4e-7, separation=0.0)))


def test_dp_query_validation():
    with pytest.raises(ValidationError):
        DpQuery(mass=0.0, radius=1e-7, separation=1e-6)
    with pytest.raises(ValidationError):
        DpQuery.from_density(1e-15, 1e-6, density=0.0)


def test_radiative_constant_from_anchor():
    assert calibrate_radiative_constant(ANCHOR) == pytest.approx(3.323e-8, rel=1e-3)
    with pytest.raises(ValidationError):
        calibrate_radiative_constant(HeatAnchor(165e6, 3.0, balance_temperature=300.0))


def test_balance_temperature_reference_points():
    """The anchor is reproduced and 0.637 W/mm^2 barely warms a 0.03/cm absorber."""
    model = HeatBalanceModel.from_anchor(ANCHOR)
    assert model.provenance == CALIBRATED_MODEL
    assert internal_temperature_balance(165e6, None, model) == pytest.approx(500.0)
    assert internal_temperature_balance(0.637e6, None, model) == pytest.approx(303.8, abs=0.1)
    assert internal_temperature_balance(0.0, None, model) == pytest.approx(300.0)


def test_lower_absorption_runs_cooler():
    hot = HeatBalanceModel.from_anchor(ANCHOR)
    cold = HeatBalanceModel.from_anchor(ANCHOR, absorption_coefficient=0.3)
    assert cold.radiative_constant == hot.radiative_constant
    assert internal_temperature_balance(50e6, None, cold) < internal_temperature_balance(50e6, None, hot)
    with pytest.raises(ValidationError):
        internal_temperature_balance(-1.0, None, hot)


def test_evaluate_batch_echoes_inputs():
    lines = [
        json.dumps({"kind": "dp", "mass": 1e-15, "separation": 2e-6}),
        "",
        json.dumps({"kind": "gas", "pressure": 6e-6, "radius": 2e-8, "interferometer_time": 1e-4}),
        json.dumps({"kind": "dp", "mass": 1e-15, "separation": 0.0}),
    ]
    records = [json.loads(line) for line in evaluate_batch(lines)]
    assert len(records) == 3
    assert records[0]["provenance"] == CLOSED_FORM
    assert records[0]["input"]["mass"] == 1e-15
    assert records[0]["result"]["lifetime_s"] == pytest.approx(0.6486, rel=2e-3)
    assert records[1]["result"]["rate_per_s"] == pytest.approx(7263.0, rel=1e-3)
    assert records[1]["result"]["min_pressure_pa"] == pytest.approx(8.26e-6, rel=2e-3)
    assert records[2]["result"]["lifetime_s"] is None


def test_evaluate_batch_reports_bad_line():
    with pytest.raises(ConfigParseError) as exc_info:
        list(evaluate_batch(['{"kind": "gas", "pressure": 1.0, "radius": 1e-8}', "oops"]))
    assert exc_info.value.line == 2
