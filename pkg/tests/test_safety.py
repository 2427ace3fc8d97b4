import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import scalar_oracle
from stimfuzz.runtime import StimulationPattern
from stimfuzz.safety import (PRESETS, InvalidStimulusError, SafetyLimits,
                             check_active_electrodes, check_charge_density,
                             check_instantaneous_current, check_physically_impossible,
                             evaluate)


def make_pattern(freqs, pulses, amps):
    return StimulationPattern(frequency_hz=np.array(freqs, dtype=np.float64),
                              pulse_ms=np.array(pulses, dtype=np.float64),
                              amplitude_ua=np.array(amps, dtype=np.float64))


class TestPhysicallyImpossible:
    def test_long_pulse_violates(self):
        # f=50 Hz -> period 20 ms; 2*12 = 24 ms does not fit
        v = check_physically_impossible(50.0, 12.0)
        assert v.proportion == pytest.approx(1.2)
        assert v.violated

    def test_boundary_is_safe(self):
        v = check_physically_impossible(100.0, 5.0)
        assert v.proportion == 1.0
        assert not v.violated

    def test_short_pulse_safe(self):
        v = check_physically_impossible(100.0, 2.0)
        assert v.proportion == pytest.approx(0.4)
        assert not v.violated

    def test_zero_frequency_is_invalid_stimulus(self):
        with pytest.raises(InvalidStimulusError):
            check_physically_impossible(0.0, 1.0)
        with pytest.raises(InvalidStimulusError):
            check_physically_impossible(-5.0, 1.0)


class TestChargeDensity:
    def test_retinal_violation(self):
        v = check_charge_density(4.0, 200.0, 628.0)
        assert v.proportion == pytest.approx(800.0 / 628.0)  # ~1.2739
        assert v.violated

    def test_zero_amplitude_safe(self):
        for p in (0.0, 1.0, 50.0):
            assert not check_charge_density(p, 0.0, 628.0).violated

    def test_cortical_near_limit_safe(self):
        v = check_charge_density(1.0, 20.0, 20.4)
        assert v.proportion == pytest.approx(20.0 / 20.4)  # ~0.9804
        assert not v.violated


class TestInstantaneousCurrent:
    def test_retinal_array_over_limit(self):
        v = check_instantaneous_current([30.0] * 225, 6000.0)
        assert v.proportion == pytest.approx(1.125)
        assert v.violated

    def test_all_zero(self):
        v = check_instantaneous_current([0.0] * 50, 6000.0)
        assert v.proportion == 0.0

    def test_boundary_sum_safe(self):
        v = check_instantaneous_current([60.0] * 100, 6000.0)
        assert v.proportion == 1.0
        assert not v.violated

    def test_doubling_limit_exactly_halves(self):
        amps = list(np.random.default_rng(1).uniform(0, 80, 225))
        one = check_instantaneous_current(amps, 6000.0).proportion
        two = check_instantaneous_current(amps, 12000.0).proportion
        assert two == one / 2.0


class TestActiveElectrodes:
    def test_all_active_over_limit(self):
        v = check_active_electrodes([5.0] * 225, 100)
        assert v.proportion == pytest.approx(2.25)
        assert v.violated

    def test_none_active(self):
        assert check_active_electrodes([0.0] * 225, 100).proportion == 0.0

    def test_boundary_count_safe(self):
        amps = [1.0] * 100 + [0.0] * 125
        v = check_active_electrodes(amps, 100)
        assert v.proportion == 1.0
        assert not v.violated

    def test_activity_epsilon(self):
        amps = [0.5, 1.5, 0.0]
        assert check_active_electrodes(amps, 10, activity_epsilon_ua=1.0).proportion \
            == pytest.approx(0.1)


class TestEvaluate:
    def test_two_electrode_composition(self):
        pattern = make_pattern([50.0, 100.0], [12.0, 2.0], [200.0, 0.0])
        report = evaluate(pattern, PRESETS["retinal"])
        assert report.pi_violated.tolist() == [True, False]
        assert report.cd.tolist() == pytest.approx([2400.0 / 628.0, 0.0])
        assert report.cd_violated.tolist() == [True, False]
        assert report.ic == pytest.approx(200.0 / 6000.0)
        assert not report.ic_violated
        assert report.ae == pytest.approx(0.01)
        assert not report.ae_violated
        assert report.any_violation
        assert report.constraint_flags() == {"PI": True, "CD": True,
                                             "IC": False, "AE": False}

    def test_all_zero_amplitudes(self):
        pattern = make_pattern([100.0] * 4, [0.0] * 4, [0.0] * 4)
        report = evaluate(pattern, PRESETS["retinal"])
        assert not report.any_violation
        assert report.ic == 0.0 and report.ae == 0.0

    def test_every_proportion_exactly_one_is_safe(self):
        # PI: 2*5*100/1000 = 1; CD ~= 1; IC = 2a/2a = 1; AE = 2/2 = 1
        limits = SafetyLimits(charge_limit_nc=628.0, current_limit_ua=251.2,
                              active_limit=2)
        pattern = make_pattern([100.0, 100.0], [5.0, 5.0], [125.6, 125.6])
        report = evaluate(pattern, limits)
        assert report.pi.tolist() == [1.0, 1.0]
        assert report.ic == 1.0
        assert report.ae == 1.0
        assert not report.any_violation

    def test_invalid_frequency_propagates(self):
        pattern = make_pattern([100.0, 0.0], [1.0, 1.0], [1.0, 1.0])
        with pytest.raises(InvalidStimulusError):
            evaluate(pattern, PRESETS["retinal"])

    def test_report_shapes(self):
        pattern = make_pattern([100.0] * 7, [1.0] * 7, [1.0] * 7)
        report = evaluate(pattern, PRESETS["retinal"])
        assert report.electrode_count == 7
        assert len(report.pi) == len(report.cd) == len(report.amplitudes_ua) == 7


def test_matches_scalar_oracle_on_random_patterns():
    """Flags must agree exactly and proportions to 1e-6 relative on 10k patterns."""
    rng = np.random.default_rng(42)
    limits = PRESETS["retinal"]
    for _ in range(10_000):
        n = int(rng.integers(1, 12))
        freqs = rng.uniform(1.0, 400.0, n)
        pulses = rng.uniform(0.0, 20.0, n)
        amps = rng.uniform(0.0, 900.0, n)
        report = evaluate(make_pattern(freqs, pulses, amps), limits)
        expected = scalar_oracle.full_report(
            list(freqs), list(pulses), list(amps), limits.charge_limit_nc,
            limits.current_limit_ua, limits.active_limit)
        assert report.constraint_flags() == expected["flags"]
        np.testing.assert_allclose(report.pi, expected["pi"], rtol=1e-6)
        np.testing.assert_allclose(report.cd, expected["cd"], rtol=1e-6)
        assert report.ic == pytest.approx(expected["ic"], rel=1e-6)
        assert report.ae == pytest.approx(expected["ae"], rel=1e-6)


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 20), st.integers(0, 19), st.floats(1.0, 500.0))
def test_raising_one_amplitude_never_lowers_proportions(n, idx, bump):
    rng = np.random.default_rng(n * 31 + idx)
    freqs = rng.uniform(10, 200, n)
    pulses = rng.uniform(0.1, 8.0, n)
    amps = rng.uniform(0, 400, n)
    idx = idx % n
    base = evaluate(make_pattern(freqs, pulses, amps), PRESETS["retinal"])
    amps[idx] += bump
    bumped = evaluate(make_pattern(freqs, pulses, amps), PRESETS["retinal"])
    assert bumped.ic >= base.ic
    assert bumped.ae >= base.ae
    assert bumped.cd[idx] >= base.cd[idx]


def test_presets_are_positive_and_distinct():
    assert PRESETS["retinal"].charge_limit_nc == 628.0
    assert PRESETS["retinal"].current_limit_ua == 6000.0
    assert PRESETS["retinal"].active_limit == 100
    assert PRESETS["cortical"].charge_limit_nc == 20.4
    assert PRESETS["cortical"].current_limit_ua == 3600.0
    assert PRESETS["cortical"].active_limit == 30
    with pytest.raises(ValueError):
        SafetyLimits(charge_limit_nc=0.0, current_limit_ua=1.0, active_limit=1)
