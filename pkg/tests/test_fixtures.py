"""Brute-force verification of the planted violation boundaries.

The fixture builders record closed-form brightness/gradient crossings in
the model metadata; these tests sweep actual inputs through the runtime
and check each constraint flips where the metadata says it does.
"""

import numpy as np
import pytest

from stimfuzz import fixtures
from stimfuzz.nef import load_model, save_model
from stimfuzz.runtime import decode_stimulation, forward
from stimfuzz.safety import PRESETS, evaluate


def report_for_brightness(model, b):
    image = np.full(model.input_shape, b, dtype=np.float32)
    raw = forward(model, image)
    preset = "retinal" if model.layout.params_per_electrode == 3 else "cortical"
    return evaluate(decode_stimulation(raw, model.layout), PRESETS[preset])


def sweep_crossing(model, flag):
    """Smallest brightness in a 0.001-step sweep where the constraint flips."""
    for b in np.arange(0.0, 1.0001, 0.001):
        if report_for_brightness(model, float(b)).constraint_flags()[flag]:
            return float(b)
    return None


@pytest.mark.parametrize("constraint", ["AE", "IC", "CD"])
def test_retinal_brightness_crossings_match_metadata(retinal_model, constraint):
    planted = retinal_model.metadata["planting"]["brightness_cross"][constraint]
    found = sweep_crossing(retinal_model, constraint)
    assert found is not None
    assert found == pytest.approx(planted, abs=0.005)


def test_retinal_gradient_crossing_matches_metadata(retinal_model):
    planted = retinal_model.metadata["planting"]["gradient_cross"]["PI"]
    h, w = retinal_model.input_shape

    def pi_at_gradient(g):
        # alternating columns 0.5 +- g/2: every horizontal neighbor differs by g
        cols = np.tile([0.5 - g / 2, 0.5 + g / 2], w // 2)
        image = np.tile(cols, (h, 1)).astype(np.float32)
        report = evaluate(
            decode_stimulation(forward(retinal_model, image), retinal_model.layout),
            PRESETS["retinal"])
        return report.constraint_flags()["PI"]

    found = None
    for g in np.arange(0.0, 1.0001, 0.002):
        if pi_at_gradient(float(g)):
            found = float(g)
            break
    assert found is not None
    assert found == pytest.approx(planted, abs=0.01)


def test_retinal_crossing_order_leaves_safe_margin(retinal_model, seed_set):
    crossings = retinal_model.metadata["planting"]["brightness_cross"]
    assert crossings["AE"] < crossings["IC"] < crossings["CD"]
    # the five safe seeds sit well below every boundary; the hot seed is above
    for img in seed_set[:5]:
        assert not report_for_brightness(retinal_model, float(img.mean())).any_violation
    hot = report_for_brightness(retinal_model, 0.93)
    assert hot.constraint_flags() == {"PI": False, "CD": True, "IC": True, "AE": True}


def test_clamped_twin_cannot_violate_charge(retinal_model):
    clamped = fixtures.build_retinal_tiny(seed=1, clamp_hi=1300.0)
    for b in (0.91, 0.95, 1.0):
        plain = report_for_brightness(retinal_model, b)
        twin = report_for_brightness(clamped, b)
        assert plain.constraint_flags()["CD"]
        assert not twin.constraint_flags()["CD"]
        # the clamp leaves the aggregate failure modes intact
        assert twin.constraint_flags()["IC"] and twin.constraint_flags()["AE"]


def test_cortical_crossings_match_metadata(cortical_model):
    planted = cortical_model.metadata["planting"]["brightness_cross"]
    for constraint in ("CD", "IC", "AE"):
        found = sweep_crossing(cortical_model, constraint)
        assert found is not None
        assert found == pytest.approx(planted[constraint], abs=0.005)
    # fixed pulse constants keep the pulse-feasibility constraint inert
    assert sweep_crossing(cortical_model, "PI") is None


def test_fixture_registry_round_trips():
    for name in fixtures.FIXTURES:
        data = fixtures.fixture_nef(name, seed=3)
        model = load_model(data)
        assert save_model(model) == data
        assert fixtures.fixture_nef(name, seed=3) == data


def test_profile_images_are_deterministic(seed_set):
    a = fixtures.profile_images(seed_set)
    b = fixtures.profile_images(seed_set)
    assert len(a) == len(seed_set) * 15
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
