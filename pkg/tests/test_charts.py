import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from chartnet.charts import (COLOR_NAMES, LABEL_LEXICON, PALETTE, Bar, BarChartSpec, GenerationConstraints,
                             PieChartSpec, Sector, content_hash, sample_bar_spec, sample_pie_spec, sample_spec,
                             spec_from_dict, spec_to_json, validate_spec)
from chartnet.errors import InfeasibleConstraints

seeds = st.integers(min_value=0, max_value=2**40)


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_sampled_bar_specs_satisfy_invariants(seed):
    spec = sample_bar_spec(seed)
    assert validate_spec(spec).ok
    heights = spec.values()
    assert 2 <= len(heights) <= 8
    assert all(0 < h <= 1 for h in heights)
    assert all(abs(a - b) >= 0.05 - 1e-12 for i, a in enumerate(heights) for b in heights[i + 1:])
    assert len({b.color for b in spec.bars}) == len(spec.bars)
    assert len({b.label for b in spec.bars}) == len(spec.bars)


@settings(max_examples=200, deadline=None)
@given(seeds)
def test_sampled_pie_specs_satisfy_invariants(seed):
    spec = sample_pie_spec(seed)
    assert validate_spec(spec).ok
    angles = spec.values()
    assert abs(sum(angles) - 360) <= 1e-9
    assert all(a > 0 for a in angles)
    assert all(abs(a - b) >= 10 - 1e-9 for i, a in enumerate(angles) for b in angles[i + 1:])


def test_sampling_is_deterministic_per_seed():
    assert sample_bar_spec(42) == sample_bar_spec(42)
    assert sample_pie_spec(42) == sample_pie_spec(42)
    assert sample_bar_spec(42) != sample_bar_spec(43)


def test_element_count_bounds_are_respected():
    c = GenerationConstraints(min_elements=5, max_elements=5)
    for seed in range(30):
        assert len(sample_spec("bar", seed, c).elements) == 5
        assert len(sample_spec("pie", seed, c).elements) == 5


def test_infeasible_constraints_are_rejected_up_front():
    with pytest.raises(InfeasibleConstraints):
        sample_bar_spec(0, GenerationConstraints(max_elements=30))  # more bars than colors
    with pytest.raises(InfeasibleConstraints):
        sample_bar_spec(0, GenerationConstraints(min_elements=8, height_epsilon=0.2))
    with pytest.raises(InfeasibleConstraints):
        sample_pie_spec(0, GenerationConstraints(min_elements=8, angle_epsilon=20))
    with pytest.raises(InfeasibleConstraints):
        sample_bar_spec(0, GenerationConstraints(min_elements=4, max_elements=3))


def test_validate_reports_each_violation():
    bad = BarChartSpec((Bar("red", 0.5, "D"), Bar("red", 0.52, "D"), Bar("mauve", 1.4, "Zzz")))
    codes = {v.split(":")[0] for v in validate_spec(bad).violations}
    assert {"duplicate-color", "duplicate-label", "height-tie", "unknown-color", "height-range",
            "unknown-label"} <= codes

    pie = PieChartSpec((Sector("red", 200.0, "D"), Sector("blue", 150.0, "Go")))
    codes = {v.split(":")[0] for v in validate_spec(pie).violations}
    assert "angle-sum" in codes

    single = PieChartSpec((Sector("red", 360.0, "D"),))
    assert not validate_spec(single).ok


def test_json_round_trip_and_content_hash():
    for spec in (sample_bar_spec(9), sample_pie_spec(9)):
        again = spec_from_dict(json.loads(spec_to_json(spec)))
        assert again == spec
        assert content_hash(again) == content_hash(spec)
    a = sample_bar_spec(5)
    b = BarChartSpec(a.bars, seed=999)
    assert content_hash(a) == content_hash(b)  # the seed is provenance, not content


def test_palette_and_lexicon():
    assert len(PALETTE) == len(COLOR_NAMES) == 12
    assert len(set(COLOR_NAMES)) == 12
    assert len(LABEL_LEXICON) == 30 == len(set(LABEL_LEXICON))
    assert "C++" in LABEL_LEXICON
    assert all(lbl.isascii() and 1 <= len(lbl) <= 4 for lbl in LABEL_LEXICON)


def test_pie_angles_are_printable_with_two_decimals():
    for seed in range(50):
        for a in sample_pie_spec(seed).values():
            assert math.isclose(a, round(a, 2), abs_tol=1e-9)
