"""Descriptor algebra: specs, ratios, the expansion catalog, serialization."""

import json

import numpy as np
import pytest

from pathseg import archspec
from pathseg.archspec import (
    BoundsError,
    Dimension,
    NetworkSpec,
    ScalingRatio,
    SpecError,
    apply,
    catalog,
    check_valid,
    infer_expansion,
    initial_spec,
    parse,
    presets,
    serialize,
    validate,
)


def test_initial_spec_is_the_tiny_network():
    spec = initial_spec()
    assert spec.depths == (1, 1, 1, 1, 1)
    assert spec.widths == (4, 8, 16, 32, 32)
    assert [r.eighths for r in spec.ratios] == [4, 0, 0]
    assert spec.num_paths == 1
    assert validate(spec) == []


def test_ratio_values_and_display():
    assert ScalingRatio(4).value == 0.5
    assert ScalingRatio(8).display == "1"
    assert ScalingRatio(2).display == "1/4"
    assert ScalingRatio(0).display == "0"
    assert str(ScalingRatio(6)) == "6/8"
    with pytest.raises(SpecError):
        ScalingRatio(-1)
    with pytest.raises(SpecError):
        ScalingRatio(0.5)


def test_ratio_parse_requires_eighths():
    assert ScalingRatio.parse("3/8").eighths == 3
    assert ScalingRatio.parse("0").eighths == 0
    with pytest.raises(SpecError):
        ScalingRatio.parse("1/4")  # serialized form always uses /8
    with pytest.raises(SpecError):
        ScalingRatio.parse("x/8")


def test_scaled_size_rounds_to_multiple_of_16():
    # 5/8 of 720x960 is 450x600; nearest multiples of 16, ties up
    r = ScalingRatio(5)
    assert r.scaled_size(720) == 448
    assert r.scaled_size(960) == 608
    assert ScalingRatio(8).scaled_size(1024) == 1024
    assert ScalingRatio(1).scaled_size(64) == 16  # floor at 16


def test_ratios_canonicalized_non_increasing():
    a = NetworkSpec((1, 1, 1, 1, 1), (4, 8, 16, 32, 32), (2, 5, 0))
    b = NetworkSpec((1, 1, 1, 1, 1), (4, 8, 16, 32, 32), (5, 2, 0))
    assert a == b
    assert serialize(a) == serialize(b)
    assert [r.eighths for r in a.ratios] == [5, 2, 0]


def test_spec_shape_errors():
    with pytest.raises(SpecError):
        NetworkSpec((1, 1, 1, 1), (4, 8, 16, 32, 32), (4, 0, 0))
    with pytest.raises(SpecError):
        NetworkSpec((1, 1, 1, 1, 1), (4, 8, 16, 32, 32), (4, 0))
    with pytest.raises(SpecError):
        NetworkSpec((1, 1, 1, 1, 1.0), (4, 8, 16, 32, 32), (4, 0, 0))


def test_validate_reports_every_violation():
    spec = NetworkSpec((0, 1, 1, 1, 1), (4, 9, 16, 32, 32), (0, 0, 0))
    problems = validate(spec)
    assert len(problems) == 3
    assert any("depths[0]" in p for p in problems)
    assert any("widths[1]" in p for p in problems)
    assert any("at least one" in p for p in problems)
    with pytest.raises(SpecError) as err:
        check_valid(spec)
    assert "depths[0]" in str(err.value) and "widths[1]" in str(err.value)


def test_catalog_is_ten_ops_in_tiebreak_order():
    ops = catalog()
    assert len(ops) == 10
    assert [op.index for op in ops] == list(range(10))
    assert [op.dimension for op in ops[:3]] == [Dimension.DEPTH] * 3
    assert [op.dimension for op in ops[3:7]] == [Dimension.WIDTH] * 4
    assert [op.dimension for op in ops[7:]] == [Dimension.RESOLUTION] * 3
    assert [op.label for op in ops] == [
        "depth@2", "depth@3", "depth@4",
        "width@1", "width@2", "width@3", "width@4",
        "ratio@1", "ratio@2", "ratio@3",
    ]


def test_apply_unit_moves():
    spec = initial_spec()
    ops = catalog()
    assert apply(spec, ops[0]).depths == (1, 2, 2, 2, 2)
    assert apply(spec, ops[2], 7).depths == (1, 1, 1, 8, 8)
    assert apply(spec, ops[3]).widths == (8, 16, 32, 64, 64)
    assert apply(spec, ops[6], 2).widths == (4, 8, 16, 96, 96)
    assert [r.eighths for r in apply(spec, ops[7], 4).ratios] == [8, 0, 0]
    assert [r.eighths for r in apply(spec, ops[8], 3).ratios] == [4, 3, 0]


def test_apply_rejects_bad_multiplier_and_bounds():
    spec = initial_spec()
    ops = catalog()
    for bad in (0, -1, 1.5, True):
        with pytest.raises(SpecError):
            apply(spec, ops[0], bad)
    with pytest.raises(BoundsError):
        apply(spec, ops[0], archspec.MAX_DEPTH)
    with pytest.raises(BoundsError):
        apply(spec, ops[7], archspec.MAX_RATIO_EIGHTHS)


def test_apply_is_iterated_units():
    # a+b unit steps equal one (a+b)-step application, even for ratio moves
    # where canonicalization may reorder slots between units
    rng = np.random.default_rng(7)
    spec = NetworkSpec((1, 2, 2, 3, 3), (4, 16, 32, 64, 64), (6, 5, 0))
    for op in catalog():
        for _ in range(5):
            a, b = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            try:
                two_calls = apply(apply(spec, op, a), op, b)
            except BoundsError:
                continue
            assert two_calls == apply(spec, op, a + b)


def test_ratio_move_on_tied_slots_targets_the_canonical_slot():
    # ratio@2 bumps the second-largest slot of the canonical ordering
    spec = NetworkSpec((1, 1, 1, 1, 1), (4, 8, 16, 32, 32), (5, 5, 2))
    out = apply(spec, catalog()[8], 1)
    assert [r.eighths for r in out.ratios] == [6, 5, 2]


def test_serialize_round_trip_and_stability():
    rng = np.random.default_rng(3)
    for _ in range(25):
        depths = tuple(int(rng.integers(1, 12)) for _ in range(5))
        widths = tuple(int(rng.integers(1, 8)) * d for d in archspec.WIDTH_DIVISORS)
        ratios = tuple(sorted((int(rng.integers(0, 12)) for _ in range(3)), reverse=True))
        if not any(ratios):
            ratios = (4, 0, 0)
        spec = NetworkSpec(depths, widths, ratios)
        text = serialize(spec)
        assert parse(text) == spec
        assert serialize(parse(text)) == text  # canonical form is a fixed point
        assert json.loads(text)["schema_version"] == 1


def test_parse_error_messages():
    with pytest.raises(SpecError, match="not valid JSON"):
        parse("{nope")
    with pytest.raises(SpecError, match="schema_version"):
        parse(json.dumps({"depths": [1] * 5, "widths": [4] * 5, "ratios": ["4/8", "0", "0"]}))
    doc = {"schema_version": 1, "depths": [1] * 5, "widths": [4, 8, 16, 32, 32]}
    with pytest.raises(SpecError, match="ratios"):
        parse(json.dumps(doc))
    doc["ratios"] = ["1/2", "0", "0"]
    with pytest.raises(SpecError, match="denominator"):
        parse(json.dumps(doc))


def test_save_load_spec(tmp_path):
    spec = presets()["M"]
    path = tmp_path / "m.json"
    archspec.save_spec(spec, path)
    assert archspec.load_spec(path) == spec


def test_infer_expansion_recovers_random_moves():
    # ratios (8, 4, 0) keep slots separated for any k <= 3, so no unit
    # step can make one slot overtake another
    rng = np.random.default_rng(11)
    spec = NetworkSpec((1, 2, 2, 4, 4), (8, 16, 32, 64, 64), (8, 4, 0))
    for op in catalog():
        for _ in range(3):
            k = int(rng.integers(1, 4))
            try:
                new = apply(spec, op, k)
            except BoundsError:
                continue
            assert infer_expansion(spec, new) == (op, k)


def test_infer_expansion_refuses_overtaking_ratio_moves():
    # bumping the smallest slot of (6, 2, 0) four times ends at (6, 3, 3):
    # after two units the slot ties its neighbour and the canonical ordering
    # starts splitting further units between them, so the net change is not
    # k times any single catalog delta and inference must return None
    spec = NetworkSpec((1, 2, 2, 4, 4), (8, 16, 32, 64, 64), (6, 2, 0))
    new = apply(spec, catalog()[9], 4)
    assert [r.eighths for r in new.ratios] == [6, 3, 3]
    assert infer_expansion(spec, new) is None


def test_infer_expansion_rejects_non_moves():
    spec = initial_spec()
    assert infer_expansion(spec, spec) is None
    # two different dimensions changed at once
    mixed = NetworkSpec((1, 2, 2, 2, 2), (8, 16, 32, 64, 64), (4, 0, 0))
    assert infer_expansion(spec, mixed) is None
    # shrinking is not a catalog move
    grown = apply(spec, catalog()[0], 2)
    assert infer_expansion(grown, spec) is None


def test_presets_validate():
    stock = presets()
    assert set(stock) == {"S", "M", "L"}
    for spec in stock.values():
        assert validate(spec) == []
    # returned dict is a copy; mutating it cannot corrupt the module
    stock["S"] = None
    assert presets()["S"] is not None
