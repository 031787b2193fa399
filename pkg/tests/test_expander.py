"""Greedy expansion loop: target latency, stepsize alignment, selection."""

import csv
import os
import warnings

import numpy as np
import pytest

from pathseg import archspec
from pathseg.archspec import NetworkSpec, apply, catalog, initial_spec
from pathseg.expander import (
    TRAJECTORY_COLUMNS,
    CallableEvaluator,
    ExpansionError,
    LookupEvaluator,
    MemoizedEvaluator,
    NonMonotoneLatencyWarning,
    expand,
    select,
    stepsize,
    surrogate_latency,
    surrogate_oracle,
    target_latency,
)

from oracles import brute_force_select

OPS = catalog()


def width_steps(spec):
    """How many width@1 units separate `spec` from the tiny origin."""
    return (spec.widths[0] - 4) // 4


def ramp_lat(spec):
    """1.0 at the origin, +0.3 per width@1 unit; flat elsewhere."""
    return 1.0 + 0.3 * width_steps(spec)


# ---------------------------------------------------------------------------
# target latency (the alignment bar)
# ---------------------------------------------------------------------------

def test_target_latency_is_max_over_unit_moves():
    # depth@2 adds four blocks, the costliest single unit under this pricing
    def lat(spec):
        return sum(spec.depths) + 0.01 * sum(spec.widths)

    spec = initial_spec()
    assert target_latency(spec, OPS, lat) == lat(apply(spec, OPS[0], 1))


def test_target_latency_skips_ops_at_bounds():
    spec = NetworkSpec((1,) + (archspec.MAX_DEPTH,) * 4, (4, 8, 16, 32, 32), (4, 0, 0))

    def lat(s):
        return float(sum(s.widths) + sum(r.eighths for r in s.ratios))

    # depth ops cannot move; the bar comes from the widest width op
    assert target_latency(spec, OPS, lat) == lat(apply(spec, OPS[3], 1))
    with pytest.raises(ExpansionError, match="no catalog op is applicable"):
        target_latency(spec, OPS[:3], lat)


# ---------------------------------------------------------------------------
# stepsize alignment
# ---------------------------------------------------------------------------

def test_stepsize_picks_nearest_k():
    spec = initial_spec()
    # lat: 1.3, 1.6, 1.9, 2.2, ...; 1.95 sits nearest k=3
    assert stepsize(spec, OPS[3], 1.95, ramp_lat) == 3
    # first overshoot wins when it lands closer: 2.15 is nearer 2.2 than 1.9
    assert stepsize(spec, OPS[3], 2.15, ramp_lat) == 4


def test_stepsize_tie_goes_to_smaller_k():
    # 1.75 is exactly between k=2 (1.6) and k=3 (1.9)
    assert stepsize(initial_spec(), OPS[3], 1.75, ramp_lat) == 2


def test_stepsize_below_first_unit_is_one():
    assert stepsize(initial_spec(), OPS[3], 0.5, ramp_lat) == 1


def test_stepsize_bounds_cut_scan_short():
    spec = NetworkSpec((1, 62, 62, 62, 62), (4, 8, 16, 32, 32), (4, 0, 0))

    def lat(s):
        return float(sum(s.depths))

    # only k=1 and k=2 exist before MAX_DEPTH; a faraway target picks k=2
    assert stepsize(spec, OPS[0], 1e9, lat) == 2


def test_stepsize_cap_is_an_error():
    with pytest.raises(ExpansionError, match="exceeded k=64"):
        stepsize(initial_spec(), OPS[6], 1e9, lambda s: 1.0)


def test_stepsize_warns_on_non_monotone_latency():
    dips = {1: 1.3, 2: 1.6, 3: 1.2, 4: 2.5}

    def lat(spec):
        return dips[width_steps(spec)]

    with pytest.warns(NonMonotoneLatencyWarning, match="width@1"):
        k = stepsize(initial_spec(), OPS[3], 2.0, lat)
    assert k == 2  # 1.6 is closest to 2.0 among observed values


def test_stepsize_monotone_scan_is_silent():
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        stepsize(initial_spec(), OPS[3], 1.95, ramp_lat)


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def table_evaluator(entries):
    table = {archspec.serialize(s): (p, l) for s, p, l in entries}

    def field(spec, idx):
        key = archspec.serialize(spec)
        if key not in table:
            raise KeyError(f"no entry for {key}")
        return table[key][idx]

    return CallableEvaluator(lambda s: field(s, 0), lambda s: field(s, 1), label="table")


def test_select_requires_a_latency_increase():
    origin = initial_spec()
    one_op = [OPS[0]]
    unit1 = apply(origin, OPS[0], 1)
    unit2 = apply(origin, OPS[0], 2)
    # origin is priced above every candidate, so the lone k=1 candidate
    # cannot increase latency and selection must refuse
    ev = table_evaluator([(origin, 50.0, 7.0), (unit1, 55.0, 6.0), (unit2, 56.0, 6.5)])
    with pytest.raises(ExpansionError, match="no expanding candidate increases latency"):
        select(origin, 50.0, 7.0, one_op, ev)

    # the same failure inside expand() truncates instead of raising
    trajectory = expand(origin, 3, ev, catalog=one_op)
    assert trajectory.steps == []
    assert "no expanding candidate" in trajectory.truncation_cause


def test_select_breaks_ties_by_catalog_order():
    origin = initial_spec()
    ops = [OPS[0], OPS[2]]  # depth@2 and depth@4, both scan cheap units

    def lat(spec):
        return 1.0 + 0.5 * (sum(spec.depths) - 5)

    def perf(spec):
        return 10.0 + 2.0 * (sum(spec.depths) - 5)  # same gain per ms for both

    ev = CallableEvaluator(perf, lat)
    result = select(origin, perf(origin), lat(origin), ops, ev)
    assert result.op.index == OPS[0].index


def test_select_matches_brute_force_on_surrogates():
    for seed in (0, 1, 2):
        ev = MemoizedEvaluator(surrogate_oracle(seed))
        spec = initial_spec()
        perf, lat = ev.evaluate(spec)
        for _ in range(4):
            result = select(spec, perf, lat, OPS, ev)
            assert brute_force_select(spec, ev.perf, ev.lat) == (result.op, result.k)
            spec, perf, lat = result.spec, result.perf, result.lat_ms


# ---------------------------------------------------------------------------
# the loop end to end
# ---------------------------------------------------------------------------

def test_expand_produces_a_valid_growing_trajectory():
    trajectory = expand(initial_spec(), 6, surrogate_oracle(3))
    assert len(trajectory.steps) == 6
    assert len(trajectory.specs()) == 7
    lats = [trajectory.origin_lat] + [s.lat_ms for s in trajectory.steps]
    assert all(a < b for a, b in zip(lats, lats[1:]))
    for step in trajectory.steps:
        assert 0.0 < step.perf < 100.0
    trajectory.validate()


def test_expand_rejects_bad_arguments():
    with pytest.raises(ValueError, match="steps"):
        expand(initial_spec(), 0, surrogate_oracle(0))
    bad = NetworkSpec((1, 1, 1, 1, 1), (5, 8, 16, 32, 32), (4, 0, 0))
    with pytest.raises(archspec.SpecError):
        expand(bad, 1, surrogate_oracle(0))


def test_trajectory_validate_catches_tampering():
    trajectory = expand(initial_spec(), 2, surrogate_oracle(0))
    trajectory.steps[1].lat_ms = trajectory.origin_lat / 2
    with pytest.raises(AssertionError, match="latency not strictly increasing"):
        trajectory.validate()


def test_expand_state_dir_and_resume(tmp_path):
    state = tmp_path / "run"
    calls = []
    base = surrogate_oracle(5)

    def counting_perf(spec):
        calls.append(1)
        return base.evaluate(spec)[0]

    ev = CallableEvaluator(counting_perf, lambda s: base.evaluate(s)[1])
    first = expand(initial_spec(), 4, ev, state_dir=str(state))
    assert calls, "fresh run must evaluate"
    for name in ("trajectory.csv", "tradeoff.csv", "evaluations.json",
                 "step_01_candidates.csv", "step_04_candidates.csv"):
        assert (state / name).exists(), name
    with open(state / "trajectory.csv", newline="") as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == TRAJECTORY_COLUMNS
        rows = list(reader)
    assert len(rows) == 5
    assert rows[0]["dimension"] == "" and rows[0]["k"] == ""
    assert rows[0]["depths"] == "1 1 1 1 1"
    assert rows[0]["ratios"] == "4/8 0 0"

    # resume: every evaluation comes from evaluations.json, zero new calls
    calls.clear()
    second = expand(initial_spec(), 4, ev, state_dir=str(state))
    assert calls == []
    assert [s.spec for s in second.steps] == [s.spec for s in first.steps]


def test_memoization_avoids_repeat_evaluations():
    base = surrogate_oracle(1)
    counting = CallableEvaluator(
        lambda s: base.evaluate(s)[0], lambda s: base.evaluate(s)[1]
    )
    memo = MemoizedEvaluator(counting)
    spec = initial_spec()
    memo.evaluate(spec)
    memo.evaluate(spec)
    memo.lat(spec)
    assert memo.calls == 1


def test_memoized_evaluator_rejects_bad_latency():
    memo = MemoizedEvaluator(CallableEvaluator(lambda s: 1.0, lambda s: 0.0))
    with pytest.raises(ValueError, match="non-positive latency"):
        memo.evaluate(initial_spec())


def test_lookup_evaluator_round_trip(tmp_path):
    spec = initial_spec()
    grown = apply(spec, OPS[0], 2)
    table = {
        archspec.serialize(spec): (50.0, 1.25),
        archspec.serialize(grown): (55.5, 2.5),
    }
    path = tmp_path / "table.csv"
    LookupEvaluator(table).to_csv(path)
    loaded = LookupEvaluator.from_csv(path)
    assert loaded.evaluate(spec) == (50.0, 1.25)
    assert loaded.evaluate(grown) == (55.5, 2.5)
    with pytest.raises(KeyError, match="no entry"):
        loaded.evaluate(apply(spec, OPS[0], 5))


def test_lookup_evaluator_rejects_malformed_tables(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("spec,quality\nx,1\n")
    with pytest.raises(ValueError, match="expected CSV columns"):
        LookupEvaluator.from_csv(bad)
    empty = tmp_path / "empty.csv"
    empty.write_text("spec,perf_pct,lat_ms\n")
    with pytest.raises(ValueError, match="empty"):
        LookupEvaluator.from_csv(empty)


def test_expand_truncates_at_the_lookup_table_edge():
    # a lookup replay stops cleanly when candidates fall outside the table
    table = {archspec.serialize(initial_spec()): (50.0, 1.0)}
    trajectory = expand(initial_spec(), 1, LookupEvaluator(table))
    assert trajectory.steps == []
    assert "latency evaluation failed" in trajectory.truncation_cause


# ---------------------------------------------------------------------------
# surrogate oracle
# ---------------------------------------------------------------------------

def test_surrogate_is_deterministic_and_bounded():
    rng = np.random.default_rng(0)
    specs = [initial_spec()]
    for _ in range(6):
        op = OPS[int(rng.integers(0, 10))]
        specs.append(apply(specs[-1], op, int(rng.integers(1, 3))))
    a, b = surrogate_oracle(7), surrogate_oracle(7)
    for spec in specs:
        pa, la = a.evaluate(spec)
        pb, lb = b.evaluate(spec)
        assert (pa, la) == (pb, lb)
        assert 0.0 < pa < 100.0
        assert la > 0.0
        assert la == pytest.approx(surrogate_latency(spec))


def test_surrogate_seeds_differ():
    spec = apply(initial_spec(), OPS[3], 2)
    perfs = {surrogate_oracle(seed).evaluate(spec)[0] for seed in range(4)}
    assert len(perfs) > 1


def test_surrogate_latency_grows_with_every_op():
    spec = NetworkSpec((1, 1, 1, 2, 2), (4, 8, 16, 32, 32), (4, 2, 0))
    base = surrogate_latency(spec)
    for op in OPS:
        assert surrogate_latency(apply(spec, op, 1)) > base, op.label
