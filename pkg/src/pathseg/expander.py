"""Progressive greedy expansion over the op catalog.

Each step computes a target latency (the maximum latency over all one-unit
expansions), aligns every op's stepsize to that target, then picks the op
maximizing performance gain per millisecond of added latency.  Works against
any evaluator exposing ``evaluate(spec) -> (perf_pct, lat_ms)``.
"""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from pathseg import archspec
from pathseg.archspec import BoundsError, ExpansionOp, NetworkSpec
from pathseg.costmodel import DeviceProfile, count_flops, estimate_latency

MAX_STEPSIZE = 64

# how much an observed latency may drop below the running maximum before the
# stepsize scan flags the sequence as non-monotone
NOISE_FLOOR_MS = 1e-6


class ExpansionError(RuntimeError):
    """Raised when the greedy loop cannot take a step."""


class NonMonotoneLatencyWarning(UserWarning):
    """Observed latency decreased while scanning stepsizes."""


# ---------------------------------------------------------------------------
# Evaluators
# ---------------------------------------------------------------------------

class CallableEvaluator:
    """Adapts separate perf/lat callables to the evaluate() interface."""

    def __init__(self, perf_fn, lat_fn, label="callable"):
        self._perf_fn = perf_fn
        self._lat_fn = lat_fn
        self.label = label

    def evaluate(self, spec: NetworkSpec):
        return float(self._perf_fn(spec)), float(self._lat_fn(spec))


class MemoizedEvaluator:
    """Caches evaluations so each distinct spec is measured at most once.

    The cache can be persisted as JSON, which is what makes interrupted
    expansions resumable: a re-run replays completed steps for free.
    """

    def __init__(self, base, cache_path=None):
        self.base = base
        self.cache_path = cache_path
        self.cache: dict = {}
        self.calls = 0
        if cache_path and os.path.exists(cache_path):
            with open(cache_path, "r", encoding="utf-8") as fh:
                self.cache = {k: tuple(v) for k, v in json.load(fh).items()}

    def evaluate(self, spec: NetworkSpec):
        key = archspec.serialize(spec)
        hit = self.cache.get(key)
        if hit is None:
            self.calls += 1
            perf, lat = self.base.evaluate(spec)
            hit = (float(perf), float(lat))
            if not math.isfinite(hit[1]) or hit[1] <= 0:
                raise ValueError(f"evaluator returned non-positive latency {hit[1]} for {key}")
            self.cache[key] = hit
            if self.cache_path:
                self.save()
        return hit

    def perf(self, spec: NetworkSpec) -> float:
        return self.evaluate(spec)[0]

    def lat(self, spec: NetworkSpec) -> float:
        return self.evaluate(spec)[1]

    def save(self, path=None) -> None:
        path = path or self.cache_path
        if not path:
            raise ValueError("no cache path configured")
        tmp = f"{path}.tmp"
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump({k: list(v) for k, v in self.cache.items()}, fh, indent=0)
        os.replace(tmp, path)


class LookupEvaluator:
    """Strict table lookup from a CSV of (spec, perf_pct, lat_ms) rows."""

    def __init__(self, table: dict, label="lookup"):
        self.table = dict(table)
        self.label = label

    @classmethod
    def from_csv(cls, path) -> "LookupEvaluator":
        table = {}
        with open(path, "r", encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            required = {"spec", "perf_pct", "lat_ms"}
            if reader.fieldnames is None or not required <= set(reader.fieldnames):
                raise ValueError(f"{path}: expected CSV columns {sorted(required)}")
            for row in reader:
                key = archspec.serialize(archspec.parse(row["spec"]))
                table[key] = (float(row["perf_pct"]), float(row["lat_ms"]))
        if not table:
            raise ValueError(f"{path}: lookup table is empty")
        return cls(table, label=f"lookup:{path}")

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["spec", "perf_pct", "lat_ms"])
            for key, (perf, lat) in self.table.items():
                writer.writerow([key, f"{perf:.6g}", f"{lat:.6g}"])

    def evaluate(self, spec: NetworkSpec):
        key = archspec.serialize(spec)
        if key not in self.table:
            raise KeyError(f"{self.label} has no entry for spec {key}")
        return self.table[key]


def ensure_memoized(evaluator, cache_path=None) -> MemoizedEvaluator:
    if isinstance(evaluator, MemoizedEvaluator):
        return evaluator
    return MemoizedEvaluator(evaluator, cache_path)


# ---------------------------------------------------------------------------
# Surrogate oracle: closed-form evaluator for exercising the loop
# ---------------------------------------------------------------------------

_SURROGATE_RES = (1024, 2048)
# synthetic device: per-layer launch overhead plus FLOPs at a peak rate that
# is discounted for layer kind, large spatial extents (memory traffic), and
# narrow channels (underutilization); narrow convs therefore widen almost
# for free until a plateau, as on real accelerators
_SURROGATE_OVERHEAD_MS = 0.006
_SURROGATE_PEAK_MFLOPS_PER_MS = 24000.0
_SURROGATE_RES_PIXELS = float(1 << 21)
_SURROGATE_CHAN_HALF = 48.0


def _surrogate_kind_eff(signature: str) -> float:
    if signature.startswith("conv3x3"):
        base = 1.0
    elif signature.startswith("conv1x1"):
        base = 0.75
    elif signature.startswith("conv"):
        base = 0.9
    elif signature.startswith("resize"):
        base = 0.5
    else:  # norm / act / eltwise: memory bound
        base = 0.3
    if "groups=" in signature:
        base *= 0.35  # grouped/depthwise convs run far below peak
    return base


def _surrogate_price_ms(layer) -> float:
    channels, h, w = layer.out_shape
    eff = (
        _surrogate_kind_eff(layer.signature)
        * (1.0 / (1.0 + (h * w) / _SURROGATE_RES_PIXELS))
        * (channels / (channels + _SURROGATE_CHAN_HALF))
    )
    return _SURROGATE_OVERHEAD_MS + layer.flops / (_SURROGATE_PEAK_MFLOPS_PER_MS * 1e6 * eff)


def surrogate_latency(spec: NetworkSpec) -> float:
    """Analytic latency of `spec` under the fixed synthetic device profile."""
    report = count_flops(spec, input_res=_SURROGATE_RES)
    entries = {layer.signature: _surrogate_price_ms(layer) for layer in report.layers}
    profile = DeviceProfile(entries=entries, default_mflops_per_ms=None, label="surrogate")
    return estimate_latency(report, profile)


def surrogate_oracle(seed: int = 0) -> CallableEvaluator:
    """Deterministic closed-form evaluator (no training, no device).

    lat: analytic per-layer costs under a fixed synthetic device profile.
    perf: 100 * (1 - exp(-(a*log1p(flops) + b*max_ratio + c*total_depth)))
    with (a, b, c) drawn from `seed`; strictly increasing under every
    catalog op and bounded in (0, 100).
    """
    rng = np.random.default_rng(seed)
    a = float(rng.uniform(0.015, 0.035))
    b = float(rng.uniform(0.01, 0.06))
    c = float(rng.uniform(0.001, 0.004))

    def perf_fn(spec):
        report = count_flops(spec, input_res=_SURROGATE_RES)
        max_ratio = spec.ratios[0].value
        g = a * math.log1p(report.total_flops) + b * max_ratio + c * spec.total_depth
        return 100.0 * (1.0 - math.exp(-g))

    return CallableEvaluator(perf_fn, surrogate_latency, label=f"surrogate(seed={seed})")


# ---------------------------------------------------------------------------
# Greedy rules: target latency, stepsize scan, candidate selection
# ---------------------------------------------------------------------------

def _lat_of(evaluator, spec, op) -> float:
    try:
        return evaluator.lat(spec)
    except (KeyError, ValueError, RuntimeError) as exc:
        raise ExpansionError(f"evaluator failed on candidate {op.label}: {exc}") from exc


def target_latency(spec: NetworkSpec, catalog, lat) -> float:
    """Max latency over all applicable one-unit expansions of `spec`."""
    best = None
    for op in catalog:
        try:
            candidate = archspec.apply(spec, op, 1)
        except BoundsError:
            continue  # op not applicable at the bounds; it cannot set the target
        try:
            value = float(lat(candidate))
        except (KeyError, ValueError, RuntimeError) as exc:
            raise ExpansionError(f"latency evaluation failed for {op.label}: {exc}") from exc
        if best is None or value > best:
            best = value
    if best is None:
        raise ExpansionError("no catalog op is applicable within bounds")
    return best


def stepsize(spec: NetworkSpec, op: ExpansionOp, l_target: float, lat) -> int:
    """Smallest-|lat - L_T| repetition count for `op`, scanning k = 1, 2, ...

    Scans while latency stays <= L_T, then weighs the first overshoot against
    the best undershoot; ties go to the smaller k.  The scan tolerates noisy
    (non-monotone) latencies by working on observed values, warning when a
    value drops below the running maximum by more than the noise floor.
    """
    observed = []  # (k, lat)
    running_max = None
    k = 1
    while True:
        if k > MAX_STEPSIZE:
            raise ExpansionError(
                f"stepsize scan for {op.label} exceeded k={MAX_STEPSIZE} "
                f"without reaching target latency {l_target:.6g} ms"
            )
        try:
            candidate = archspec.apply(spec, op, k)
        except BoundsError:
            if not observed:
                raise
            break  # bounds cut the scan short; pick among what we saw
        value = float(lat(candidate))
        if running_max is not None and value < running_max - NOISE_FLOOR_MS:
            warnings.warn(
                f"latency not monotone over stepsize for {op.label}: "
                f"k={k} gives {value:.6g} ms after max {running_max:.6g} ms",
                NonMonotoneLatencyWarning,
                stacklevel=2,
            )
        running_max = value if running_max is None else max(running_max, value)
        observed.append((k, value))
        if value > l_target:
            break
        k += 1
    best_k, best_err = None, None
    for k, value in observed:
        err = abs(value - l_target)
        if best_err is None or err < best_err:
            best_k, best_err = k, err
    return best_k


@dataclass
class Candidate:
    op: ExpansionOp
    k: int | None
    spec: NetworkSpec | None
    perf: float | None
    lat_ms: float | None
    ratio: float | None
    excluded: bool
    reason: str = ""


@dataclass
class SelectionResult:
    op: ExpansionOp
    k: int
    spec: NetworkSpec
    perf: float
    lat_ms: float
    lat_target: float
    candidates: list


def select(spec: NetworkSpec, perf_prev: float, lat_prev: float, catalog,
           evaluator) -> SelectionResult:
    """One greedy step: maximize (perf - perf_prev) / (lat - lat_prev).

    Candidates whose latency does not exceed `lat_prev` are excluded (the
    ratio's denominator must be positive); ties break by catalog order.
    """
    evaluator = ensure_memoized(evaluator)
    l_target = target_latency(spec, catalog, evaluator.lat)
    candidates = []
    best = None
    for op in catalog:
        try:
            k = stepsize(spec, op, l_target, evaluator.lat)
        except BoundsError:
            candidates.append(
                Candidate(op, None, None, None, None, None, True, "outside bounds")
            )
            continue
        cand_spec = archspec.apply(spec, op, k)
        try:
            perf, lat_ms = evaluator.evaluate(cand_spec)
        except (KeyError, ValueError, RuntimeError) as exc:
            raise ExpansionError(f"evaluator failed on candidate {op.label}: {exc}") from exc
        delta_lat = lat_ms - lat_prev
        if delta_lat <= 0:
            candidates.append(
                Candidate(op, k, cand_spec, perf, lat_ms, None, True,
                          "latency not increased")
            )
            continue
        ratio = (perf - perf_prev) / delta_lat
        cand = Candidate(op, k, cand_spec, perf, lat_ms, ratio, False)
        candidates.append(cand)
        if best is None or ratio > best.ratio:
            best = cand
    if best is None:
        raise ExpansionError("no expanding candidate increases latency")
    return SelectionResult(
        best.op, best.k, best.spec, best.perf, best.lat_ms, l_target, candidates
    )


# ---------------------------------------------------------------------------
# The loop
# ---------------------------------------------------------------------------

@dataclass
class ExpansionStep:
    index: int
    chosen_op: ExpansionOp
    k: int
    spec: NetworkSpec
    perf: float
    lat_ms: float
    lat_target: float
    candidates: list = field(default_factory=list)


@dataclass
class Trajectory:
    origin: NetworkSpec
    origin_perf: float
    origin_lat: float
    steps: list = field(default_factory=list)
    truncation_cause: str | None = None

    def specs(self):
        return [self.origin] + [s.spec for s in self.steps]

    def validate(self) -> None:
        lat = self.origin_lat
        prev = self.origin
        for i, step in enumerate(self.steps, start=1):
            if step.index != i:
                raise AssertionError(f"step indices not contiguous at {step.index} != {i}")
            if step.lat_ms <= lat:
                raise AssertionError(
                    f"latency not strictly increasing at step {i}: "
                    f"{step.lat_ms} <= {lat}"
                )
            if archspec.apply(prev, step.chosen_op, step.k) != step.spec:
                raise AssertionError(f"step {i} spec is not apply(prev, op, k)")
            lat = step.lat_ms
            prev = step.spec


def expand(origin: NetworkSpec, steps: int, evaluator, state_dir=None,
           catalog=None) -> Trajectory:
    """Run `steps` greedy expansions from `origin`.

    With `state_dir`, evaluations are persisted there (evaluations.json) and
    the trajectory plus per-step candidate tables are written as CSV after
    every step, so an interrupted run resumes by replaying cached
    evaluations.  A step where no candidate increases latency truncates the
    trajectory and records the cause; other failures propagate.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    archspec.check_valid(origin)
    ops = list(catalog) if catalog is not None else archspec.catalog()
    cache_path = None
    if state_dir:
        os.makedirs(state_dir, exist_ok=True)
        cache_path = os.path.join(state_dir, "evaluations.json")
    evaluator = ensure_memoized(evaluator, cache_path)
    perf, lat_ms = evaluator.evaluate(origin)
    trajectory = Trajectory(origin, perf, lat_ms)
    spec = origin
    for index in range(1, steps + 1):
        try:
            result = select(spec, perf, lat_ms, ops, evaluator)
        except ExpansionError as exc:
            trajectory.truncation_cause = f"step {index}: {exc}"
            break
        trajectory.steps.append(
            ExpansionStep(index, result.op, result.k, result.spec, result.perf,
                          result.lat_ms, result.lat_target, result.candidates)
        )
        spec, perf, lat_ms = result.spec, result.perf, result.lat_ms
        if state_dir:
            write_trajectory(trajectory, state_dir)
    if state_dir:
        write_trajectory(trajectory, state_dir)
    trajectory.validate()
    return trajectory


# ---------------------------------------------------------------------------
# Trajectory files
# ---------------------------------------------------------------------------

def _fmt_depths(spec):
    return " ".join(str(d) for d in spec.depths)


def _fmt_widths(spec):
    return " ".join(str(w) for w in spec.widths)


def _fmt_ratios(spec):
    return " ".join(str(r) for r in spec.ratios)


def _trajectory_rows(trajectory: Trajectory):
    rows = [
        {
            "step": 0,
            "dimension": "",
            "op_index": "",
            "k": "",
            "depths": _fmt_depths(trajectory.origin),
            "widths": _fmt_widths(trajectory.origin),
            "ratios": _fmt_ratios(trajectory.origin),
            "perf_pct": f"{trajectory.origin_perf:.6g}",
            "lat_ms": f"{trajectory.origin_lat:.6g}",
        }
    ]
    for step in trajectory.steps:
        rows.append(
            {
                "step": step.index,
                "dimension": step.chosen_op.dimension.value,
                "op_index": step.chosen_op.index,
                "k": step.k,
                "depths": _fmt_depths(step.spec),
                "widths": _fmt_widths(step.spec),
                "ratios": _fmt_ratios(step.spec),
                "perf_pct": f"{step.perf:.6g}",
                "lat_ms": f"{step.lat_ms:.6g}",
            }
        )
    return rows


TRAJECTORY_COLUMNS = ["step", "dimension", "op_index", "k", "depths", "widths",
                      "ratios", "perf_pct", "lat_ms"]


def export_trajectory_csv(trajectory: Trajectory, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAJECTORY_COLUMNS)
        writer.writeheader()
        writer.writerows(_trajectory_rows(trajectory))


def export_candidates_csv(step: ExpansionStep, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["op_index", "label", "dimension", "k", "perf_pct",
                         "lat_ms", "ratio", "excluded", "reason"])
        for cand in step.candidates:
            writer.writerow([
                cand.op.index,
                cand.op.label,
                cand.op.dimension.value,
                cand.k if cand.k is not None else "",
                f"{cand.perf:.6g}" if cand.perf is not None else "",
                f"{cand.lat_ms:.6g}" if cand.lat_ms is not None else "",
                f"{cand.ratio:.6g}" if cand.ratio is not None else "",
                int(cand.excluded),
                cand.reason,
            ])


def export_tradeoff_csv(trajectory: Trajectory, path) -> None:
    """Latency-vs-performance curve data, one row per trajectory point."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lat_ms", "perf_pct"])
        writer.writerow([0, f"{trajectory.origin_lat:.6g}", f"{trajectory.origin_perf:.6g}"])
        for step in trajectory.steps:
            writer.writerow([step.index, f"{step.lat_ms:.6g}", f"{step.perf:.6g}"])


def write_trajectory(trajectory: Trajectory, out_dir) -> None:
    """Write trajectory CSV, tradeoff curve, and per-step candidate tables."""
    os.makedirs(out_dir, exist_ok=True)
    export_trajectory_csv(trajectory, os.path.join(out_dir, "trajectory.csv"))
    export_tradeoff_csv(trajectory, os.path.join(out_dir, "tradeoff.csv"))
    for step in trajectory.steps:
        export_candidates_csv(
            step, os.path.join(out_dir, f"step_{step.index:02d}_candidates.csv")
        )
    if trajectory.truncation_cause:
        with open(os.path.join(out_dir, "truncation.txt"), "w", encoding="utf-8") as fh:
            fh.write(trajectory.truncation_cause + "\n")
