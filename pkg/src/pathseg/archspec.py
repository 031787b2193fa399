"""Architecture descriptors for multi-path segmentation networks.

A network is described by three small integer vectors:

  * depths  -- number of blocks in each of the five stages
  * widths  -- channel count of each of the five stages
  * ratios  -- input scaling ratio of up to three parallel paths,
               kept as exact eighths (denominator fixed to 8)

The descriptor algebra in this module is deliberately free of any deep
learning dependency so that search / bookkeeping code can run anywhere.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

NUM_STAGES = 5
NUM_PATH_SLOTS = 3
RATIO_DENOM = 8

# hard upper bounds enforced by apply(); generous guards against runaway search
MAX_DEPTH = 64
MAX_WIDTH = 4096
MAX_RATIO_EIGHTHS = 32  # 32/8 == 4.0

# stage widths must stay divisible by these (stride-2 stages need even
# channel splits for grouped/shuffle style blocks, and the expansion
# catalog only ever moves widths in these quanta)
WIDTH_DIVISORS = (4, 8, 16, 32, 32)

SCHEMA_VERSION = 1


class SpecError(ValueError):
    """Malformed or out-of-contract network descriptor."""


class BoundsError(SpecError):
    """An expansion would push the descriptor past a hard bound."""


@dataclass(frozen=True, order=True)
class ScalingRatio:
    """Path input scale expressed in exact eighths (e.g. eighths=6 -> 3/4)."""

    eighths: int

    def __post_init__(self):
        if not isinstance(self.eighths, int) or isinstance(self.eighths, bool):
            raise SpecError(f"ratio eighths must be int, got {self.eighths!r}")
        if self.eighths < 0:
            raise SpecError(f"ratio eighths must be >= 0, got {self.eighths}")

    @property
    def value(self) -> float:
        return self.eighths / RATIO_DENOM

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.eighths, RATIO_DENOM)

    def scaled_size(self, extent: int) -> int:
        """Nearest multiple of 16 of ``ratio * extent`` (ties round up, floor 16)."""
        # exact integer arithmetic: round(e * extent / 8 / 16) * 16
        return max(16, 16 * ((self.eighths * extent + 64) // 128))

    def __str__(self) -> str:
        return "0" if self.eighths == 0 else f"{self.eighths}/{RATIO_DENOM}"

    @property
    def display(self) -> str:
        """Human-friendly reduced fraction ("3/4", "1", "0")."""
        f = self.fraction
        if f.denominator == 1:
            return str(f.numerator)
        return f"{f.numerator}/{f.denominator}"

    @classmethod
    def parse(cls, text: str) -> "ScalingRatio":
        t = text.strip()
        if t == "0":
            return cls(0)
        parts = t.split("/")
        if len(parts) != 2:
            raise SpecError(f"ratio {text!r} must be 'n/{RATIO_DENOM}' or '0'")
        try:
            num, den = int(parts[0]), int(parts[1])
        except ValueError:
            raise SpecError(f"ratio {text!r} has non-integer parts") from None
        if den != RATIO_DENOM:
            raise SpecError(f"ratio {text!r} must use denominator {RATIO_DENOM}")
        return cls(num)


def _as_int_tuple(values, count, what) -> tuple:
    try:
        items = tuple(values)
    except TypeError:
        raise SpecError(f"{what} must be a sequence, got {values!r}") from None
    if len(items) != count:
        raise SpecError(f"{what} must have {count} entries, got {len(items)}")
    for v in items:
        if not isinstance(v, int) or isinstance(v, bool):
            raise SpecError(f"{what} entries must be int, got {v!r}")
    return items


@dataclass(frozen=True)
class NetworkSpec:
    """Immutable (depths, widths, ratios) descriptor.

    Ratios are canonicalized to non-increasing order on construction; two
    specs describing the same network therefore compare equal and serialize
    identically.  Construction only checks shapes and types; value-level
    rules are reported by :func:`validate`.
    """

    depths: tuple
    widths: tuple
    ratios: tuple

    def __post_init__(self):
        object.__setattr__(self, "depths", _as_int_tuple(self.depths, NUM_STAGES, "depths"))
        object.__setattr__(self, "widths", _as_int_tuple(self.widths, NUM_STAGES, "widths"))
        try:
            raw = tuple(self.ratios)
        except TypeError:
            raise SpecError(f"ratios must be a sequence, got {self.ratios!r}") from None
        if len(raw) != NUM_PATH_SLOTS:
            raise SpecError(f"ratios must have {NUM_PATH_SLOTS} entries, got {len(raw)}")
        norm = []
        for r in raw:
            if isinstance(r, ScalingRatio):
                norm.append(r)
            elif isinstance(r, int) and not isinstance(r, bool):
                norm.append(ScalingRatio(r))
            else:
                raise SpecError(f"ratio entries must be ScalingRatio or int eighths, got {r!r}")
        norm.sort(key=lambda r: r.eighths, reverse=True)
        object.__setattr__(self, "ratios", tuple(norm))

    @property
    def num_paths(self) -> int:
        return sum(1 for r in self.ratios if r.eighths > 0)

    @property
    def active_ratios(self) -> tuple:
        return tuple(r for r in self.ratios if r.eighths > 0)

    @property
    def total_depth(self) -> int:
        return sum(self.depths)

    def describe(self) -> str:
        depths = ",".join(str(d) for d in self.depths)
        widths = ",".join(str(w) for w in self.widths)
        ratios = ",".join(r.display for r in self.ratios)
        return f"depths={{{depths}}} widths={{{widths}}} ratios={{{ratios}}}"


def initial_spec() -> NetworkSpec:
    """Smallest searchable network: one half-resolution path, one block per stage."""
    return NetworkSpec((1, 1, 1, 1, 1), (4, 8, 16, 32, 32), (4, 0, 0))


def validate(spec: NetworkSpec) -> list:
    """Return every contract violation of ``spec`` (empty list == valid)."""
    problems = []
    for i, d in enumerate(spec.depths):
        if d < 1:
            problems.append(f"depths[{i}] must be >= 1, got {d}")
        elif d > MAX_DEPTH:
            problems.append(f"depths[{i}] exceeds maximum {MAX_DEPTH}, got {d}")
    for i, (w, div) in enumerate(zip(spec.widths, WIDTH_DIVISORS)):
        if w < 1:
            problems.append(f"widths[{i}] must be >= 1, got {w}")
            continue
        if w % div != 0:
            problems.append(f"widths[{i}] must be divisible by {div}, got {w}")
        if w > MAX_WIDTH:
            problems.append(f"widths[{i}] exceeds maximum {MAX_WIDTH}, got {w}")
    if spec.num_paths == 0:
        problems.append("at least one scaling ratio must be non-zero")
    for i, r in enumerate(spec.ratios):
        if r.eighths > MAX_RATIO_EIGHTHS:
            problems.append(
                f"ratios[{i}] exceeds maximum {MAX_RATIO_EIGHTHS}/{RATIO_DENOM}, got {r}"
            )
    return problems


def check_valid(spec: NetworkSpec) -> NetworkSpec:
    problems = validate(spec)
    if problems:
        raise SpecError("invalid spec: " + "; ".join(problems))
    return spec


# ---------------------------------------------------------------------------
# Expansion catalog
# ---------------------------------------------------------------------------

class Dimension(str, Enum):
    DEPTH = "depth"
    WIDTH = "width"
    RESOLUTION = "resolution"


@dataclass(frozen=True)
class ExpansionOp:
    """One atomic expansion: add ``deltas`` (once per unit step) to a dimension."""

    index: int
    dimension: Dimension
    deltas: tuple

    @property
    def label(self) -> str:
        start = next(i for i, d in enumerate(self.deltas) if d != 0)
        name = {Dimension.DEPTH: "depth", Dimension.WIDTH: "width", Dimension.RESOLUTION: "ratio"}
        return f"{name[self.dimension]}@{start + 1}"

    def __str__(self) -> str:
        return self.label


# Fixed expansion moves, in canonical (tie-break) order.  Depth moves add one
# block to a suffix of the stages, width moves add one "width quantum" to a
# suffix, resolution moves add 1/8 to one path slot.
_CATALOG = (
    ExpansionOp(0, Dimension.DEPTH, (0, 1, 1, 1, 1)),
    ExpansionOp(1, Dimension.DEPTH, (0, 0, 1, 1, 1)),
    ExpansionOp(2, Dimension.DEPTH, (0, 0, 0, 1, 1)),
    ExpansionOp(3, Dimension.WIDTH, (4, 8, 16, 32, 32)),
    ExpansionOp(4, Dimension.WIDTH, (0, 8, 16, 32, 32)),
    ExpansionOp(5, Dimension.WIDTH, (0, 0, 16, 32, 32)),
    ExpansionOp(6, Dimension.WIDTH, (0, 0, 0, 32, 32)),
    ExpansionOp(7, Dimension.RESOLUTION, (1, 0, 0)),
    ExpansionOp(8, Dimension.RESOLUTION, (0, 1, 0)),
    ExpansionOp(9, Dimension.RESOLUTION, (0, 0, 1)),
)


def catalog() -> tuple:
    """The ten expansion moves in canonical order."""
    return _CATALOG


def _apply_unit(spec: NetworkSpec, op: ExpansionOp) -> NetworkSpec:
    if op.dimension is Dimension.DEPTH:
        depths = tuple(d + x for d, x in zip(spec.depths, op.deltas))
        for i, d in enumerate(depths):
            if d > MAX_DEPTH:
                raise BoundsError(f"{op.label}: depths[{i}]={d} exceeds {MAX_DEPTH}")
        return NetworkSpec(depths, spec.widths, spec.ratios)
    if op.dimension is Dimension.WIDTH:
        widths = tuple(w + x for w, x in zip(spec.widths, op.deltas))
        for i, w in enumerate(widths):
            if w > MAX_WIDTH:
                raise BoundsError(f"{op.label}: widths[{i}]={w} exceeds {MAX_WIDTH}")
        return NetworkSpec(spec.depths, widths, spec.ratios)
    eighths = [r.eighths + x for r, x in zip(spec.ratios, op.deltas)]
    for i, e in enumerate(eighths):
        if e > MAX_RATIO_EIGHTHS:
            raise BoundsError(
                f"{op.label}: ratios[{i}]={e}/{RATIO_DENOM} exceeds {MAX_RATIO_EIGHTHS}/{RATIO_DENOM}"
            )
    return NetworkSpec(spec.depths, spec.widths, tuple(eighths))


def apply(spec: NetworkSpec, op: ExpansionOp, k: int = 1) -> NetworkSpec:
    """Apply ``op`` ``k`` times.

    Repetition is defined as k successive unit applications so that
    apply(apply(s, op, a), op, b) == apply(s, op, a + b) holds even when
    ratio canonicalization reorders the slots between units.  Depth and
    width moves commute with canonicalization, so they take one shortcut
    addition.
    """
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        raise SpecError(f"step multiplier k must be an int >= 1, got {k!r}")
    if op.dimension is Dimension.RESOLUTION:
        out = spec
        for _ in range(k):
            out = _apply_unit(out, op)
        return out
    scaled = ExpansionOp(op.index, op.dimension, tuple(k * d for d in op.deltas))
    return _apply_unit(spec, scaled)


def infer_expansion(prev: NetworkSpec, new: NetworkSpec):
    """Find the unique (op, k) with apply(prev, op, k) == new, else None."""
    for op in _CATALOG:
        if op.dimension is Dimension.DEPTH:
            diffs = [n - p for p, n in zip(prev.depths, new.depths)]
        elif op.dimension is Dimension.WIDTH:
            diffs = [n - p for p, n in zip(prev.widths, new.widths)]
        else:
            diffs = [n.eighths - p.eighths for p, n in zip(prev.ratios, new.ratios)]
        ks = {d // u for d, u in zip(diffs, op.deltas) if u != 0}
        if len(ks) != 1:
            continue
        k = ks.pop()
        if k < 1:
            continue
        try:
            if apply(prev, op, k) == new:
                return op, k
        except BoundsError:
            continue
    return None


# ---------------------------------------------------------------------------
# Serialization (version 1): plain JSON, ratios rendered as "n/8" strings
# ---------------------------------------------------------------------------

def spec_to_dict(spec: NetworkSpec) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "depths": list(spec.depths),
        "widths": list(spec.widths),
        "ratios": [str(r) for r in spec.ratios],
    }


def spec_from_dict(data: dict) -> NetworkSpec:
    if not isinstance(data, dict):
        raise SpecError(f"spec document must be an object, got {type(data).__name__}")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SpecError(f"field 'schema_version': expected {SCHEMA_VERSION}, got {version!r}")
    for field in ("depths", "widths", "ratios"):
        if field not in data:
            raise SpecError(f"field '{field}' is missing")
    try:
        ratios = tuple(ScalingRatio.parse(str(r)) for r in data["ratios"])
    except SpecError as exc:
        raise SpecError(f"field 'ratios': {exc}") from None
    try:
        return NetworkSpec(tuple(data["depths"]), tuple(data["widths"]), ratios)
    except SpecError as exc:
        raise SpecError(f"bad spec document: {exc}") from None


def serialize(spec: NetworkSpec) -> str:
    """Canonical single-line JSON form (stable: safe to use as a dict key)."""
    return json.dumps(spec_to_dict(spec), separators=(",", ":"), sort_keys=True)


def parse(text: str) -> NetworkSpec:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"spec is not valid JSON: {exc}") from None
    return spec_from_dict(data)


def save_spec(spec: NetworkSpec, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(spec_to_dict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_spec(path) -> NetworkSpec:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: not valid JSON: {exc}") from None
    try:
        return spec_from_dict(data)
    except SpecError as exc:
        raise SpecError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# Stock presets (small / medium / large points on the reference expansion)
# ---------------------------------------------------------------------------

_PRESETS = {
    "S": NetworkSpec((1, 3, 3, 10, 10), (8, 24, 48, 96, 96), (6, 2, 0)),
    "M": NetworkSpec((1, 3, 3, 10, 10), (8, 24, 48, 96, 96), (8, 2, 0)),
    "L": NetworkSpec((1, 3, 3, 10, 10), (8, 24, 64, 160, 160), (8, 2, 0)),
}


def presets() -> dict:
    """Named stock specs; each validates and is reachable from initial_spec()."""
    return dict(_PRESETS)
