"""Reference expansion trajectory shipped with the package.

The greedy expander was run once on the development rig (GTX 1070 Ti,
TensorRT, fp32, 1024x2048 inputs, 19-class urban-driving benchmark) and the
resulting trajectory was recorded: per step, the chosen spec, its measured
median latency, and the validation mIoU of the trained network.  The stock
presets S / M / L are steps 7, 8 and 10 of this trajectory.

The recorded numbers power two reusable artifacts:

  * an arithmetic replay of the recorded (op, k) choices, for regression
    tests over the descriptor algebra, and
  * a lookup evaluator that lets the expander re-run the recorded search
    without a GPU (see :mod:`pathseg.expander`).

Latency and accuracy below are measurements of the rig, not properties of
this code; treat them as fixture data.
"""

from __future__ import annotations

from dataclasses import dataclass

from pathseg.archspec import Dimension, NetworkSpec, apply, infer_expansion


@dataclass(frozen=True)
class RecordedStep:
    step: int
    spec: NetworkSpec
    lat_ms: float
    miou_pct: float
    dimension: Dimension | None  # None for the origin row
    preset: str | None = None


def _row(step, depths, widths, ratios, lat, miou, dim, preset=None):
    return RecordedStep(step, NetworkSpec(depths, widths, ratios), lat, miou, dim, preset)


_D, _W, _R = Dimension.DEPTH, Dimension.WIDTH, Dimension.RESOLUTION

RECORDED_TRAJECTORY = (
    _row(0, (1, 1, 1, 1, 1), (4, 8, 16, 32, 32), (4, 0, 0), 0.38, 24.1, None),
    _row(1, (1, 1, 1, 8, 8), (4, 8, 16, 32, 32), (4, 0, 0), 0.49, 41.4, _D),
    _row(2, (1, 1, 1, 8, 8), (4, 16, 32, 64, 64), (4, 0, 0), 0.63, 53.4, _W),
    _row(3, (1, 1, 1, 8, 8), (8, 24, 48, 96, 96), (4, 0, 0), 0.98, 57.8, _W),
    _row(4, (1, 1, 1, 8, 8), (8, 24, 48, 96, 96), (5, 0, 0), 1.25, 60.1, _R),
    _row(5, (1, 3, 3, 10, 10), (8, 24, 48, 96, 96), (5, 0, 0), 1.80, 62.3, _D),
    _row(6, (1, 3, 3, 10, 10), (8, 24, 48, 96, 96), (5, 2, 0), 2.53, 64.6, _R),
    _row(7, (1, 3, 3, 10, 10), (8, 24, 48, 96, 96), (6, 2, 0), 3.37, 66.1, _R, "S"),
    _row(8, (1, 3, 3, 10, 10), (8, 24, 48, 96, 96), (8, 2, 0), 5.17, 69.5, _R, "M"),
    _row(9, (1, 3, 3, 10, 10), (8, 24, 64, 128, 128), (8, 2, 0), 7.07, 70.8, _W),
    _row(10, (1, 3, 3, 10, 10), (8, 24, 64, 160, 160), (8, 2, 0), 9.52, 71.4, _W, "L"),
    _row(11, (1, 3, 3, 10, 10), (8, 24, 64, 160, 160), (9, 2, 0), 12.38, 72.0, _R),
    _row(12, (1, 3, 3, 10, 10), (8, 24, 64, 160, 160), (11, 2, 0), 17.81, 73.0, _R),
    _row(13, (1, 3, 3, 10, 10), (8, 32, 80, 192, 192), (11, 2, 0), 25.14, 74.2, _W),
    _row(14, (1, 3, 3, 10, 10), (8, 32, 96, 224, 224), (11, 2, 0), 31.18, 74.8, _W),
)

# Conditions the trajectory was recorded under; the lookup evaluator uses the
# same ones so analytic FLOPs line up with the recorded latencies.
RECORDED_INPUT_RES = (1024, 2048)
RECORDED_NUM_CLASSES = 19


def recorded_choices() -> list:
    """Recover the (op, k) move behind every recorded step.

    Each consecutive pair of rows differs by exactly one catalog move; the
    decomposition is re-derived (rather than hand-written) so the table and
    the descriptor algebra cross-check each other.
    """
    choices = []
    for prev, new in zip(RECORDED_TRAJECTORY, RECORDED_TRAJECTORY[1:]):
        found = infer_expansion(prev.spec, new.spec)
        if found is None:
            raise AssertionError(f"step {new.step} is not one catalog move from step {prev.step}")
        op, k = found
        if op.dimension is not new.dimension:
            raise AssertionError(
                f"step {new.step}: inferred {op.dimension} but table says {new.dimension}"
            )
        choices.append((op, k))
    return choices


def replay_choices(origin: NetworkSpec | None = None) -> list:
    """Apply the recorded (op, k) list from the origin row; returns all 15 specs."""
    spec = origin if origin is not None else RECORDED_TRAJECTORY[0].spec
    specs = [spec]
    for op, k in recorded_choices():
        spec = apply(spec, op, k)
        specs.append(spec)
    return specs
