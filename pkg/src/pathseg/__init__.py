"""Latency-aware multi-path segmentation networks with progressive scaling."""

__version__ = "0.1.0"

from pathseg.archspec import (  # noqa: F401
    NetworkSpec,
    ScalingRatio,
    ExpansionOp,
    Dimension,
    initial_spec,
    catalog,
    apply,
    validate,
    serialize,
    parse,
    presets,
)
