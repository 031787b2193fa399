"""Block and interaction vocabularies shared by the cost model and the nets."""

from __future__ import annotations

from enum import Enum


class BlockKind(str, Enum):
    """Convolutional block styles a stage can be built from."""

    CONV3X3 = "conv3x3"
    SEPCONV3X3 = "sepconv3x3"
    RESIDUAL = "residual"
    BOTTLENECK = "bottleneck"
    SHUFFLE = "shuffle"
    INVERTED_RESIDUAL = "inverted_residual"
    GHOST = "ghost"


class InteractionKind(str, Enum):
    """Cross-path fusion styles applied at the end of stages 3-5."""

    NONE = "none"
    BILATERAL_B = "bilateral_b"   # parameter-free two-way resize + add (default)
    BILATERAL_A = "bilateral_a"   # two-way, 1x1 conv per direction
    DIRECT_A = "direct_a"         # one-way, 3x3 conv then upsample + add
    DIRECT_B = "direct_b"         # one-way, concat + channel-restoring 1x1 conv
    ATTENTION_A = "attention_a"   # one-way attention gating
    ATTENTION_B = "attention_b"   # two-way attention gating


def coerce_block_kind(value) -> BlockKind:
    if isinstance(value, BlockKind):
        return value
    try:
        return BlockKind(str(value).lower())
    except ValueError:
        options = ", ".join(k.value for k in BlockKind)
        raise ValueError(f"unknown block kind {value!r} (choose from: {options})") from None


def coerce_interaction_kind(value) -> InteractionKind:
    if value is None:
        return InteractionKind.NONE
    if isinstance(value, InteractionKind):
        return value
    try:
        return InteractionKind(str(value).lower())
    except ValueError:
        options = ", ".join(k.value for k in InteractionKind)
        raise ValueError(f"unknown interaction kind {value!r} (choose from: {options})") from None
