"""Cross-path interaction modules.

Each module takes the higher-resolution map ``xh`` and the lower-resolution
map ``xl`` of an adjacent path pair (same channel count) and returns the
fused pair.  U/D denote bilinear up/downsampling to the partner's size.
"""

from __future__ import annotations

import torch
from torch import nn

from pathseg.kinds import InteractionKind
from pathseg.netcore.blocks import Add, Mul, OneMinus, Resize


def _check_pair(xh, xl):
    if xh.shape[-3] != xl.shape[-3]:
        raise ValueError(
            f"interaction needs equal channel counts, got {xh.shape[-3]} and {xl.shape[-3]}"
        )
    if xh.shape[-2] < xl.shape[-2] or xh.shape[-1] < xl.shape[-1]:
        raise ValueError(
            f"xh must be at least as large as xl, got {tuple(xh.shape[-2:])} vs {tuple(xl.shape[-2:])}"
        )


class BilateralB(nn.Module):
    """Parameter-free two-way fusion: xh' = xh + U(xl), xl' = xl + D(xh)."""

    def __init__(self, channels):
        super().__init__()
        self.up = Resize()
        self.add_h = Add()
        self.down = Resize()
        self.add_l = Add()

    def forward(self, xh, xl):
        _check_pair(xh, xl)
        new_h = self.add_h(xh, self.up(xl, xh.shape[-2:]))
        new_l = self.add_l(xl, self.down(xh, xl.shape[-2:]))
        return new_h, new_l


class BilateralA(nn.Module):
    """Two-way fusion with a 1x1 conv per direction."""

    def __init__(self, channels):
        super().__init__()
        self.f_low = nn.Conv2d(channels, channels, 1, bias=False)
        self.f_high = nn.Conv2d(channels, channels, 1, bias=False)
        self.up = Resize()
        self.down = Resize()
        self.add_h = Add()
        self.add_l = Add()

    def forward(self, xh, xl):
        _check_pair(xh, xl)
        new_h = self.add_h(xh, self.up(self.f_low(xl), xh.shape[-2:]))
        new_l = self.add_l(xl, self.down(self.f_high(xh), xl.shape[-2:]))
        return new_h, new_l


class DirectA(nn.Module):
    """One-way fusion: xh' = xh + U(F(xl)), xl' = F(xl)."""

    def __init__(self, channels):
        super().__init__()
        self.f_low = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.up = Resize()
        self.add_h = Add()

    def forward(self, xh, xl):
        _check_pair(xh, xl)
        fl = self.f_low(xl)
        return self.add_h(xh, self.up(fl, xh.shape[-2:])), fl


class DirectB(nn.Module):
    """One-way fusion by concatenation + channel-restoring 1x1 conv."""

    def __init__(self, channels):
        super().__init__()
        self.f_low = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.up = Resize()
        self.fuse = nn.Conv2d(2 * channels, channels, 1, bias=False)

    def forward(self, xh, xl):
        _check_pair(xh, xl)
        fl = self.f_low(xl)
        new_h = self.fuse(torch.cat([xh, self.up(fl, xh.shape[-2:])], dim=-3))
        return new_h, fl


class AttentionA(nn.Module):
    """One-way attention gating.

    att = sigmoid(1x1 conv of xl), broadcast over channels:
        xl' = F_l(xl) * att
        xh' = U(xl') + F_h(xh) * U(1 - att)
    """

    def __init__(self, channels):
        super().__init__()
        self.f_low = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.f_high = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.att = nn.Conv2d(channels, 1, 1, bias=False)
        self.sigmoid = nn.Sigmoid()
        self.gate_low = Mul()
        self.att_inv = OneMinus()
        self.up_gated = Resize()
        self.up_att = Resize()
        self.gate_high = Mul()
        self.add_h = Add()

    def forward(self, xh, xl):
        _check_pair(xh, xl)
        att = self.sigmoid(self.att(xl))
        gated = self.gate_low(self.f_low(xl), att)
        inv = self.up_att(self.att_inv(att), xh.shape[-2:])
        new_h = self.add_h(
            self.up_gated(gated, xh.shape[-2:]), self.gate_high(self.f_high(xh), inv)
        )
        return new_h, gated


class AttentionB(nn.Module):
    """Two-way attention gating; each branch is gated by the other path's map."""

    def __init__(self, channels):
        super().__init__()
        self.f_low = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.f_high = nn.Conv2d(channels, channels, 3, padding=1, bias=False)
        self.att_low = nn.Conv2d(channels, 1, 1, bias=False)
        self.att_high = nn.Conv2d(channels, 1, 1, bias=False)
        self.sigmoid_low = nn.Sigmoid()
        self.sigmoid_high = nn.Sigmoid()
        self.gate_low = Mul()
        self.gate_high = Mul()
        self.inv_low = OneMinus()
        self.inv_high = OneMinus()
        self.up_gated = Resize()
        self.up_att = Resize()
        self.mix_high = Mul()
        self.add_h = Add()
        self.down_gated = Resize()
        self.down_att = Resize()
        self.mix_low = Mul()
        self.add_l = Add()

    def forward(self, xh, xl):
        _check_pair(xh, xl)
        att_l = self.sigmoid_low(self.att_low(xl))
        att_h = self.sigmoid_high(self.att_high(xh))
        fl, fh = self.f_low(xl), self.f_high(xh)
        gl = self.gate_low(fl, att_l)
        gh = self.gate_high(fh, att_h)
        new_h = self.add_h(
            self.up_gated(gl, xh.shape[-2:]),
            self.mix_high(fh, self.up_att(self.inv_low(att_l), xh.shape[-2:])),
        )
        new_l = self.add_l(
            self.down_gated(gh, xl.shape[-2:]),
            self.mix_low(fl, self.down_att(self.inv_high(att_h), xl.shape[-2:])),
        )
        return new_h, new_l


_INTERACTIONS = {
    InteractionKind.BILATERAL_B: BilateralB,
    InteractionKind.BILATERAL_A: BilateralA,
    InteractionKind.DIRECT_A: DirectA,
    InteractionKind.DIRECT_B: DirectB,
    InteractionKind.ATTENTION_A: AttentionA,
    InteractionKind.ATTENTION_B: AttentionB,
}


def build_interaction(kind: InteractionKind, channels: int) -> nn.Module:
    if kind is InteractionKind.NONE:
        raise ValueError("interaction kind 'none' has no module; caller must skip")
    return _INTERACTIONS[kind](channels)


def interact_bilateral_b(xh, xl):
    """Functional form of the parameter-free default interaction."""
    return BilateralB(xh.shape[-3])(xh, xl)


def interact_attention_a(xh, xl, module: AttentionA | None = None, seed: int = 0):
    """Apply attention gating; a fresh seeded module is built unless given."""
    if module is None:
        from pathseg.netcore.network import init_parameters

        module = AttentionA(xh.shape[-3])
        init_parameters(module, seed)
    return module(xh, xl)


def interact_variants(kind, xh, xl, module: nn.Module | None = None, seed: int = 0):
    """Apply any named interaction variant (building a seeded module if needed)."""
    kind = InteractionKind(kind) if not isinstance(kind, InteractionKind) else kind
    if module is None:
        from pathseg.netcore.network import init_parameters

        module = build_interaction(kind, xh.shape[-3])
        init_parameters(module, seed)
    return module(xh, xl)
