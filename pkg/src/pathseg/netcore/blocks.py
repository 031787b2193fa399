"""Convolutional block zoo for stage construction.

Every convolution is bias-free and followed by BatchNorm (+ ReLU unless the
block calls for a linear tail); the final network head is the one exception,
handled in network.py.  Blocks take (cin, cout, stride) and preserve spatial
size apart from the stride.
"""

from __future__ import annotations

import torch
from torch import nn

from pathseg.kinds import BlockKind


class ConvNorm(nn.Module):
    def __init__(self, cin, cout, kernel, stride=1, groups=1):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, kernel, stride, kernel // 2, groups=groups, bias=False)
        self.norm = nn.BatchNorm2d(cout)

    def forward(self, x):
        return self.norm(self.conv(x))


class ConvNormAct(nn.Module):
    def __init__(self, cin, cout, kernel, stride=1, groups=1):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, kernel, stride, kernel // 2, groups=groups, bias=False)
        self.norm = nn.BatchNorm2d(cout)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class Add(nn.Module):
    """Elementwise sum as a module so profiling hooks can see it."""

    def forward(self, a, b):
        return a + b


class Mul(nn.Module):
    def forward(self, a, b):
        return a * b


class OneMinus(nn.Module):
    def forward(self, x):
        return 1.0 - x


class Resize(nn.Module):
    """Bilinear resize to an explicit target size (up or down)."""

    def forward(self, x, size):
        if tuple(x.shape[-2:]) == tuple(size):
            return x
        return nn.functional.interpolate(x, size=size, mode="bilinear", align_corners=False)


class Conv3x3Block(nn.Module):
    """Plain conv + norm + ReLU; the default stage block."""

    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.conv = nn.Conv2d(cin, cout, 3, stride, 1, bias=False)
        self.norm = nn.BatchNorm2d(cout)
        self.act = nn.ReLU(inplace=True)

    def forward(self, x):
        return self.act(self.norm(self.conv(x)))


class SepConv3x3Block(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.dw = ConvNormAct(cin, cin, 3, stride, groups=cin)
        self.pw = ConvNormAct(cin, cout, 1)

    def forward(self, x):
        return self.pw(self.dw(x))


class ResidualBlock(nn.Module):
    def __init__(self, cin, cout, stride=1):
        super().__init__()
        self.a = ConvNormAct(cin, cout, 3, stride)
        self.b = ConvNorm(cout, cout, 3)
        self.shortcut = ConvNorm(cin, cout, 1, stride) if (stride != 1 or cin != cout) else None
        self.add = Add()
        self.out_act = nn.ReLU(inplace=True)

    def forward(self, x):
        y = self.b(self.a(x))
        s = x if self.shortcut is None else self.shortcut(x)
        return self.out_act(self.add(y, s))


class BottleneckBlock(nn.Module):
    """1x1 reduce (C/4) -> 3x3 -> 1x1 expand, with shortcut."""

    def __init__(self, cin, cout, stride=1):
        super().__init__()
        mid = max(1, cout // 4)
        self.a = ConvNormAct(cin, mid, 1)
        self.b = ConvNormAct(mid, mid, 3, stride)
        self.c = ConvNorm(mid, cout, 1)
        self.shortcut = ConvNorm(cin, cout, 1, stride) if (stride != 1 or cin != cout) else None
        self.add = Add()
        self.out_act = nn.ReLU(inplace=True)

    def forward(self, x):
        y = self.c(self.b(self.a(x)))
        s = x if self.shortcut is None else self.shortcut(x)
        return self.out_act(self.add(y, s))


def _channel_shuffle(x, groups=2):
    n, c, h, w = x.shape
    return x.view(n, groups, c // groups, h, w).transpose(1, 2).reshape(n, c, h, w)


class ShuffleBlock(nn.Module):
    """ShuffleNet-v2 style unit (split/branch/concat/shuffle)."""

    def __init__(self, cin, cout, stride=1):
        super().__init__()
        if cout % 2 != 0:
            raise ValueError(f"shuffle block needs an even output width, got {cout}")
        half = cout // 2
        self.passthrough = stride == 1 and cin == cout
        if self.passthrough:
            self.b1 = ConvNormAct(half, half, 1)
            self.b2 = ConvNorm(half, half, 3, groups=half)
            self.b3 = ConvNormAct(half, half, 1)
        else:
            self.left1 = ConvNorm(cin, cin, 3, stride, groups=cin)
            self.left2 = ConvNormAct(cin, half, 1)
            self.right1 = ConvNormAct(cin, half, 1)
            self.right2 = ConvNorm(half, half, 3, stride, groups=half)
            self.right3 = ConvNormAct(half, half, 1)

    def forward(self, x):
        if self.passthrough:
            keep, branch = x.chunk(2, dim=1)
            branch = self.b3(self.b2(self.b1(branch)))
            out = torch.cat([keep, branch], dim=1)
        else:
            left = self.left2(self.left1(x))
            right = self.right3(self.right2(self.right1(x)))
            out = torch.cat([left, right], dim=1)
        return _channel_shuffle(out)


class InvertedResidualBlock(nn.Module):
    """MobileNet-v2 unit with expansion factor 6 and linear projection."""

    def __init__(self, cin, cout, stride=1):
        super().__init__()
        hidden = 6 * cin
        self.expand = ConvNormAct(cin, hidden, 1)
        self.dw = ConvNormAct(hidden, hidden, 3, stride, groups=hidden)
        self.project = ConvNorm(hidden, cout, 1)
        self.use_residual = stride == 1 and cin == cout
        self.add = Add() if self.use_residual else None

    def forward(self, x):
        y = self.project(self.dw(self.expand(x)))
        return self.add(y, x) if self.use_residual else y


class GhostBlock(nn.Module):
    """Half the channels from a real conv, half ghosted by a cheap depthwise."""

    def __init__(self, cin, cout, stride=1):
        super().__init__()
        init = (cout + 1) // 2
        self.cout = cout
        self.primary = ConvNormAct(cin, init, 3, stride)
        self.cheap = ConvNormAct(init, init, 3, groups=init)

    def forward(self, x):
        main = self.primary(x)
        return torch.cat([main, self.cheap(main)], dim=1)[:, : self.cout]


_BLOCKS = {
    BlockKind.CONV3X3: Conv3x3Block,
    BlockKind.SEPCONV3X3: SepConv3x3Block,
    BlockKind.RESIDUAL: ResidualBlock,
    BlockKind.BOTTLENECK: BottleneckBlock,
    BlockKind.SHUFFLE: ShuffleBlock,
    BlockKind.INVERTED_RESIDUAL: InvertedResidualBlock,
    BlockKind.GHOST: GhostBlock,
}


def build_block(kind: BlockKind, cin: int, cout: int, stride: int = 1) -> nn.Module:
    return _BLOCKS[kind](cin, cout, stride)
