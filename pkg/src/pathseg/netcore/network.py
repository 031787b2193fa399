"""Multi-path network assembly and forward semantics.

A network has one subnetwork ("path") per non-zero scaling ratio.  Paths
share the stage layout but own independent weights.  Stage strides halve the
spatial size four times (stages 1-4), stage 5 keeps it, so a path fed with a
rH x rW input ends at rH/16 x rW/16.  Adjacent paths exchange information at
the end of stages 3-5; outputs are aggregated at the largest stage-5 size,
pushed through a small head and bilinearly upsampled back to the input size.
"""

from __future__ import annotations

import math

import torch
from torch import nn

from pathseg.archspec import NetworkSpec, check_valid
from pathseg.kinds import (
    BlockKind,
    InteractionKind,
    coerce_block_kind,
    coerce_interaction_kind,
)
from pathseg.netcore.blocks import Resize, build_block
from pathseg.netcore.interactions import build_interaction

MIN_INPUT_SIDE = 64


class Stage(nn.Module):
    def __init__(self, kind, cin, cout, depth, stride):
        super().__init__()
        self.blocks = nn.ModuleList(
            [build_block(kind, cin if b == 0 else cout, cout, stride if b == 0 else 1)
             for b in range(depth)]
        )

    def forward(self, x):
        for block in self.blocks:
            x = block(x)
        return x


class Path(nn.Module):
    def __init__(self, kind, widths, depths):
        super().__init__()
        stages = []
        cin = 3
        for j in range(5):
            stages.append(Stage(kind, cin, widths[j], depths[j], 2 if j < 4 else 1))
            cin = widths[j]
        self.stages = nn.ModuleList(stages)


class AggregateHead(nn.Module):
    """Upsample-all + concat + 3x3 conv (to ``channels``) + 1x1 classifier."""

    def __init__(self, channels, num_paths, num_classes):
        super().__init__()
        if num_paths < 1:
            raise ValueError("aggregation needs at least one path feature")
        if num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {num_classes}")
        self.resizes = nn.ModuleList([Resize() for _ in range(num_paths)])
        self.fuse_conv = nn.Conv2d(num_paths * channels, channels, 3, padding=1, bias=False)
        self.fuse_norm = nn.BatchNorm2d(channels)
        self.fuse_act = nn.ReLU(inplace=True)
        self.classify = nn.Conv2d(channels, num_classes, 1, bias=False)

    def forward(self, features):
        if not features:
            raise ValueError("aggregation needs at least one path feature")
        target = features[0].shape[-2:]
        gathered = [rs(f, target) for rs, f in zip(self.resizes, features)]
        fused = self.fuse_act(self.fuse_norm(self.fuse_conv(torch.cat(gathered, dim=-3))))
        return self.classify(fused)


class MultiPathNet(nn.Module):
    def __init__(self, spec: NetworkSpec, block_kind, interaction_kind, num_classes, seed=0):
        super().__init__()
        check_valid(spec)
        block_kind = coerce_block_kind(block_kind)
        interaction_kind = coerce_interaction_kind(interaction_kind)
        if num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {num_classes}")
        ratios = spec.active_ratios
        if interaction_kind is not InteractionKind.NONE and len(ratios) < 2:
            raise ValueError(
                f"interaction {interaction_kind.value!r} needs >= 2 paths; "
                f"spec has {len(ratios)} (use interaction 'none')"
            )
        self.spec = spec
        self.block_kind = block_kind
        self.interaction_kind = interaction_kind
        self.num_classes = num_classes
        self.seed = seed
        self.ratios = ratios

        self.input_resizes = nn.ModuleList([Resize() for _ in ratios])
        self.paths = nn.ModuleList(
            [Path(block_kind, spec.widths, spec.depths) for _ in ratios]
        )
        if interaction_kind is not InteractionKind.NONE and len(ratios) >= 2:
            self.interactions = nn.ModuleList(
                [
                    nn.ModuleList(
                        [build_interaction(interaction_kind, spec.widths[stage])
                         for _ in range(len(ratios) - 1)]
                    )
                    for stage in (2, 3, 4)
                ]
            )
        else:
            self.interactions = None
        self.head = AggregateHead(spec.widths[4], len(ratios), num_classes)
        self.output_resize = Resize()
        init_parameters(self, seed)
        self.eval()

    def forward(self, image):
        squeeze = image.dim() == 3
        x = image.unsqueeze(0) if squeeze else image
        if x.dim() != 4:
            raise ValueError(f"input must be (3,H,W) or (N,3,H,W), got {tuple(image.shape)}")
        if x.shape[1] != 3:
            raise ValueError(f"input must have 3 channels, got {x.shape[1]}")
        height, width = int(x.shape[-2]), int(x.shape[-1])
        if height < MIN_INPUT_SIDE or width < MIN_INPUT_SIDE:
            raise ValueError(
                f"input {height}x{width} too small (min {MIN_INPUT_SIDE} per side)"
            )

        feats = []
        for resize, ratio in zip(self.input_resizes, self.ratios):
            size = (ratio.scaled_size(height), ratio.scaled_size(width))
            feats.append(resize(x, size))

        for stage in range(5):
            feats = [path.stages[stage](f) for path, f in zip(self.paths, feats)]
            if stage >= 2 and self.interactions is not None:
                for pair, module in enumerate(self.interactions[stage - 2]):
                    feats[pair], feats[pair + 1] = module(feats[pair], feats[pair + 1])

        scores = self.head(feats)
        out = self.output_resize(scores, (height, width))
        return out.squeeze(0) if squeeze else out


def init_parameters(module: nn.Module, seed: int) -> None:
    """Deterministic re-initialization: conv ~ N(0, sqrt(2/fan_in)), norm to 1/0."""
    gen = torch.Generator().manual_seed(int(seed) & 0xFFFFFFFF)
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels // m.groups * m.kernel_size[0] * m.kernel_size[1]
                m.weight.normal_(0.0, math.sqrt(2.0 / fan_in), generator=gen)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.BatchNorm2d):
                m.weight.fill_(1.0)
                m.bias.zero_()
                m.running_mean.zero_()
                m.running_var.fill_(1.0)
                m.num_batches_tracked.zero_()


def build_network(spec, block_kind=BlockKind.CONV3X3, interaction_kind=InteractionKind.BILATERAL_B,
                  num_classes=19, seed=0) -> MultiPathNet:
    """Construct a ready-to-run network (eval mode, deterministic weights)."""
    return MultiPathNet(spec, block_kind, interaction_kind, num_classes, seed)


def forward(net: MultiPathNet, image):
    """Run ``net`` on a (3,H,W) or (N,3,H,W) image; output matches H x W."""
    return net(image)


def aggregate_and_head(path_features, num_classes, module: AggregateHead | None = None,
                       seed: int = 0):
    """Standalone aggregation + head over a list of (N,C,H,W)/(C,H,W) maps."""
    if not path_features:
        raise ValueError("aggregation needs at least one path feature")
    squeeze = path_features[0].dim() == 3
    feats = [f.unsqueeze(0) if f.dim() == 3 else f for f in path_features]
    channels = feats[0].shape[1]
    for f in feats:
        if f.shape[1] != channels:
            raise ValueError("all path features must share a channel count")
    if module is None:
        module = AggregateHead(channels, len(feats), num_classes)
        init_parameters(module, seed)
    out = module(feats)
    return out.squeeze(0) if squeeze else out


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())
