"""Analytic cost model: FLOPs / parameter counting and latency estimation.

The counter walks exactly the layers the network builder materializes, but
symbolically -- no tensors are allocated, so it is cheap enough to sit inside
a search loop.

FLOPs conventions (1 multiply-accumulate = 2 FLOPs, biases excluded):

    convolution      2 * k*k * C_in/groups * C_out * H_out * W_out
    normalization    C * H * W
    activation       C * H * W          (ReLU and sigmoid alike)
    bilinear resize  8 * C * H_out * W_out
    elementwise      C * H * W          (add / mul / 1-x, broadcast included)
    concat / slice   free

Parameter conventions: conv k*k*C_in*C_out/groups (no bias anywhere),
normalization 2*C (scale + shift).
"""

from __future__ import annotations

import json
import math
import statistics
import time
from dataclasses import dataclass, field

from pathseg.archspec import NetworkSpec, check_valid
from pathseg.kinds import BlockKind, InteractionKind, coerce_block_kind, coerce_interaction_kind

MIN_COUNT_RES = 32  # count_flops refuses inputs smaller than this per side


@dataclass(frozen=True)
class LayerCost:
    """Cost of one primitive layer, plus enough identity to profile it."""

    layer_id: str
    signature: str
    flops: int
    params: int
    out_shape: tuple  # (C, H, W)


@dataclass(frozen=True)
class CostReport:
    spec: NetworkSpec
    block_kind: BlockKind
    interaction_kind: InteractionKind
    num_classes: int
    input_res: tuple
    layers: tuple

    @property
    def total_flops(self) -> int:
        return sum(l.flops for l in self.layers)

    @property
    def total_params(self) -> int:
        return sum(l.params for l in self.layers)


class _Walk:
    """Accumulates LayerCost entries while tracking spatial shapes."""

    def __init__(self):
        self.layers = []

    def conv(self, layer_id, cin, cout, hw, kernel, stride=1, groups=1):
        hin, win = hw
        hout = (hin + 2 * (kernel // 2) - kernel) // stride + 1
        wout = (win + 2 * (kernel // 2) - kernel) // stride + 1
        if hout < 1 or wout < 1:
            raise ValueError(f"{layer_id}: zero spatial extent at input {hin}x{win}")
        sig = f"conv{kernel}x{kernel}/cin={cin}/cout={cout}/hw={hin}x{win}/stride={stride}"
        if groups != 1:
            sig += f"/groups={groups}"
        flops = 2 * kernel * kernel * (cin // groups) * cout * hout * wout
        params = kernel * kernel * (cin // groups) * cout
        self.layers.append(LayerCost(layer_id, sig, flops, params, (cout, hout, wout)))
        return hout, wout

    def norm(self, layer_id, c, hw):
        h, w = hw
        self.layers.append(
            LayerCost(layer_id, f"norm/c={c}/hw={h}x{w}", c * h * w, 2 * c, (c, h, w))
        )

    def act(self, layer_id, c, hw):
        h, w = hw
        self.layers.append(LayerCost(layer_id, f"act/c={c}/hw={h}x{w}", c * h * w, 0, (c, h, w)))

    def resize(self, layer_id, c, hw_out):
        h, w = hw_out
        self.layers.append(
            LayerCost(layer_id, f"resize/c={c}/hw={h}x{w}", 8 * c * h * w, 0, (c, h, w))
        )

    def eltwise(self, layer_id, c, hw):
        h, w = hw
        self.layers.append(
            LayerCost(layer_id, f"eltwise/c={c}/hw={h}x{w}", c * h * w, 0, (c, h, w))
        )

    def conv_bn_act(self, prefix, cin, cout, hw, kernel, stride=1, groups=1, act=True):
        out = self.conv(f"{prefix}/conv", cin, cout, hw, kernel, stride, groups)
        self.norm(f"{prefix}/norm", cout, out)
        if act:
            self.act(f"{prefix}/act", cout, out)
        return out


# ---------------------------------------------------------------------------
# Block walks -- one function per block kind, mirroring the torch builders
# ---------------------------------------------------------------------------

def _walk_conv3x3(w, p, cin, cout, hw, stride):
    return w.conv_bn_act(p, cin, cout, hw, 3, stride)


def _walk_sepconv(w, p, cin, cout, hw, stride):
    out = w.conv_bn_act(f"{p}/dw", cin, cin, hw, 3, stride, groups=cin)
    return w.conv_bn_act(f"{p}/pw", cin, cout, out, 1)


def _walk_residual(w, p, cin, cout, hw, stride):
    out = w.conv_bn_act(f"{p}/a", cin, cout, hw, 3, stride)
    w.conv(f"{p}/b/conv", cout, cout, out, 3)
    w.norm(f"{p}/b/norm", cout, out)
    if stride != 1 or cin != cout:
        w.conv(f"{p}/shortcut/conv", cin, cout, hw, 1, stride)
        w.norm(f"{p}/shortcut/norm", cout, out)
    w.eltwise(f"{p}/add", cout, out)
    w.act(f"{p}/out_act", cout, out)
    return out


def _walk_bottleneck(w, p, cin, cout, hw, stride):
    mid = max(1, cout // 4)
    out1 = w.conv_bn_act(f"{p}/a", cin, mid, hw, 1)
    out2 = w.conv_bn_act(f"{p}/b", mid, mid, out1, 3, stride)
    w.conv(f"{p}/c/conv", mid, cout, out2, 1)
    w.norm(f"{p}/c/norm", cout, out2)
    if stride != 1 or cin != cout:
        w.conv(f"{p}/shortcut/conv", cin, cout, hw, 1, stride)
        w.norm(f"{p}/shortcut/norm", cout, out2)
    w.eltwise(f"{p}/add", cout, out2)
    w.act(f"{p}/out_act", cout, out2)
    return out2


def _walk_shuffle(w, p, cin, cout, hw, stride):
    if cout % 2 != 0:
        raise ValueError(f"{p}: shuffle block needs an even output width, got {cout}")
    half = cout // 2
    if stride == 1 and cin == cout:
        # split half the channels through the branch, passthrough the rest
        out = w.conv_bn_act(f"{p}/b1", half, half, hw, 1)
        w.conv(f"{p}/b2/conv", half, half, out, 3, 1, groups=half)
        w.norm(f"{p}/b2/norm", half, out)
        out = w.conv_bn_act(f"{p}/b3", half, half, out, 1)
        return out
    # downsample / channel-change unit: both halves are computed
    out = w.conv(f"{p}/left1/conv", cin, cin, hw, 3, stride, groups=cin)
    w.norm(f"{p}/left1/norm", cin, out)
    w.conv_bn_act(f"{p}/left2", cin, half, out, 1)
    r = w.conv_bn_act(f"{p}/right1", cin, half, hw, 1)
    out = w.conv(f"{p}/right2/conv", half, half, r, 3, stride, groups=half)
    w.norm(f"{p}/right2/norm", half, out)
    out = w.conv_bn_act(f"{p}/right3", half, half, out, 1)
    return out


def _walk_inverted_residual(w, p, cin, cout, hw, stride):
    hidden = 6 * cin
    out = w.conv_bn_act(f"{p}/expand", cin, hidden, hw, 1)
    out = w.conv_bn_act(f"{p}/dw", hidden, hidden, out, 3, stride, groups=hidden)
    w.conv(f"{p}/project/conv", hidden, cout, out, 1)
    w.norm(f"{p}/project/norm", cout, out)
    if stride == 1 and cin == cout:
        w.eltwise(f"{p}/add", cout, out)
    return out


def _walk_ghost(w, p, cin, cout, hw, stride):
    init = (cout + 1) // 2
    out = w.conv_bn_act(f"{p}/primary", cin, init, hw, 3, stride)
    w.conv_bn_act(f"{p}/cheap", init, init, out, 3, 1, groups=init)
    # concat to 2*init channels then slice back to cout: both free
    return out


_BLOCK_WALKS = {
    BlockKind.CONV3X3: _walk_conv3x3,
    BlockKind.SEPCONV3X3: _walk_sepconv,
    BlockKind.RESIDUAL: _walk_residual,
    BlockKind.BOTTLENECK: _walk_bottleneck,
    BlockKind.SHUFFLE: _walk_shuffle,
    BlockKind.INVERTED_RESIDUAL: _walk_inverted_residual,
    BlockKind.GHOST: _walk_ghost,
}


def count_block_flops(kind, cin, cout, hw, stride=1):
    """(flops, params) of a single block on an ``hw`` input."""
    walk = _Walk()
    _BLOCK_WALKS[coerce_block_kind(kind)](walk, "block", cin, cout, hw, stride)
    return sum(l.flops for l in walk.layers), sum(l.params for l in walk.layers)


# ---------------------------------------------------------------------------
# Interaction walks
# ---------------------------------------------------------------------------

def _walk_interaction(w, p, kind, c, hw_h, hw_l):
    # resizes are skipped when the pair shares a size (the torch Resize
    # module is a no-op there, e.g. for specs with tied active ratios)
    def resize(layer_id, c_, hw_out):
        if hw_h != hw_l:
            w.resize(layer_id, c_, hw_out)

    if kind is InteractionKind.BILATERAL_B:
        resize(f"{p}/up", c, hw_h)
        w.eltwise(f"{p}/add_h", c, hw_h)
        resize(f"{p}/down", c, hw_l)
        w.eltwise(f"{p}/add_l", c, hw_l)
    elif kind is InteractionKind.BILATERAL_A:
        w.conv(f"{p}/f_low/conv", c, c, hw_l, 1)
        resize(f"{p}/up", c, hw_h)
        w.eltwise(f"{p}/add_h", c, hw_h)
        w.conv(f"{p}/f_high/conv", c, c, hw_h, 1)
        resize(f"{p}/down", c, hw_l)
        w.eltwise(f"{p}/add_l", c, hw_l)
    elif kind is InteractionKind.DIRECT_A:
        w.conv(f"{p}/f_low/conv", c, c, hw_l, 3)
        resize(f"{p}/up", c, hw_h)
        w.eltwise(f"{p}/add_h", c, hw_h)
    elif kind is InteractionKind.DIRECT_B:
        w.conv(f"{p}/f_low/conv", c, c, hw_l, 3)
        resize(f"{p}/up", c, hw_h)
        w.conv(f"{p}/fuse/conv", 2 * c, c, hw_h, 1)
    elif kind is InteractionKind.ATTENTION_A:
        w.conv(f"{p}/f_low/conv", c, c, hw_l, 3)
        w.conv(f"{p}/att/conv", c, 1, hw_l, 1)
        w.act(f"{p}/att/sigmoid", 1, hw_l)
        w.eltwise(f"{p}/gate_low", c, hw_l)
        resize(f"{p}/up_gated", c, hw_h)
        w.eltwise(f"{p}/att_inv", 1, hw_l)
        resize(f"{p}/up_att", 1, hw_h)
        w.conv(f"{p}/f_high/conv", c, c, hw_h, 3)
        w.eltwise(f"{p}/gate_high", c, hw_h)
        w.eltwise(f"{p}/add_h", c, hw_h)
    elif kind is InteractionKind.ATTENTION_B:
        for side, hw_src in (("low", hw_l), ("high", hw_h)):
            w.conv(f"{p}/f_{side}/conv", c, c, hw_src, 3)
            w.conv(f"{p}/att_{side}/conv", c, 1, hw_src, 1)
            w.act(f"{p}/att_{side}/sigmoid", 1, hw_src)
            w.eltwise(f"{p}/gate_{side}", c, hw_src)
            w.eltwise(f"{p}/att_{side}_inv", 1, hw_src)
        resize(f"{p}/up_gated", c, hw_h)
        resize(f"{p}/up_att", 1, hw_h)
        w.eltwise(f"{p}/mix_high", c, hw_h)
        w.eltwise(f"{p}/add_h", c, hw_h)
        resize(f"{p}/down_gated", c, hw_l)
        resize(f"{p}/down_att", 1, hw_l)
        w.eltwise(f"{p}/mix_low", c, hw_l)
        w.eltwise(f"{p}/add_l", c, hw_l)
    else:
        raise ValueError(f"no interaction walk for {kind}")


# ---------------------------------------------------------------------------
# Whole-network walk
# ---------------------------------------------------------------------------

def count_flops(
    spec: NetworkSpec,
    block_kind=BlockKind.CONV3X3,
    interaction_kind=InteractionKind.BILATERAL_B,
    num_classes: int = 19,
    input_res=(1024, 2048),
) -> CostReport:
    """Count every layer of the network the builder would make for ``spec``.

    Interactions are walked between adjacent path pairs at the end of stages
    3-5; a single-path spec simply has no pairs.  The input is resized per
    path to the nearest multiple of 16 of ratio*(H, W).
    """
    check_valid(spec)
    block_kind = coerce_block_kind(block_kind)
    interaction_kind = coerce_interaction_kind(interaction_kind)
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    height, width = int(input_res[0]), int(input_res[1])
    if height < MIN_COUNT_RES or width < MIN_COUNT_RES:
        raise ValueError(f"input {height}x{width} too small (min {MIN_COUNT_RES} per side)")

    walk = _Walk()
    ratios = spec.active_ratios
    block = _BLOCK_WALKS[block_kind]

    # per-path input sizes, largest ratio first
    sizes = [(r.scaled_size(height), r.scaled_size(width)) for r in ratios]
    stage_hw = {}
    for i, hw in enumerate(sizes):
        if hw != (height, width):
            walk.resize(f"path{i}/input/resize", 3, hw)

    def run_stage(stage, prev_widths_hw):
        """Walk stage ``stage`` for every path; returns new (cin, hw) list."""
        out = []
        cout = spec.widths[stage]
        stride = 2 if stage < 4 else 1
        for i, (cin, hw) in enumerate(prev_widths_hw):
            cur = hw
            for b in range(spec.depths[stage]):
                prefix = f"path{i}/stage{stage + 1}/block{b}"
                cur = block(walk, prefix, cin if b == 0 else cout, cout, cur, stride if b == 0 else 1)
            out.append((cout, cur))
        return out

    state = [(3, hw) for hw in sizes]
    for stage in range(5):
        state = run_stage(stage, state)
        if stage >= 2 and interaction_kind is not InteractionKind.NONE:
            c = spec.widths[stage]
            for pair in range(len(ratios) - 1):
                hw_h, hw_l = state[pair][1], state[pair + 1][1]
                _walk_interaction(
                    walk, f"interact/stage{stage + 1}/pair{pair}", interaction_kind, c, hw_h, hw_l
                )

    # aggregation: everything is brought to the largest stage-5 resolution
    c5 = spec.widths[4]
    agg_hw = state[0][1]
    for i in range(1, len(ratios)):
        if state[i][1] != agg_hw:
            walk.resize(f"aggregate/path{i}/resize", c5, agg_hw)
    walk.conv_bn_act("head/fuse", len(ratios) * c5, c5, agg_hw, 3)
    walk.conv("head/classify/conv", c5, num_classes, agg_hw, 1)
    walk.resize("output/resize", num_classes, (height, width))

    return CostReport(
        spec, block_kind, interaction_kind, num_classes, (height, width), tuple(walk.layers)
    )


def export_cost_report(report: CostReport, path) -> None:
    """Write the per-layer table as CSV (layer_id, signature, flops, params, shape)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("layer_id,signature,flops,params,out_c,out_h,out_w\n")
        for l in report.layers:
            c, h, w = l.out_shape
            fh.write(f"{l.layer_id},{l.signature},{l.flops},{l.params},{c},{h},{w}\n")
        fh.write(f"total,,{report.total_flops},{report.total_params},,,\n")


# ---------------------------------------------------------------------------
# Wall-clock measurement
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LatencyMeasurement:
    median_ms: float
    samples_ms: tuple
    warmup_runs: int
    measure_runs: int
    device_label: str = "cpu"


def measure_latency(runner, warmup_runs: int = 10, measure_runs: int = 50,
                    device_label: str = "cpu") -> LatencyMeasurement:
    """Median wall-clock time of ``runner()`` over ``measure_runs`` calls.

    Uses the monotonic high-resolution counter; warmup calls are not timed.
    """
    if warmup_runs < 0:
        raise ValueError(f"warmup_runs must be >= 0, got {warmup_runs}")
    if measure_runs < 1:
        raise ValueError(f"measure_runs must be >= 1, got {measure_runs}")
    for i in range(warmup_runs):
        try:
            runner()
        except Exception as exc:
            raise RuntimeError(f"latency runner failed on warmup run {i}: {exc}") from exc
    samples = []
    for i in range(measure_runs):
        start = time.perf_counter_ns()
        try:
            runner()
        except Exception as exc:
            raise RuntimeError(f"latency runner failed on measured run {i}: {exc}") from exc
        samples.append((time.perf_counter_ns() - start) / 1e6)
    return LatencyMeasurement(
        statistics.median(samples), tuple(samples), warmup_runs, measure_runs, device_label
    )


def flops_efficiency(flops: float, latency_ms: float) -> float:
    """MFLOPs per millisecond actually achieved (flops / latency)."""
    if latency_ms <= 0:
        raise ValueError(f"latency must be positive, got {latency_ms}")
    if flops < 0:
        raise ValueError(f"flops must be >= 0, got {flops}")
    return flops / (latency_ms * 1e6)


# ---------------------------------------------------------------------------
# Profile-driven latency estimation (lets the search run without the device)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DeviceProfile:
    """Per-signature measured milliseconds plus a throughput fallback."""

    entries: dict = field(default_factory=dict)
    default_mflops_per_ms: float | None = None
    label: str = "profile"


def estimate_latency(report: CostReport, profile: DeviceProfile) -> float:
    """Sum profiled per-layer milliseconds over a cost report.

    Layers missing from the profile fall back to flops/default_mflops_per_ms;
    with no default either, the offending signature is reported.
    """
    total = 0.0
    for layer in report.layers:
        ms = profile.entries.get(layer.signature)
        if ms is None:
            if profile.default_mflops_per_ms is None:
                raise KeyError(
                    f"profile {profile.label!r} has no entry for {layer.signature!r}"
                    " and no default_mflops_per_ms"
                )
            ms = layer.flops / (profile.default_mflops_per_ms * 1e6)
        if ms < 0 or not math.isfinite(ms):
            raise ValueError(f"profile entry for {layer.signature!r} must be finite >= 0")
        total += ms
    return total


def load_device_profile(path) -> DeviceProfile:
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: device profile must be a JSON object")
    entries = data.get("layers", {})
    if not isinstance(entries, dict):
        raise ValueError(f"{path}: 'layers' must map signature -> ms")
    default = data.get("default_mflops_per_ms")
    return DeviceProfile(
        {str(k): float(v) for k, v in entries.items()},
        None if default is None else float(default),
        str(data.get("label", path)),
    )


def save_device_profile(profile: DeviceProfile, path) -> None:
    doc = {
        "label": profile.label,
        "default_mflops_per_ms": profile.default_mflops_per_ms,
        "layers": dict(sorted(profile.entries.items())),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2)
        fh.write("\n")
