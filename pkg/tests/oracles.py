"""Independent result checkers used by the test suite.

Each oracle re-derives a quantity through a deliberately different route
than the library: FLOPs are tallied from the ops a real forward pass
executes (not an analytic walk), and greedy selection is an exhaustive
argmax (not the library's incremental search).  Tests then compare the two
routes; neither is trusted on its own.
"""

from __future__ import annotations

import torch
from torch.utils._python_dispatch import TorchDispatchMode

from pathseg import archspec
from pathseg.archspec import BoundsError, NetworkSpec

# ---------------------------------------------------------------------------
# FLOPs from the executed graph
# ---------------------------------------------------------------------------

# layout/bookkeeping ops a forward pass may emit; no arithmetic counted
_ZERO_COST = {
    "aten.empty.memory_format",
    "aten.cat.default",
    "aten.view.default",
    "aten._unsafe_view.default",
    "aten.transpose.int",
    "aten.clone.default",
    "aten.split.Tensor",
    "aten.alias.default",
    "aten.unsqueeze.default",
    "aten.squeeze.dim",
    "aten.detach.default",
    "aten._to_copy.default",
    "aten.contiguous.default",
}

# elementwise ops costing one flop per output element
_ELEMENTWISE = {
    "aten.relu.default",
    "aten.relu_.default",
    "aten.sigmoid.default",
    "aten.add.Tensor",
    "aten.mul.Tensor",
    "aten.rsub.Scalar",
}


class _OpCounter(TorchDispatchMode):
    """Tallies FLOPs of every dispatched aten op.

    Conventions mirror the documented counting rules: convolutions cost
    2*k*k*(C_in/groups)*C_out per output element, bilinear resizing 8 per
    output element, normalization and elementwise ops 1 per element.  An
    op outside the known compute/zero-cost sets fails loudly so silent
    undercounting is impossible.
    """

    def __init__(self):
        super().__init__()
        self.flops = 0

    def __torch_dispatch__(self, func, types, args=(), kwargs=None):
        out = func(*args, **(kwargs or {}))
        name = str(func)
        if name == "aten.convolution.default":
            weight = args[1]
            cout, cin_per_group, kh, kw = weight.shape
            batch, _, hout, wout = out.shape
            self.flops += 2 * kh * kw * cin_per_group * cout * hout * wout * batch
        elif name == "aten.native_batch_norm.default":
            self.flops += out[0].numel()
        elif name == "aten.upsample_bilinear2d.default":
            self.flops += 8 * out.numel()
        elif name in _ELEMENTWISE:
            tensor = out[0] if isinstance(out, (tuple, list)) else out
            self.flops += tensor.numel()
        elif name not in _ZERO_COST:
            raise AssertionError(f"flops oracle met an unmapped op: {name}")
        return out


def executed_flops(net, height: int, width: int) -> int:
    """FLOPs of one batch-1 forward at ``height`` x ``width``."""
    counter = _OpCounter()
    image = torch.zeros(1, 3, height, width)
    with torch.no_grad(), counter:
        net(image)
    return counter.flops


def module_params(net) -> int:
    return sum(p.numel() for p in net.parameters())


def conv_flops_by_pixel(cin: int, cout: int, h: int, w: int, kernel: int,
                        stride: int = 1) -> int:
    """Same-padded conv FLOPs accumulated one output pixel at a time."""
    hout = (h + 2 * (kernel // 2) - kernel) // stride + 1
    wout = (w + 2 * (kernel // 2) - kernel) // stride + 1
    total = 0
    for _ in range(hout):
        for _ in range(wout):
            # per pixel and output channel: k*k*cin multiplies + as many adds
            total += cout * 2 * kernel * kernel * cin
    return total


# ---------------------------------------------------------------------------
# Greedy selection by exhaustive argmax
# ---------------------------------------------------------------------------

def brute_force_select(spec: NetworkSpec, perf_fn, lat_fn, cap: int = 64):
    """(op, k) one greedy step should pick; None when nothing qualifies.

    Re-derivation from scratch: target latency is the max latency over all
    one-unit expansions; each op's stepsize is the |lat - target| argmin
    scanned k = 1, 2, ... until the first overshoot (ties to smaller k);
    the winner maximizes performance gain per latency gain, skipping
    candidates that do not increase latency, ties to lowest op index.
    """
    unit_lats = {}
    for op in archspec.catalog():
        try:
            unit_lats[op.index] = lat_fn(archspec.apply(spec, op, 1))
        except BoundsError:
            continue
    if not unit_lats:
        return None
    l_target = max(unit_lats.values())

    base_perf, base_lat = perf_fn(spec), lat_fn(spec)
    best = None
    for op in archspec.catalog():
        if op.index not in unit_lats:
            continue
        k = _closest_k(spec, op, l_target, lat_fn, cap)
        candidate = archspec.apply(spec, op, k)
        lat = lat_fn(candidate)
        if lat <= base_lat:
            continue
        ratio = (perf_fn(candidate) - base_perf) / (lat - base_lat)
        if best is None or ratio > best[0]:
            best = (ratio, op, k)
    if best is None:
        return None
    return best[1], best[2]


def _closest_k(spec, op, l_target, lat_fn, cap):
    best_k, best_gap = None, None
    for k in range(1, cap + 1):
        try:
            lat = lat_fn(archspec.apply(spec, op, k))
        except BoundsError:
            break
        gap = abs(lat - l_target)
        if best_gap is None or gap < best_gap:
            best_k, best_gap = k, gap
        if lat > l_target:
            break
    return best_k


# ---------------------------------------------------------------------------
# Random valid specs
# ---------------------------------------------------------------------------

def random_spec(rng, max_depth: int = 3, max_width_mult: int = 3) -> NetworkSpec:
    """Small random valid spec; multi-path specs may carry tied ratios."""
    depths = tuple(int(rng.integers(1, max_depth + 1)) for _ in range(5))
    widths = tuple(int(rng.integers(1, max_width_mult + 1)) * div
                   for div in archspec.WIDTH_DIVISORS)
    paths = int(rng.integers(1, 4))
    eighths = sorted((int(rng.integers(1, 9)) for _ in range(paths)), reverse=True)
    ratios = tuple(eighths) + (0,) * (3 - paths)
    return archspec.check_valid(NetworkSpec(depths, widths, ratios))
