"""Command-line front end tying the library together.

Subcommands: ``spec`` (inspect), ``flops`` (cost report), ``bench`` (time a
network), ``train`` / ``eval`` (fit and score on a dataset), ``expand``
(greedy latency-targeted growth), ``export-trajectory`` (plot data),
``presets`` (stock specs), ``block-study`` (per-block-kind FLOPs vs. measured
latency).

Conventions: errors are a single ``pathseg: error: ...`` line on stderr with
a nonzero exit (2 for bad input, 1 for runtime failures); tabular output is
CSV with a header row; ``LPS_DEVICE`` picks the torch device for timed
commands and ``LPS_SEED`` overrides every seed.  ``bench`` and
``block-study`` serialize timing through an advisory lock file so concurrent
runs never contend for the same device.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import math
import os
import re
import sys
import tempfile

from pathseg import archspec, reference
from pathseg.archspec import SpecError
from pathseg.costmodel import (
    count_block_flops,
    count_flops,
    export_cost_report,
    flops_efficiency,
    measure_latency,
)
from pathseg.expander import (
    CallableEvaluator,
    ExpansionError,
    LookupEvaluator,
    expand,
    surrogate_latency,
    surrogate_oracle,
)
from pathseg.kinds import BlockKind, coerce_block_kind

LOCK_TIMEOUT_S = 600.0


# ---------------------------------------------------------------------------
# Shared plumbing
# ---------------------------------------------------------------------------

def _print_error(message) -> None:
    line = " ".join(str(message).split())
    print(f"pathseg: error: {line}", file=sys.stderr)


class _Parser(argparse.ArgumentParser):
    """argparse with the single-line error convention."""

    def error(self, message):
        _print_error(f"usage: {message}")
        raise SystemExit(2)


def _device() -> str:
    return os.environ.get("LPS_DEVICE", "cpu")


def _env_seed(default: int) -> int:
    raw = os.environ.get("LPS_SEED")
    if raw is None:
        return default
    try:
        return int(raw)
    except ValueError:
        raise ValueError(f"LPS_SEED must be an integer, got {raw!r}") from None


def _device_lock(device_label: str):
    """Advisory cross-process lock for timing runs on one device."""
    from filelock import FileLock

    safe = re.sub(r"[^A-Za-z0-9._-]", "_", device_label)
    path = os.path.join(tempfile.gettempdir(), f"pathseg-device-{safe}.lock")
    return FileLock(path, timeout=LOCK_TIMEOUT_S)


def _res_type(text: str):
    m = re.fullmatch(r"(\d+)x(\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected HxW (e.g. 512x1024), got {text!r}")
    return int(m.group(1)), int(m.group(2))


def _shape_type(text: str):
    m = re.fullmatch(r"(\d+)x(\d+)x(\d+)", text)
    if not m:
        raise argparse.ArgumentTypeError(f"expected CxHxW (e.g. 32x128x128), got {text!r}")
    return int(m.group(1)), int(m.group(2)), int(m.group(3))


def _add_spec_source(parser) -> None:
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=sorted(archspec.presets()),
                       help="stock spec name")
    group.add_argument("--file", help="path to a spec JSON file")


def _load_spec(args):
    if args.file is not None:
        return archspec.check_valid(archspec.load_spec(args.file))
    return archspec.presets()[args.preset]


def _active_ratios(spec) -> list:
    return [r.display for r in spec.ratios if r.eighths > 0]


def _build_net(spec, num_classes: int, seed: int):
    """Build a runnable net; interactions appear once a second path exists."""
    from pathseg.kinds import InteractionKind
    from pathseg.netcore.network import build_network

    kind = (InteractionKind.BILATERAL_B if len(spec.active_ratios) >= 2
            else InteractionKind.NONE)
    return build_network(spec, interaction_kind=kind, num_classes=num_classes,
                         seed=seed)


# ---------------------------------------------------------------------------
# spec / flops / presets
# ---------------------------------------------------------------------------

def cmd_spec(args) -> int:
    spec = _load_spec(args)
    if args.format == "raw":
        print(archspec.serialize(spec))
        return 0
    active = _active_ratios(spec)
    print("depths:", " ".join(str(d) for d in spec.depths))
    print("widths:", " ".join(str(w) for w in spec.widths))
    print("ratios:", ", ".join(active))
    print("paths:", len(active))
    print("valid: yes")
    return 0


def cmd_flops(args) -> int:
    from pathseg.netcore.network import MIN_INPUT_SIDE

    spec = _load_spec(args)
    height, width = args.res
    if height < MIN_INPUT_SIDE or width < MIN_INPUT_SIDE:
        raise ValueError(
            f"resolution {height}x{width} is below the runnable minimum "
            f"({MIN_INPUT_SIDE} per side)"
        )
    report = count_flops(spec, input_res=args.res, num_classes=args.classes)
    print(f"flops: {report.total_flops}")
    print(f"gflops: {report.total_flops / 1e9:.3f}")
    print(f"params: {report.total_params}")
    print(f"layers: {len(report.layers)}")
    if args.per_layer:
        export_cost_report(report, args.per_layer)
        print(f"per-layer: {args.per_layer}")
    return 0


def cmd_presets(args) -> int:
    entries = []
    for name, spec in archspec.presets().items():
        rec = next((r for r in reference.RECORDED_TRAJECTORY if r.spec == spec), None)
        entries.append((rec.step if rec else math.inf, name, spec, rec))
    entries.sort(key=lambda e: (e[0], e[1]))
    writer = csv.writer(sys.stdout)
    writer.writerow(["name", "step", "depths", "widths", "ratios", "paths",
                     "lat_ms", "miou_pct"])
    for _, name, spec, rec in entries:
        writer.writerow([
            name,
            rec.step if rec else "",
            " ".join(str(d) for d in spec.depths),
            " ".join(str(w) for w in spec.widths),
            ", ".join(_active_ratios(spec)),
            len(_active_ratios(spec)),
            f"{rec.lat_ms:.6g}" if rec else "",
            f"{rec.miou_pct:.6g}" if rec else "",
        ])
    return 0


# ---------------------------------------------------------------------------
# bench / block-study
# ---------------------------------------------------------------------------

def cmd_bench(args) -> int:
    import torch

    spec = _load_spec(args)
    device = _device()
    seed = _env_seed(args.seed)
    height, width = args.res
    report = count_flops(spec, input_res=args.res, num_classes=args.classes)
    net = _build_net(spec, args.classes, seed).to(device)
    torch.manual_seed(seed)
    image = torch.randn(1, 3, height, width, device=device)

    def runner():
        with torch.no_grad():
            net(image)

    with _device_lock(device):
        measured = measure_latency(runner, warmup_runs=args.warmup,
                                   measure_runs=args.runs, device_label=device)
    writer = csv.writer(sys.stdout)
    writer.writerow(["device", "res", "runs", "median_ms", "flops", "mflops_per_ms"])
    writer.writerow([
        device,
        f"{height}x{width}",
        args.runs,
        f"{measured.median_ms:.4f}",
        report.total_flops,
        f"{flops_efficiency(report.total_flops, measured.median_ms):.2f}",
    ])
    return 0


def cmd_block_study(args) -> int:
    import torch

    from pathseg.netcore.blocks import build_block

    if args.blocks == "all":
        kinds = list(BlockKind)
    else:
        kinds = [coerce_block_kind(name.strip()) for name in args.blocks.split(",")]
    device = _device()
    channels, height, width = args.shape
    torch.manual_seed(_env_seed(args.seed))
    image = torch.randn(1, channels, height, width, device=device)

    writer = csv.writer(sys.stdout)
    writer.writerow(["block", "flops", "median_ms", "mflops_per_ms", "error"])
    succeeded = 0
    with _device_lock(device):
        for kind in kinds:
            flops, _params = count_block_flops(kind, channels, channels,
                                               (height, width), stride=args.stride)
            try:
                block = build_block(kind, channels, channels, stride=args.stride).to(device)
                block.eval()

                def runner():
                    with torch.no_grad():
                        block(image)

                measured = measure_latency(runner, warmup_runs=args.warmup,
                                           measure_runs=args.runs, device_label=device)
                writer.writerow([kind.value, flops, f"{measured.median_ms:.4f}",
                                 f"{flops_efficiency(flops, measured.median_ms):.2f}", ""])
                succeeded += 1
            except Exception as exc:  # timing failure: report the row, keep going
                writer.writerow([kind.value, flops, "", "",
                                 " ".join(str(exc).split())])
    return 0 if succeeded else 1


# ---------------------------------------------------------------------------
# train / eval
# ---------------------------------------------------------------------------

def _load_train_config(path):
    from pathseg.evaluation import TrainConfig

    if path is None:
        return TrainConfig()
    with open(path, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: train config must be a JSON object")
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ValueError(f"{path}: unknown config fields {unknown} (known: {sorted(known)})")
    return TrainConfig(**data)


def cmd_train(args) -> int:
    from pathseg.evaluation import (
        evaluate_miou,
        export_loss_history,
        load_directory_dataset,
        synth_shapes,
        train,
    )
    from pathseg.netcore.checkpoint import save_checkpoint

    spec = _load_spec(args)
    cfg = _load_train_config(args.config)
    seed = _env_seed(cfg.seed)
    if seed != cfg.seed:
        cfg = dataclasses.replace(cfg, seed=seed)

    directory = None
    if args.data is not None:
        directory = load_directory_dataset(args.data)
        dataset = directory.split(args.split)
    else:
        dataset = synth_shapes(args.synth, args.classes, seed=cfg.seed)
    num_classes = getattr(dataset, "num_classes", None) or args.classes

    net = _build_net(spec, num_classes, cfg.seed)
    net, history = train(net, dataset, cfg)
    print(f"iters: {cfg.total_iters}")
    if history:
        print(f"final_loss: {history[-1][2]:.6g}")
    if args.out:
        save_checkpoint(net, args.out)
        print(f"checkpoint: {args.out}")
    if args.history:
        export_loss_history(history, args.history)
        print(f"history: {args.history}")
    if args.eval_split:
        if directory is None:
            raise ValueError("--eval-split requires --data")
        miou, _ = evaluate_miou(net, directory.split(args.eval_split))
        print(f"miou_pct: {miou * 100:.2f}")
    return 0


def cmd_eval(args) -> int:
    from pathseg.evaluation import evaluate_miou, load_directory_dataset
    from pathseg.netcore.checkpoint import load_checkpoint

    net = load_checkpoint(args.ckpt)
    dataset = load_directory_dataset(args.data).split(args.split)
    miou, per_class = evaluate_miou(net, dataset)
    writer = csv.writer(sys.stdout)
    writer.writerow(["class", "iou_pct"])
    writer.writerow(["mean", f"{miou * 100:.2f}"])
    for index, iou in enumerate(per_class):
        writer.writerow([index, "" if math.isnan(iou) else f"{iou * 100:.2f}"])
    return 0


# ---------------------------------------------------------------------------
# expand / export-trajectory
# ---------------------------------------------------------------------------

def _resolve_origin(text: str):
    if text == "n0":
        return archspec.initial_spec()
    if text.startswith("preset:"):
        name = text[len("preset:"):]
        specs = archspec.presets()
        if name not in specs:
            raise ValueError(f"unknown preset {name!r} (have {sorted(specs)})")
        return specs[name]
    return archspec.check_valid(archspec.load_spec(text))


def _train_evaluator(seed: int, iters: int):
    """Score candidates by val mIoU after a short synthetic-data fit.

    Latency still comes from the closed-form surrogate: wall-clock timing
    inside a search loop would make the run order-dependent.
    """
    from pathseg.evaluation import TrainConfig, evaluate_miou, synth_shapes, train

    classes = 5
    train_set = synth_shapes(24, classes, size=(96, 96), seed=seed)
    val_set = synth_shapes(8, classes, size=(96, 96), seed=seed + 1)
    cfg = TrainConfig(total_iters=iters, batch_size=4, crop=(64, 64), seed=seed)

    def perf(spec) -> float:
        net = _build_net(spec, classes, seed)
        net, _ = train(net, train_set, cfg)
        miou, _ = evaluate_miou(net, val_set)
        return miou * 100.0

    return CallableEvaluator(perf, surrogate_latency, label="train")


def _resolve_evaluator(text: str, args):
    if text == "surrogate":
        return surrogate_oracle(_env_seed(args.seed))
    if text == "reference":
        from pathseg.reference_device import reference_evaluator

        return reference_evaluator()
    if text == "train":
        return _train_evaluator(_env_seed(args.seed), args.train_iters)
    if text.startswith("lookup:"):
        return LookupEvaluator.from_csv(text[len("lookup:"):])
    raise ValueError(
        f"unknown evaluator {text!r} (want surrogate, reference, train, or lookup:FILE)"
    )


def cmd_expand(args) -> int:
    origin = _resolve_origin(args.origin)
    evaluator = _resolve_evaluator(args.evaluator, args)
    trajectory = expand(origin, args.steps, evaluator, state_dir=args.out)
    with open(os.path.join(args.out, "trajectory.csv"), "r", encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    if trajectory.truncation_cause:
        print(f"pathseg: note: stopped after {len(trajectory.steps)} of {args.steps} "
              f"steps: {trajectory.truncation_cause}", file=sys.stderr)
    return 0


def _write_recorded_trajectory(out_dir: str) -> None:
    rows = reference.RECORDED_TRAJECTORY
    choices = reference.recorded_choices()
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "trajectory.csv"), "w", encoding="utf-8",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "dimension", "op_index", "k", "depths", "widths",
                         "ratios", "perf_pct", "lat_ms"])
        for row in rows:
            op, k = ("", "")
            if row.step > 0:
                op_obj, k = choices[row.step - 1]
                op = op_obj.index
            writer.writerow([
                row.step,
                row.dimension.value if row.dimension else "",
                op,
                k,
                " ".join(str(d) for d in row.spec.depths),
                " ".join(str(w) for w in row.spec.widths),
                " ".join(str(r) for r in row.spec.ratios),
                f"{row.miou_pct:.6g}",
                f"{row.lat_ms:.6g}",
            ])
    _tradeoff_from_rows(
        [(r.step, f"{r.lat_ms:.6g}", f"{r.miou_pct:.6g}") for r in rows],
        os.path.join(out_dir, "tradeoff.csv"),
    )


def _tradeoff_from_rows(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "lat_ms", "perf_pct"])
        writer.writerows(rows)


def cmd_export_trajectory(args) -> int:
    if args.state is None:
        _write_recorded_trajectory(args.out)
    else:
        source = os.path.join(args.state, "trajectory.csv")
        with open(source, "r", encoding="utf-8") as fh:
            table = list(csv.DictReader(fh))
        if not table:
            raise ValueError(f"{source}: empty trajectory")
        os.makedirs(args.out, exist_ok=True)
        with open(source, "r", encoding="utf-8") as fh:
            body = fh.read()
        with open(os.path.join(args.out, "trajectory.csv"), "w", encoding="utf-8") as fh:
            fh.write(body)
        _tradeoff_from_rows(
            [(r["step"], r["lat_ms"], r["perf_pct"]) for r in table],
            os.path.join(args.out, "tradeoff.csv"),
        )
    print(f"wrote: {os.path.join(args.out, 'trajectory.csv')}")
    print(f"wrote: {os.path.join(args.out, 'tradeoff.csv')}")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="pathseg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("spec", help="inspect a spec")
    _add_spec_source(p)
    p.add_argument("--format", choices=("summary", "raw"), default="summary")
    p.set_defaults(func=cmd_spec)

    p = sub.add_parser("flops", help="analytic cost report for a spec")
    _add_spec_source(p)
    p.add_argument("--res", type=_res_type, default=(1024, 2048), metavar="HxW")
    p.add_argument("--classes", type=int, default=19)
    p.add_argument("--per-layer", metavar="CSV", help="also write the per-layer table")
    p.set_defaults(func=cmd_flops)

    p = sub.add_parser("bench", help="time a built network on this machine")
    _add_spec_source(p)
    p.add_argument("--res", type=_res_type, default=(256, 512), metavar="HxW")
    p.add_argument("--classes", type=int, default=19)
    p.add_argument("--runs", type=int, default=20)
    p.add_argument("--warmup", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("train", help="fit a network on a dataset")
    _add_spec_source(p)
    data = p.add_mutually_exclusive_group(required=True)
    data.add_argument("--data", help="dataset root with images/ and labels/")
    data.add_argument("--synth", type=int, metavar="N",
                      help="train on N synthetic shape images instead")
    p.add_argument("--split", default="train")
    p.add_argument("--classes", type=int, default=5,
                   help="class count when the dataset does not declare one")
    p.add_argument("--config", metavar="JSON",
                   help="training config; fields mirror TrainConfig")
    p.add_argument("--out", metavar="CKPT", help="write the trained checkpoint here")
    p.add_argument("--history", metavar="CSV", help="write the loss history here")
    p.add_argument("--eval-split", help="score this split after training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="mIoU of a checkpoint on a dataset split")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="val")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("expand", help="run greedy expansion")
    p.add_argument("--origin", default="n0",
                   help="'n0', 'preset:NAME', or a spec file (default n0)")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--evaluator", default="surrogate",
                   help="surrogate | reference | train | lookup:FILE")
    p.add_argument("--out", required=True, metavar="DIR",
                   help="state directory; reruns resume from it")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-iters", type=int, default=80,
                   help="iterations per candidate for --evaluator train")
    p.set_defaults(func=cmd_expand)

    p = sub.add_parser("export-trajectory", help="emit trajectory/tradeoff CSVs")
    p.add_argument("--state", metavar="DIR",
                   help="existing expansion state directory (default: recorded run)")
    p.add_argument("--out", required=True, metavar="DIR")
    p.set_defaults(func=cmd_export_trajectory)

    p = sub.add_parser("presets", help="list stock specs")
    p.set_defaults(func=cmd_presets)

    p = sub.add_parser("block-study", help="FLOPs vs. measured latency per block kind")
    p.add_argument("--shape", type=_shape_type, required=True, metavar="CxHxW")
    p.add_argument("--blocks", default="all", help="'all' or comma-separated kinds")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--runs", type=int, default=30)
    p.add_argument("--warmup", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_block_study)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SpecError, ValueError, KeyError, json.JSONDecodeError) as exc:
        _print_error(f"{type(exc).__name__}: {exc}")
        return 2
    except (ExpansionError, OSError, RuntimeError) as exc:
        _print_error(f"{type(exc).__name__}: {exc}")
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
