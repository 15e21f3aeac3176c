"""Command-line entry point: ``evenhancer <subcommand> ...``.

Failures print one line, ``evenhancer: error: <Kind>: <message>``, and exit
with status 2.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import csm, metrics, pipeline
from .events import normalize, read_events, voxelize
from .imageio import list_frames, mask_to_gray, read_frame, write_frame, write_pgm
from .tensor_core import ContractError
from .train_plan import build_plan, format_plan, validate_plan


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CliError(f"UsageError: {message}")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file (default: $%s)" % pipeline.CONFIG_ENV)
    for f in dataclasses.fields(pipeline.PipelineConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                       help=f"override config key {f.name!r}")


def _config(args) -> pipeline.PipelineConfig:
    overrides = {f.name: getattr(args, f.name) for f in dataclasses.fields(pipeline.PipelineConfig)}
    cfg = pipeline.load_config(args.config, **overrides)
    return cfg


def _load_pair(args):
    frames = np.stack([read_frame(args.frames[0]), read_frame(args.frames[1])])
    stream = read_events(args.events)
    return frames, stream


def cmd_voxelize(args) -> None:
    grid = voxelize(read_events(args.events), args.bins)
    bins = grid.bins if args.raw else normalize(grid).bins
    np.save(args.out, np.asarray(bins, dtype=np.float64 if args.raw else np.float32))
    print(f"wrote {args.out} shape={tuple(bins.shape)}")


def cmd_difficulty(args) -> None:
    cfg = _config(args)
    stream = read_events(args.events)
    h, w = stream.resolution
    out_h, out_w = csm.scaled_size(h, cfg.scale_s), csm.scaled_size(w, cfg.scale_s)
    maps, masks = pipeline.difficulty_maps(cfg, stream, out_h, out_w)
    _export_maps(args.export_difficulty, args.export_mask, maps, masks)
    for k, m in enumerate(masks):
        print(f"frame {k} counts {m.counts().tolist()}")


def _export_maps(diff_dir, mask_dir, maps, masks) -> None:
    if diff_dir:
        Path(diff_dir).mkdir(parents=True, exist_ok=True)
        for k, dm in enumerate(maps):
            write_pgm(Path(diff_dir) / f"difficulty_{k:03d}.pgm", dm.values)
            np.save(Path(diff_dir) / f"difficulty_{k:03d}.npy", dm.values)
    if mask_dir:
        Path(mask_dir).mkdir(parents=True, exist_ok=True)
        for k, m in enumerate(masks):
            write_pgm(Path(mask_dir) / f"mask_{k:03d}.pgm", mask_to_gray(m.pathway, m.N))
            np.save(Path(mask_dir) / f"mask_{k:03d}.npy", m.pathway)


def cmd_superres(args) -> None:
    cfg = _config(args)
    frames, stream = _load_pair(args)
    store = pipeline.build_store(cfg)
    if args.save_weights:
        store.save(args.save_weights)
    if cfg.pathways == 1:
        result = pipeline.run_evenhancer(cfg, frames, stream, store)
    else:
        result = pipeline.run_evenhancerplus(cfg, frames, stream, store)
        _export_maps(args.export_difficulty, args.export_mask, result.difficulty, result.masks)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, frame in enumerate(result.frames):
        write_frame(out / f"frame_{k:03d}.{args.format}", frame, bits=args.bits)
    if args.raw:
        np.save(out / "frames.npy", result.frames)
    print(f"wrote {len(result.frames)} frames of {result.frames.shape[2]}x{result.frames.shape[3]} to {out}")
    if args.ledger:
        print(json.dumps({"total_macs": result.ledger.total(), "kernels": result.ledger.counters}, sort_keys=True))


def cmd_plan(args) -> None:
    plan = build_plan(args.pathways, tuple(args.iters), args.t_fix, args.s_fix, (args.s_low, args.s_high), args.seed)
    problems = validate_plan(plan)
    if problems:
        raise ContractError("; ".join(problems))
    text = format_plan(plan)
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)


def cmd_metrics(args) -> None:
    preds, gts = list_frames(args.pred), list_frames(args.target)
    if len(preds) != len(gts):
        raise ContractError(f"{len(preds)} predicted frames vs {len(gts)} targets")
    ps, ss = [], []
    for a, b in zip(preds, gts):
        pa, pb = read_frame(a), read_frame(b)
        p, s = metrics.psnr_y(pa, pb), metrics.ssim_y(pa, pb)
        ps.append(p)
        ss.append(s)
        print(f"{a.name}\tpsnr {_fmt(p)}\tssim {s:.6f}")
    print(f"mean\tpsnr {_fmt(float(np.mean(ps)))}\tssim {float(np.mean(ss)):.6f}")


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.4f}"


def cmd_flops(args) -> None:
    from .toy import load_toy_clip

    cfg = _config(args)
    if args.events:
        stream = read_events(args.events)
    else:
        _, stream = load_toy_clip()
    lr = (args.height or stream.resolution[0], args.width or stream.resolution[1])
    if args.sweep:
        xis = [round(i / args.steps, 10) for i in range(args.steps + 1)]
    else:
        xis = list(cfg.threshold)
    rows = pipeline.threshold_sweep(cfg, stream, lr, xis)
    single = pipeline.shared_cost(cfg.replace(pathways=1, widths=cfg.widths[-1:], threshold=()),
                                  pipeline.build_store(cfg.replace(pathways=1, widths=cfg.widths[-1:], threshold=())), lr)
    costs = pipeline.pathway_costs(cfg, pipeline.build_store(cfg), lr)
    pixels = (cfg.scale_t + 1) * csm.scaled_size(lr[0], cfg.scale_s) * csm.scaled_size(lr[1], cfg.scale_s)
    baseline = single + pixels * costs[-1]
    print("threshold\ttotal_macs\tflops\tratio_vs_single\tfrac_simple")
    for r in rows:
        print(f"{r.threshold:.2f}\t{int(r.total)}\t{int(r.flops)}\t{r.total / baseline:.4f}\t{r.fractions[0]:.4f}")
    print(f"single\t{baseline}\t{2 * baseline}\t1.0000\t0.0000")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="evenhancer", description="Event-guided space-time video super-resolution (forward pass).")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    v = sub.add_parser("voxelize", help="event file -> normalized voxel grid (.npy)")
    v.add_argument("events")
    v.add_argument("--bins", type=int, default=7, help="M; the grid has M+1 bins")
    v.add_argument("--out", required=True)
    v.add_argument("--raw", action="store_true", help="skip hot-pixel normalization")
    v.set_defaults(func=cmd_voxelize)

    d = sub.add_parser("difficulty", help="difficulty maps and pathway masks per output frame")
    d.add_argument("events")
    _add_config_flags(d)
    d.add_argument("--export-difficulty")
    d.add_argument("--export-mask")
    d.set_defaults(func=cmd_difficulty)

    s = sub.add_parser("superres", help="run the full pipeline on two frames and their events")
    s.add_argument("--frames", nargs=2, required=True)
    s.add_argument("--events", required=True)
    s.add_argument("--out", required=True)
    _add_config_flags(s)
    s.add_argument("--format", choices=("png", "ppm"), default="png")
    s.add_argument("--bits", type=int, choices=(8, 16), default=8)
    s.add_argument("--raw", action="store_true", help="also dump float frames as frames.npy")
    s.add_argument("--export-difficulty")
    s.add_argument("--export-mask")
    s.add_argument("--ledger", action="store_true", help="print multiply-add counts as JSON")
    s.add_argument("--save-weights")
    s.set_defaults(func=cmd_superres)

    pl = sub.add_parser("plan", help="dry-run export of the cross-derivative training schedule")
    pl.add_argument("--pathways", type=int, default=2)
    pl.add_argument("--iters", type=int, nargs=3, default=[450_000, 150_000, 150_000])
    pl.add_argument("--t-fix", type=int, default=8)
    pl.add_argument("--s-fix", type=float, default=4.0)
    pl.add_argument("--s-low", type=float, default=1.0)
    pl.add_argument("--s-high", type=float, default=4.0)
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--out")
    pl.set_defaults(func=cmd_plan)

    m = sub.add_parser("metrics", help="Y-channel PSNR/SSIM between two frame directories")
    m.add_argument("pred")
    m.add_argument("target")
    m.set_defaults(func=cmd_metrics)

    f = sub.add_parser("flops", help="multiply-add budget, optionally swept over the threshold")
    f.add_argument("--events", help="event file driving the masks (default: bundled toy clip)")
    _add_config_flags(f)
    f.add_argument("--height", type=int)
    f.add_argument("--width", type=int)
    f.add_argument("--sweep", action="store_true", help="sweep xi_1 over 0, 1/steps, ..., 1")
    f.add_argument("--steps", type=int, default=10)
    f.set_defaults(func=cmd_flops)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except CliError as exc:
        print(f"evenhancer: error: {exc}", file=sys.stderr)
        return 2
    except (ContractError, OSError, ValueError, KeyError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"evenhancer: error: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
