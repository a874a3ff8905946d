"""Command-line entry point: ``cvdrppg <verb> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .config import TrainConfig, _parse, load_config

log = logging.getLogger("cvdrppg")

THREADS_ENV = "CVD_THREADS"


def thread_limit() -> int | None:
    """Value of ``CVD_THREADS`` (None when unset or empty)."""
    raw = os.environ.get(THREADS_ENV, "").strip()
    if not raw:
        return None
    n = int(raw)
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be >= 1, got {raw!r}")
    return n


# -- verbs -----------------------------------------------------------------------------
def cmd_mstmap_extract(args) -> int:
    from ..mstmap import VideoClip, build_mstmap, load_frames, load_rois, save_mstmap, RoiFrame

    frames = load_frames(args.frames)
    fps, rois = load_rois(args.rois)
    t = min(len(frames), len(rois), args.clip_len)
    if t < len(frames) or t < len(rois):
        log.info("using the first %d of %d frames / %d ROI entries", t, len(frames), len(rois))
    rois = [RoiFrame(r.frame_index, r.regions[:args.n]) for r in rois[:t]]
    short = [r.frame_index for r in rois if r.n < args.n]
    if short:
        raise ValueError(f"frame {short[0]} has fewer than --n {args.n} regions")
    mst = build_mstmap(VideoClip(frames[:t], fps, rois))
    save_mstmap(args.out, mst)
    print(f"wrote {args.out}: {mst.values.shape[0]} rows x {mst.values.shape[1]} frames x 6")
    return 0


def cmd_synth_generate(args) -> int:
    from ..synth import gen_dataset, save_dataset

    ds = gen_dataset(args.count, (args.hr_min, args.hr_max), args.noise, seed=args.seed,
                     rows=args.rows, fs=args.fps, duration=args.duration)
    out = save_dataset(ds, args.out)
    n_val = len(ds.split("val"))
    print(f"wrote {len(ds.samples)} samples ({n_val} val) to {out}")
    return 0


def _train_config(args) -> TrainConfig:
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {}
    for f in fields(TrainConfig):
        v = getattr(args, f"cfg_{f.name}", None)
        if v is not None:
            overrides[f.name] = _parse(v, getattr(cfg, f.name))
    if args.seed is not None:
        overrides["seed"] = args.seed
    return cfg.replace(**overrides)


def cmd_train(args) -> int:
    from ..synth import load_dataset
    from .train import TrainingHalted, train

    cfg = _train_config(args)
    ds = load_dataset(args.data)
    try:
        res = train(cfg, ds, run_dir=args.out, max_steps=args.max_steps)
    except TrainingHalted as exc:
        print(f"training halted: {exc}", file=sys.stderr)
        return 3
    last = res.log.epochs[-1] if res.log.epochs else {}
    print(json.dumps({"run_dir": str(args.out), "steps": len(res.log.steps),
                      "wall_clock_s": round(res.log.wall_clock, 2),
                      **{k: last[k] for k in ("mae", "rmse", "std", "r") if k in last}}))
    return 0


def cmd_eval(args) -> int:
    from ..synth import load_dataset
    from .train import eval_csv, evaluate, load_model

    model = load_model(args.checkpoint)
    split = None if args.split == "all" else args.split
    report, rows = evaluate(model, load_dataset(args.data), split)
    text = eval_csv(rows)
    if args.out:
        Path(args.out).write_text(text)
    print(json.dumps(report.as_dict()))
    return 0


def cmd_infer(args) -> int:
    from ..mstmap import load_mstmap
    from .train import infer, load_model

    model = load_model(args.checkpoint)
    mst = load_mstmap(args.map)
    out = infer(model, mst.values, args.fps or mst.fps)
    text = json.dumps(out, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text)
    return 0


def read_signal(path) -> np.ndarray:
    """A 1-D signal from an ``MST1`` container or a text file of numbers."""
    from ..container import ContainerError, load_tensor

    path = Path(path)
    if path.read_bytes()[:4] == b"MST1":
        x = load_tensor(path)
    else:
        try:
            x = np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None, ndmin=1)
        except ValueError as exc:
            raise ContainerError(f"{path}: not an MST1 container or a numeric text file ({exc})")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 2 and 1 in x.shape:
        x = x.ravel()
    if x.ndim != 1:
        raise ValueError(f"{path}: expected a 1-D signal, got shape {x.shape}")
    return x


def cmd_analyze(args) -> int:
    from ..physio import analyze_signal

    out = analyze_signal(read_signal(args.signal), args.fs)
    text = json.dumps(out, indent=2)
    if args.report:
        Path(args.report).write_text(text)
    else:
        print(text)
    return 0


def cmd_export_plots(args) -> int:
    from .plots import export_plots

    written = export_plots(args.out, run_dir=args.run, eval_csv_path=args.eval_csv)
    for p in written:
        print(p)
    return 0


# -- parser ----------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cvdrppg", description="MSTmap extraction, synthetic data, "
                                "cross-verified disentangling training and physiological analysis")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    mst = sub.add_parser("mstmap", help="MSTmap tools")
    mst_sub = mst.add_subparsers(dest="action", required=True)
    ex = mst_sub.add_parser("extract", help="build an MSTmap from frames and ROIs")
    ex.add_argument("--frames", required=True, help="directory of numbered PPM/PNG frames")
    ex.add_argument("--rois", required=True, help="ROI JSON document")
    ex.add_argument("--out", required=True, help="output .mst file (a .json sidecar is written too)")
    ex.add_argument("--clip-len", type=int, default=300)
    ex.add_argument("--n", type=int, default=6, help="number of regions")
    ex.set_defaults(func=cmd_mstmap_extract)

    syn = sub.add_parser("synth", help="synthetic data")
    syn_sub = syn.add_subparsers(dest="action", required=True)
    gen = syn_sub.add_parser("generate", help="write a labelled synthetic dataset")
    gen.add_argument("--count", type=int, required=True)
    gen.add_argument("--hr-min", type=float, default=50.0)
    gen.add_argument("--hr-max", type=float, default=120.0)
    gen.add_argument("--noise", default="moderate")
    gen.add_argument("--out", required=True)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--rows", type=int, default=63)
    gen.add_argument("--fps", type=float, default=30.0)
    gen.add_argument("--duration", type=float, default=10.0)
    gen.set_defaults(func=cmd_synth_generate)

    tr = sub.add_parser("train", help="train a model")
    tr.add_argument("--config", help="flat key = value config file")
    tr.add_argument("--data", required=True, help="dataset directory")
    tr.add_argument("--out", required=True, help="run directory")
    tr.add_argument("--seed", type=int)
    tr.add_argument("--max-steps", type=int)
    for f in fields(TrainConfig):
        if f.name == "seed":
            continue
        tr.add_argument(f"--{f.name.replace('_', '-')}", dest=f"cfg_{f.name}", metavar="V",
                        help=f"override config key {f.name}")
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="val", choices=("train", "val", "all"))
    ev.add_argument("--out", help="per-sample CSV")
    ev.set_defaults(func=cmd_eval)

    inf = sub.add_parser("infer", help="HR, rPPG and HRV for one MSTmap")
    inf.add_argument("--checkpoint", required=True)
    inf.add_argument("--map", required=True, help="MST1 map file")
    inf.add_argument("--fps", type=float, help="override the sidecar frame rate")
    inf.add_argument("--out", help="output JSON (stdout when omitted)")
    inf.set_defaults(func=cmd_infer)

    an = sub.add_parser("analyze", help="HR/HRV/RF of a 1-D signal")
    an.add_argument("--signal", required=True, help="MST1 container or text file of samples")
    an.add_argument("--fs", type=float, default=30.0)
    an.add_argument("--report", help="output JSON (stdout when omitted)")
    an.set_defaults(func=cmd_analyze)

    ep = sub.add_parser("export-plots", help="scatter and loss-curve CSVs")
    ep.add_argument("--run", help="run directory (reads loss.csv and val.csv)")
    ep.add_argument("--eval-csv", help="per-sample CSV from `eval`")
    ep.add_argument("--out", required=True)
    ep.set_defaults(func=cmd_export_plots)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from threadpoolctl import threadpool_limits

    try:
        with threadpool_limits(limits=thread_limit()):
            return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
