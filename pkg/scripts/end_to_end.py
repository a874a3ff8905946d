"""Desk-scale end-to-end run: synthesize, train, evaluate, export plot data.

    python scripts/end_to_end.py --out runs/desk --noise moderate --count 500
"""
import argparse
import json
import sys
from pathlib import Path

from cvdrppg.harness import TrainConfig, train
from cvdrppg.harness.experiments import disentangle_gap, standard_dataset
from cvdrppg.harness.plots import export_plots
from cvdrppg.harness.train import init_model, predict_report, prepare
from cvdrppg.synth import save_dataset


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", required=True)
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--noise", default="moderate")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--no-cvd", action="store_true")
    args = p.parse_args(argv)

    out = Path(args.out)
    ds = standard_dataset(args.count, args.noise)
    save_dataset(ds, out / "data")
    cfg = TrainConfig(seed=args.seed, epochs=args.epochs, use_cvd=not args.no_cvd)

    def progress(epoch, model, log):
        e = log.epochs[-1]
        print(f"epoch {epoch:3d}  L={log.steps[-1]['L']:.3f}  val MAE={e.get('mae', float('nan')):.3f}",
              flush=True)

    res = train(cfg, ds, run_dir=out / "run", on_epoch=progress)
    val = prepare(ds.split("val"), cfg)
    report, _ = predict_report(res.model, val)
    init = init_model(cfg, [s.hr_gt for s in ds.split("train")])
    summary = {**report.as_dict(), "wall_clock_s": round(res.log.wall_clock, 1),
               "gap_init": disentangle_gap(init, val), "gap_final": disentangle_gap(res.model, val)}
    export_plots(out / "plots", run_dir=out / "run")
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
