"""Train model variants over several seeds and print a held-out MAE table.

    python scripts/ablation.py --variants cvd_mtl mtl hr_only --seeds 0 1 2 --noise moderate
"""
import argparse
import csv
import json
import sys

from cvdrppg.harness.config import TrainConfig, _parse
from cvdrppg.harness.experiments import VARIANTS, disentangle_reduction, run_variant, standard_dataset


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=list(VARIANTS))
    p.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    p.add_argument("--count", type=int, default=500)
    p.add_argument("--noise", default="moderate")
    p.add_argument("--data-seed", type=int, default=0)
    p.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE", help="TrainConfig overrides")
    p.add_argument("--csv", help="append result rows here")
    args = p.parse_args(argv)

    base = TrainConfig()
    over = {}
    for kv in args.set:
        k, v = kv.split("=", 1)
        over[k] = _parse(v, getattr(base, k))
    base = base.replace(**over)
    ds = standard_dataset(args.count, args.noise, args.data_seed)
    rows = []
    for seed in args.seeds:
        for name in args.variants:
            res = run_variant(name, ds, seed, base)
            row = res.row()
            if name == "cvd_mtl":
                row["gap_init"], row["gap_final"] = disentangle_reduction(res, ds)
            row.update(noise=args.noise, overrides=json.dumps(over))
            rows.append(row)
            print(json.dumps(row), flush=True)
    if args.csv:
        with open(args.csv, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=sorted({k for r in rows for k in r}))
            if fh.tell() == 0:
                w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
