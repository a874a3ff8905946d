"""Desk-scale experiment recipes shared by the scripts and the acceptance suite."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .. import tensor as T
from ..model import CVDModel
from ..synth import Dataset, gen_dataset
from .config import TrainConfig
from .train import Prepared, init_model, predict_report, prepare, train

# name -> TrainConfig overrides
VARIANTS = {
    "cvd_mtl": {"use_cvd": True, "use_rppg": True},
    "mtl": {"use_cvd": False, "use_rppg": True, "lambda_cvd": 0.0},
    "hr_only": {"use_cvd": False, "use_rppg": False, "lambda_cvd": 0.0},
}


@dataclass
class VariantResult:
    variant: str
    seed: int
    mae: float
    rmse: float
    std: float
    r: float | None
    wall_clock: float
    model: CVDModel
    cfg: TrainConfig

    def row(self) -> dict:
        return {"variant": self.variant, "seed": self.seed, "mae": self.mae, "rmse": self.rmse,
                "std": self.std, "r": self.r, "wall_clock_s": round(self.wall_clock, 1)}


def standard_dataset(count: int = 500, noise: str = "moderate", seed: int = 0) -> Dataset:
    return gen_dataset(count, (50.0, 120.0), noise, seed=seed)


def run_variant(variant: str, dataset: Dataset, seed: int, base: TrainConfig | None = None,
                run_dir=None) -> VariantResult:
    cfg = (base or TrainConfig()).replace(seed=seed, **VARIANTS[variant])
    t0 = time.perf_counter()
    res = train(cfg.replace(eval_every=0), dataset, run_dir=run_dir)
    report, _ = predict_report(res.model, prepare(dataset.split("val"), cfg))
    return VariantResult(variant, seed, report.mae, report.rmse, report.std, report.r,
                         time.perf_counter() - t0, res.model, cfg)


def heldout_pairs(n: int) -> list[tuple[int, int]]:
    """Deterministic held-out pairs: each sample with its successor."""
    return [(i, (i + 1) % n) for i in range(n)]


def disentangle_gap(model: CVDModel, data: Prepared, pairs=None, batch_stats: bool = False) -> float:
    """Mean over held-out pairs of meanAbs(f_p - f_pse_p), both clips.

    Eval-mode normalization by default.  ``batch_stats`` normalizes the real and
    the pseudo maps with their own batch statistics instead, as in training,
    without touching the running averages.
    """
    pairs = heldout_pairs(len(data)) if pairs is None else pairs
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    m = T.Tensor(np.concatenate([data.maps[a], data.maps[b]]))
    f_p, f_n = model.encode(m, train=batch_stats, track=False)
    n = len(pairs)
    pse = model.decode(f_p, T.concat([f_n[n:], f_n[:n]], axis=0))
    f_pse_p, _ = model.encode(pse, train=batch_stats, track=False)
    return float(np.abs(f_p.data - f_pse_p.data).mean())


def disentangle_reduction(result: VariantResult, dataset: Dataset,
                          batch_stats: bool = False) -> tuple[float, float]:
    """(gap at initialization, gap after training) on the val split."""
    data = prepare(dataset.split("val"), result.cfg)
    init = init_model(result.cfg, [s.hr_gt for s in dataset.split("train")])
    return (disentangle_gap(init, data, batch_stats=batch_stats),
            disentangle_gap(result.model, data, batch_stats=batch_stats))
