"""Acceptance suite: one test per criterion, each recording a PASS/FAIL line.

The training criteria share cached runs: one seed-0 CVD run on the moderate set
(end-to-end accuracy and disentangling) and a 3-seed x 3-variant grid on the
heavy set (CVD ablation and multi-task comparison).  Expect roughly 45 minutes
on one core.
"""
import functools
import time

import numpy as np
import pytest

from cvdrppg.gradcheck import check_gradients
from cvdrppg.harness import TrainConfig, train
from cvdrppg.harness.experiments import disentangle_reduction, run_variant, standard_dataset
from cvdrppg.losses import loss_cvd, loss_rec, loss_rppg
from cvdrppg.mstmap import (MSTMap, VideoClip, build_mstmap, region_channel_stats,
                            subset_signals)
from cvdrppg.physio import estimate_hr, hrv_features
from cvdrppg.tensor import Tensor
from gradsuite import CASES, DEFAULT_STEP, STEPS
from test_mstmap import _disjoint_clip, brute_force_union
from test_physio import modulated_beats, tone

SEEDS = (0, 1, 2)
NOISY = "heavy"


# -- cached training runs ------------------------------------------------------------
@functools.cache
def dataset(noise):
    return standard_dataset(500, noise, seed=0)


@functools.cache
def run(noise, variant, seed):
    return run_variant(variant, dataset(noise), seed)


# -- criteria ----------------------------------------------------------------------
def test_gradient_suite(criterion):
    t0 = time.perf_counter()
    worst = {}
    for name, make in CASES.items():
        errs = []
        for seed in range(20):
            fn, inputs = make(np.random.default_rng(seed))
            errs.extend(check_gradients(fn, inputs, h=STEPS.get(name, DEFAULT_STEP)))
        worst[name] = max(errs)
    elapsed = time.perf_counter() - t0
    bad = {k: v for k, v in worst.items() if v > 1e-4}
    top = max(worst, key=worst.get)
    ok = criterion("gradient suite", not bad and elapsed < 120,
                   f"{len(CASES)} ops/layers/losses x 20 seeds, worst rel err {worst[top]:.1e} ({top}), "
                   f"{elapsed:.0f} s (limit 120 s)" + (f"; over 1e-4: {bad}" if bad else ""))
    assert ok


def test_mstmap_oracle(criterion):
    t0 = time.perf_counter()
    errs, shapes_ok = {}, True
    for n in (1, 2, 3, 6):
        rng = np.random.default_rng(100 + n)
        frames, rois = _disjoint_clip(rng, n, t=4)
        raw = subset_signals([region_channel_stats(f, r) for f, r in zip(frames, rois)])
        errs[n] = float(np.abs(raw - brute_force_union(frames, rois, n)).max())
        mst = build_mstmap(VideoClip(frames, 30.0, rois))
        shapes_ok &= isinstance(mst, MSTMap) and mst.values.shape == (2 ** n - 1, 4, 6)
    elapsed = time.perf_counter() - t0
    ok = criterion("MSTmap oracle", max(errs.values()) <= 1e-9 and shapes_ok and elapsed < 60,
                   f"max |pooled - union| per n {errs}, shapes (2^n-1)xTx6 {'ok' if shapes_ok else 'WRONG'}, "
                   f"{elapsed:.1f} s")
    assert ok


def test_loss_identities(criterion):
    rng = np.random.default_rng(7)
    s = rng.normal(size=(4, 64))
    s = (s - s.mean(axis=1, keepdims=True)) / s.std(axis=1, keepdims=True) * 3.0
    same = np.abs(loss_rppg(Tensor(s), Tensor(s)).data).max()
    neg = np.abs(loss_rppg(Tensor(-s), Tensor(s)).data - 2.0).max()
    m = rng.normal(size=(2, 6, 8, 8))
    rec = abs(loss_rec(Tensor(m), Tensor(m + 1), Tensor(m), Tensor(m + 1)).item())
    f = [Tensor(rng.normal(size=(2, 4, 3, 3))) for _ in range(4)]
    hr = [Tensor(rng.uniform(50, 120, size=2)) for _ in range(2)]
    cvd = abs(loss_cvd(f[0], f[1], f[0], f[1], f[2], f[3], f[3], f[2], hr[0], hr[1], hr[0], hr[1]).item())
    worst = max(same, neg, rec, cvd)
    ok = criterion("loss identities", worst <= 1e-8,
                   f"|rppg(s,s)|={same:.1e}, |rppg(s,-s)-2|={neg:.1e}, rec={rec:.1e}, cvd={cvd:.1e}")
    assert ok


def test_spectral_exactness(criterion):
    fs = 30.0
    exact = estimate_hr(tone(1.2, seconds=10.0, fs=fs), fs)
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        clean = tone(1.2, seconds=10.0, fs=fs, phase=rng.uniform(0, 2 * np.pi))
        noisy = clean + rng.normal(0.0, np.sqrt(np.mean(clean ** 2)), size=clean.size)  # 0 dB
        hits += abs(estimate_hr(noisy, fs) - 72.0) <= 1.0
    ok = criterion("spectral exactness", exact == 72.0 and hits >= 18,
                   f"bin-centred 72 bpm -> {exact!r}; 0 dB white noise within 1 bpm on {hits}/20 seeds")
    assert ok


def test_hrv_correctness(criterion):
    lf_case = hrv_features(modulated_beats(0.1))
    hf_case = hrv_features(modulated_beats(0.3))
    sums = (lf_case.lf + lf_case.hf, hf_case.lf + hf_case.hf)
    ok = criterion("HRV correctness",
                   lf_case.lf >= 0.95 and hf_case.hf >= 0.95 and abs(hf_case.rf - 0.3) <= 0.02
                   and sums == (1.0, 1.0),
                   f"0.1 Hz: LF={lf_case.lf:.4f}; 0.3 Hz: HF={hf_case.hf:.4f}, RF={hf_case.rf:.4f} Hz; "
                   f"LF+HF={sums}")
    assert ok


def test_end_to_end_training(criterion):
    res = run("moderate", "cvd_mtl", 0)
    ok = criterion("end-to-end synthetic training", res.mae <= 3.0 and res.wall_clock <= 1800,
                   f"500 moderate samples, 64x64, CVD+MTL seed 0: held-out MAE {res.mae:.3f} bpm "
                   f"(RMSE {res.rmse:.3f}, r {res.r:.4f}), {res.wall_clock / 60:.1f} min")
    assert ok


def test_cvd_ablation_direction(criterion):
    with_cvd = [run(NOISY, "cvd_mtl", s).mae for s in SEEDS]
    without = [run(NOISY, "mtl", s).mae for s in SEEDS]
    wins = sum(a < b for a, b in zip(with_cvd, without))
    ok = criterion("CVD ablation direction",
                   np.mean(with_cvd) <= np.mean(without) and wins >= 2,
                   f"{NOISY} set, MAE with CVD {np.round(with_cvd, 3).tolist()} (mean {np.mean(with_cvd):.3f}) "
                   f"vs without {np.round(without, 3).tolist()} (mean {np.mean(without):.3f}); "
                   f"strict wins {wins}/3")
    assert ok


def test_disentangling_convergence(criterion):
    res = run("moderate", "cvd_mtl", 0)
    before, after = disentangle_reduction(res, dataset("moderate"))
    # reported alongside, not judged: the same gap with batch statistics as in training
    b_before, b_after = disentangle_reduction(res, dataset("moderate"), batch_stats=True)
    ok = criterion("disentangling convergence", after <= 0.5 * before,
                   f"held-out meanAbs(f_p - f_pse_p), eval mode: init {before:.4f} -> trained {after:.4f} "
                   f"(ratio {after / before:.3f}, limit 0.5); with batch statistics "
                   f"{b_before:.4f} -> {b_after:.4f} (ratio {b_after / b_before:.3f})")
    assert ok


def test_multitask_direction(criterion):
    both = [run(NOISY, "mtl", s).mae for s in SEEDS]
    hr_only = [run(NOISY, "hr_only", s).mae for s in SEEDS]
    wins = sum(a <= b for a, b in zip(both, hr_only))
    ok = criterion("multi-task direction", wins >= 2,
                   f"{NOISY} set, MAE both heads {np.round(both, 3).tolist()} vs HR head only "
                   f"{np.round(hr_only, 3).tolist()}; both <= HR-only in {wins}/3 seeds")
    assert ok


def test_reproducibility(criterion, tmp_path):
    ds = standard_dataset(60, "moderate", seed=3)
    cfg = TrainConfig(epochs=2, seed=11)
    a, b = tmp_path / "a", tmp_path / "b"
    train(cfg, ds, run_dir=a)
    train(cfg, standard_dataset(60, "moderate", seed=3), run_dir=b)
    files = ("config.txt", "manifest.json", "loss.csv", "epochs.json", "val.csv", "model.ckpt", "model.json")
    diff = [f for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    ok = criterion("reproducibility", not diff,
                   f"two runs, same seed/config/manifest: {len(files) - len(diff)}/{len(files)} artifacts "
                   f"byte-identical" + (f"; differing: {diff}" if diff else ""))
    assert ok
