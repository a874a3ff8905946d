"""Pairwise training loop, evaluation and inference."""
from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..container import load_checkpoint, save_checkpoint
from ..mstmap import flip_augment, resize_mstmap
from ..model import CVDModel, forward_cvd
from ..optim import AdamState, adam_step
from ..physio import AnalysisError, MetricsReport, analyze_signal, metrics, sliding_window_hr
from ..synth import Dataset, LabeledSample, balance_resample, manifest_hash
from ..tensor import NonFiniteError, Tensor, backward
from .config import TrainConfig, dump_config, parse_config

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step", "L_rec", "L_CVD", "L_pre", "L")
EVAL_COLUMNS = ("sample_id", "hr_gt", "hr_pred", "abs_err")


class TrainingHalted(RuntimeError):
    pass


# -- data preparation ------------------------------------------------------------
def network_input(values: np.ndarray, h: int, w: int) -> np.ndarray:
    """[rows, T, 6] map in [0, 255] -> (6, h, w) array in [0, 1]."""
    return np.ascontiguousarray(resize_mstmap(values, h, w).transpose(2, 0, 1) / 255.0)


def resample_signal(x: np.ndarray, length: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    src = (np.arange(x.size) + 0.5) / x.size
    dst = (np.arange(length) + 0.5) / length
    return np.interp(dst, src, x)


@dataclass
class Prepared:
    ids: list[str]
    maps: np.ndarray     # N, 6, h, w
    hr: np.ndarray       # N
    bvp: np.ndarray      # N, L (z-scored)
    noise: list[str]

    def __len__(self) -> int:
        return len(self.ids)


def prepare(samples: list[LabeledSample], cfg: TrainConfig, noise_names: dict | None = None) -> Prepared:
    maps = np.stack([network_input(s.values, cfg.input_h, cfg.input_w) for s in samples])
    bvp = np.stack([resample_signal(s.bvp.samples, cfg.input_w) for s in samples])
    bvp = (bvp - bvp.mean(axis=1, keepdims=True)) / (bvp.std(axis=1, keepdims=True) + 1e-12)
    noise_names = noise_names or {}
    return Prepared([s.sample_id for s in samples], maps, np.array([s.hr_gt for s in samples]),
                    bvp, [noise_names.get(s.sample_id, "") for s in samples])


# -- pairing -------------------------------------------------------------------
class PairSampler:
    """Uniform random pairs of distinct samples, one pass per epoch.

    Each epoch shuffles the indices and pairs neighbours, so every sample shows
    up once per epoch.  With ``cross_noise`` each partner is drawn from a
    different noise preset when one exists.
    """

    def __init__(self, n: int, rng: np.random.Generator, groups: list[str] | None = None,
                 cross_noise: bool = False):
        if n < 2:
            raise ValueError("pair sampling needs at least two samples")
        self.n = n
        self.rng = rng
        self.groups = np.array(groups if groups is not None else [""] * n)
        self.cross_noise = cross_noise and len(set(self.groups)) > 1

    def epoch(self, order: np.ndarray | None = None) -> list[tuple[int, int]]:
        perm = self.rng.permutation(self.n) if order is None else np.asarray(order)
        if not self.cross_noise:
            if perm.size % 2:
                perm = np.append(perm, self.rng.choice(perm[:-1]))
            return [(int(a), int(b)) for a, b in perm.reshape(-1, 2)]
        pairs = []
        for a in perm[: (perm.size + 1) // 2]:
            others = np.flatnonzero(self.groups != self.groups[a])
            pairs.append((int(a), int(self.rng.choice(others))))
        return pairs

    def batches(self, batch_pairs: int, order: np.ndarray | None = None):
        pairs = self.epoch(order)
        for i in range(0, len(pairs), batch_pairs):
            yield pairs[i:i + batch_pairs]


# -- run log -----------------------------------------------------------------------
@dataclass
class RunLog:
    steps: list[dict] = field(default_factory=list)
    epochs: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0

    def loss_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(LOSS_COLUMNS)
        for row in self.steps:
            w.writerow([row["step"]] + [repr(row[k]) for k in LOSS_COLUMNS[1:]])
        return buf.getvalue()


@dataclass
class TrainResult:
    model: CVDModel
    config: TrainConfig
    log: RunLog
    run_dir: Path | None = None


def _batch_tensors(data: Prepared, pairs, cfg: TrainConfig, rng: np.random.Generator):
    ia = [a for a, _ in pairs]
    ib = [b for _, b in pairs]

    def side(idx):
        maps, sig = [], []
        for i in idx:
            m, s = data.maps[i].transpose(1, 2, 0), data.bvp[i]
            if cfg.flip_h or cfg.flip_v:
                m, fh, _ = flip_augment(m, cfg.flip_h, cfg.flip_v, rng)
                if fh:
                    s = s[::-1]
            maps.append(m.transpose(2, 0, 1))
            sig.append(s)
        return Tensor(np.stack(maps)), data.hr[idx], np.stack(sig)

    m1, hr1, s1 = side(ia)
    m2, hr2, s2 = side(ib)
    return m1, m2, hr1, hr2, s1, s2


def init_model(cfg: TrainConfig, train_hr: np.ndarray) -> CVDModel:
    return CVDModel(cfg.model_config(hr_init=float(np.mean(train_hr))), seed=cfg.seed)


def train(cfg: TrainConfig, dataset: Dataset, run_dir=None, max_steps: int | None = None,
          on_epoch=None) -> TrainResult:
    """Train on the ``train`` split; evaluate on ``val`` after each epoch.

    Writes ``config.txt``, ``manifest.json``, ``loss.csv``, ``val.csv`` and
    ``model.ckpt`` (+ ``model.json``) into ``run_dir`` when given.  A non-finite
    value anywhere halts training after dumping ``last_good.ckpt``.
    """
    t0 = time.perf_counter()
    train_s, val_s = dataset.split("train"), dataset.split("val")
    if len(train_s) < 2:
        raise ValueError(f"need >= 2 training samples, got {len(train_s)}")
    noise_names = {e["sample_id"]: e.get("noise", "") for e in dataset.manifest["samples"]}
    data = prepare(train_s, cfg, noise_names)
    val = prepare(val_s, cfg) if val_s else None

    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir is not None:
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.txt").write_text(dump_config(cfg))
        (run_dir / "manifest.json").write_text(json.dumps(dataset.manifest, sort_keys=True))

    model = init_model(cfg, data.hr)
    params = list(model.parameters().values())
    state = AdamState(lr=cfg.lr).init(params)
    weights = cfg.loss_weights()
    rng = np.random.default_rng([cfg.seed, 1])
    sampler = PairSampler(len(data), rng, data.noise, cfg.pair_cross_noise)
    runlog = RunLog()
    step = 0
    last_good = model.state_dict()
    for epoch in range(1, cfg.epochs + 1):
        state.lr = cfg.lr_at(epoch)
        order = None
        if cfg.balance:
            picks = balance_resample(list(range(len(data))), cfg.balance_bin, rng,
                                     key=lambda i: data.hr[i])
            order = rng.permutation(np.array(picks))
        for pairs in sampler.batches(cfg.batch_pairs, order):
            try:
                m1, m2, hr1, hr2, s1, s2 = _batch_tensors(data, pairs, cfg, rng)
                out = forward_cvd(model, m1, m2, hr1, hr2, s1, s2, weights,
                                  use_cvd=cfg.use_cvd, use_rppg=cfg.use_rppg,
                                  hr_stopgrad=cfg.cvd_hr_stopgrad)
                model.zero_grad()
                backward(out.total)
                adam_step(params, [p.grad for p in params], state)
            except NonFiniteError as exc:
                _halt(run_dir, last_good, step, pairs, data, exc)
            step += 1
            row = {"step": step, **out.terms()}
            runlog.steps.append(row)
            last_good = model.state_dict()
            if max_steps is not None and step >= max_steps:
                break
        entry = {"epoch": epoch, "step": step}
        if val is not None and cfg.eval_every and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            entry.update(predict_report(model, val)[0].as_dict())
        runlog.epochs.append(entry)
        log.info("epoch %d step %d L=%.4f %s", epoch, step, runlog.steps[-1]["L"],
                 {k: v for k, v in entry.items() if k in ("mae", "rmse")})
        if on_epoch is not None:
            on_epoch(epoch, model, runlog)
        if run_dir is not None and cfg.checkpoint_every and epoch % cfg.checkpoint_every == 0:
            save_model(run_dir / f"epoch{epoch:03d}.ckpt", model)
        if max_steps is not None and step >= max_steps:
            break
    runlog.wall_clock = time.perf_counter() - t0
    if run_dir is not None:
        (run_dir / "loss.csv").write_text(runlog.loss_csv())
        (run_dir / "epochs.json").write_text(json.dumps(runlog.epochs, indent=2))
        save_model(run_dir / "model.ckpt", model)
        if val is not None:
            report, rows = predict_report(model, val)
            (run_dir / "val.csv").write_text(eval_csv(rows))
    return TrainResult(model, cfg, runlog, run_dir)


def _halt(run_dir, last_good, step, pairs, data: Prepared, exc) -> None:
    diag = {"step": step + 1, "error": str(exc),
            "pairs": [[data.ids[a], data.ids[b]] for a, b in pairs]}
    if run_dir is not None:
        save_checkpoint(run_dir / "last_good.ckpt", last_good)
        (run_dir / "halt.json").write_text(json.dumps(diag, indent=2))
    raise TrainingHalted(f"non-finite value at step {step + 1}: {exc}") from exc


# -- checkpoints ---------------------------------------------------------------------
def save_model(path, model: CVDModel) -> None:
    path = Path(path)
    save_checkpoint(path, model.state_dict())
    path.with_suffix(".json").write_text(json.dumps(model.cfg.as_dict(), indent=2))


def load_model(path) -> CVDModel:
    from ..model import ModelConfig
    path = Path(path)
    cfg = ModelConfig(**json.loads(path.with_suffix(".json").read_text()))
    model = CVDModel(cfg)
    model.load_state_dict(load_checkpoint(path))
    return model


# -- evaluation ----------------------------------------------------------------------
def predict_hr(model: CVDModel, maps: np.ndarray, batch: int = 32) -> tuple[np.ndarray, np.ndarray]:
    hrs, sigs = [], []
    for i in range(0, len(maps), batch):
        hr, s = model.predict(maps[i:i + batch])
        hrs.append(hr)
        sigs.append(s)
    return np.concatenate(hrs), np.concatenate(sigs)


def predict_report(model: CVDModel, data: Prepared, video_ids: list[str] | None = None):
    """Per-sample predictions; clips sharing a video id are averaged first."""
    pred, _ = predict_hr(model, data.maps)
    ids, gt = list(data.ids), data.hr
    if video_ids is not None:
        groups: dict[str, list[int]] = {}
        for i, v in enumerate(video_ids):
            groups.setdefault(v, []).append(i)
        ids = list(groups)
        pred = np.array([sliding_window_hr(pred[g]) for g in groups.values()])
        gt = np.array([float(np.mean(data.hr[g])) for g in groups.values()])
    rows = [{"sample_id": i, "hr_gt": float(g), "hr_pred": float(p), "abs_err": float(abs(p - g))}
            for i, g, p in zip(ids, gt, pred)]
    if len(rows) >= 2:
        report = metrics(pred, gt)
    else:
        err = float(abs(pred[0] - gt[0]))
        report = MetricsReport(std=0.0, mae=err, rmse=err, r=None, n=1)
    return report, rows


def eval_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(EVAL_COLUMNS)
    for r in rows:
        w.writerow([r["sample_id"], repr(r["hr_gt"]), repr(r["hr_pred"]), repr(r["abs_err"])])
    return buf.getvalue()


def parse_eval_csv(text: str) -> list[dict]:
    rows = list(csv.DictReader(io.StringIO(text)))
    if rows and tuple(rows[0].keys()) != EVAL_COLUMNS:
        raise ValueError(f"unexpected columns {tuple(rows[0].keys())}")
    return [{"sample_id": r["sample_id"], "hr_gt": float(r["hr_gt"]),
             "hr_pred": float(r["hr_pred"]), "abs_err": float(r["abs_err"])} for r in rows]


def evaluate(model: CVDModel, dataset: Dataset, split: str | None = "val", cfg: TrainConfig | None = None):
    """MetricsReport and per-sample rows for one split (or every sample)."""
    cfg = cfg or TrainConfig(input_h=model.cfg.input_h, input_w=model.cfg.input_w)
    samples = dataset.samples if split is None else dataset.split(split)
    if not samples:
        raise ValueError(f"split {split!r} is empty")
    data = prepare(samples, cfg)
    if data.maps.shape[1:] != (model.cfg.in_channels, model.cfg.input_h, model.cfg.input_w):
        raise ValueError(f"maps {data.maps.shape[1:]} do not fit the model input")
    videos = [e.get("video_id", e["sample_id"]) for e in dataset.manifest["samples"]
              if split is None or e["split"] == split]
    return predict_report(model, data, videos)


def infer(model: CVDModel, values: np.ndarray, fps: float = 30.0) -> dict:
    """HR from the HR head, rPPG from the rPPG head, HRV/RF from the waveform."""
    cfg = model.cfg
    x = network_input(values, cfg.input_h, cfg.input_w)[None]
    hr, s = model.predict(x)
    duration = values.shape[1] / fps
    wave = resample_signal(s[0], values.shape[1])
    out = {"hr_bpm": float(hr[0]), "rppg": [float(v) for v in wave], "rppg_fs": fps,
           "duration_s": duration}
    try:
        res = analyze_signal(wave, fps)
    except AnalysisError as exc:  # clip too short for a spectral HR
        res = {"hr_bpm": None, "ibis": [], "rf_hz": None, "lf_nu": None, "hf_nu": None,
               "lf_hf": None, "hrv_error": str(exc)}
    out["rppg_hr_bpm"] = res["hr_bpm"]
    out["ibis"] = res["ibis"]
    # HrvFeatures field names; all None when the waveform is too short for HRV
    out["hrv"] = {"rf": res["rf_hz"], "lf": res["lf_nu"], "hf": res["hf_nu"], "lf_hf": res["lf_hf"]}
    if "hrv_error" in res:
        out["hrv_error"] = res["hrv_error"]
    return out
