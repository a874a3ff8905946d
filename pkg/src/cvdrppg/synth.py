"""Synthetic BVP signals, corrupted MSTmaps and toy pulsating videos with known HR."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .mstmap import (RegionStats, RoiFrame, VideoClip, minmax_normalize_rows, rgb_to_yuv,
                     subset_signals)
from .physio import Signal

# relative pulsatility per channel R, G, B, Y, U, V
PULSATILITY = (0.35, 1.0, 0.25, 0.7, 0.2, 0.3)
BASELINE = (170.0, 120.0, 100.0, 132.0, 113.0, 156.0)


@dataclass
class BvpSpec:
    hr: float
    fs: float = 30.0
    duration: float = 10.0
    harmonics: tuple[float, ...] = (1.0, 0.4, 0.2)
    noise_std: float = 0.0
    seed: int = 0

    def validate(self) -> None:
        if not 40.0 <= self.hr <= 180.0:
            raise ValueError(f"hr {self.hr} bpm outside [40, 180]")
        top = max(len(self.harmonics), 1) * self.hr / 60.0
        if self.fs < 2.0 * top:
            raise ValueError(f"fs {self.fs} Hz below Nyquist for harmonic at {top:.2f} Hz")


@dataclass
class NoiseSpec:
    drift_amp: float = 0.0       # illumination drift, fraction of baseline
    drift_freq: float = 0.05     # Hz, < 0.1
    spike_rate: float = 0.0      # motion events per second
    spike_amp: float = 0.0       # fraction of baseline
    gain_jitter: float = 0.0     # std of per-region pulse gain
    sensor_std: float = 0.0      # white noise, fraction of baseline
    seed: int = 0

    def __post_init__(self):
        for k in ("drift_amp", "spike_rate", "spike_amp", "gain_jitter", "sensor_std"):
            if getattr(self, k) < 0:
                raise ValueError(f"NoiseSpec.{k} must be >= 0")
        if not 0 <= self.drift_freq < 0.1:
            raise ValueError(f"drift_freq must be in [0, 0.1) Hz, got {self.drift_freq}")


NOISE_PRESETS = {
    "none": NoiseSpec(),
    "mild": NoiseSpec(drift_amp=0.01, spike_rate=0.1, spike_amp=0.005, gain_jitter=0.1,
                      sensor_std=0.001),
    "moderate": NoiseSpec(drift_amp=0.02, spike_rate=0.2, spike_amp=0.01, gain_jitter=0.2,
                          sensor_std=0.002),
    "heavy": NoiseSpec(drift_amp=0.04, spike_rate=0.4, spike_amp=0.02, gain_jitter=0.3,
                       sensor_std=0.004),
}


def noise_preset(name: str, seed: int = 0) -> NoiseSpec:
    if name not in NOISE_PRESETS:
        raise KeyError(f"unknown noise preset {name!r}; choose from {sorted(NOISE_PRESETS)}")
    return replace(NOISE_PRESETS[name], seed=seed)


@dataclass
class LabeledSample:
    values: np.ndarray   # rows x T x 6, normalized to [0, 255]
    hr_gt: float
    bvp: Signal
    noise: NoiseSpec
    sample_id: str = ""


def gen_bvp(spec: BvpSpec) -> Signal:
    """Sum of seeded-phase harmonics of the HR fundamental plus white noise."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = int(round(spec.duration * spec.fs))
    t = np.arange(n) / spec.fs
    f0 = spec.hr / 60.0
    x = np.zeros(n)
    phases = rng.uniform(0, 2 * np.pi, size=len(spec.harmonics))
    for k, (a, ph) in enumerate(zip(spec.harmonics, phases), start=1):
        x += a * np.sin(2 * np.pi * k * f0 * t + ph)
    if spec.noise_std > 0:
        x = x + rng.normal(0.0, spec.noise_std, size=n)
    return Signal(x, spec.fs)


def _motion_events(rng, n: int, fs: float, rate: float) -> np.ndarray:
    """Sum of smooth bumps (0.3 s wide) at Poisson times with random signed sizes."""
    out = np.zeros(n)
    if rate <= 0:
        return out
    count = rng.poisson(rate * n / fs)
    t = np.arange(n) / fs
    for _ in range(count):
        t0 = rng.uniform(0, n / fs)
        out += rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.0) * np.exp(-0.5 * ((t - t0) / 0.15) ** 2)
    return out


def region_traces(bvp: Signal, n_regions: int, noise: NoiseSpec, pulse_amp: float = 0.01,
                  pulsatility=PULSATILITY, baseline=BASELINE) -> tuple[np.ndarray, np.ndarray]:
    """Per-region mean colour traces (T, n, 6) and pixel counts (n,).

    trace = baseline * (1 + gain * w_c * pulse_amp * bvp + drift + motion + sensor),
    where w_c is the channel pulsatility.
    """
    rng = np.random.default_rng(noise.seed)
    n_t = bvp.samples.size
    t = np.arange(n_t) / bvp.fs
    base = np.asarray(baseline, float) * rng.uniform(0.9, 1.1, size=(n_regions, 1))
    gains = rng.uniform(0.7, 1.3, size=n_regions) + rng.normal(0.0, noise.gain_jitter, size=n_regions)
    w = np.asarray(pulsatility, float)
    pulse = bvp.samples / max(np.abs(bvp.samples).max(), 1e-12)
    rel = pulse_amp * gains[None, :, None] * w[None, None, :] * pulse[:, None, None]
    if noise.drift_amp > 0:
        phase = rng.uniform(0, 2 * np.pi)
        drift = noise.drift_amp * np.sin(2 * np.pi * noise.drift_freq * t + phase)
        mix = rng.uniform(0.5, 1.5, size=(n_regions, 6))
        rel = rel + drift[:, None, None] * mix[None]
    if noise.spike_rate > 0 and noise.spike_amp > 0:
        motion = noise.spike_amp * _motion_events(rng, n_t, bvp.fs, noise.spike_rate)
        mix = rng.uniform(0.3, 1.7, size=(n_regions, 6)) * rng.choice([-1.0, 1.0], size=(n_regions, 1))
        rel = rel + motion[:, None, None] * mix[None]
    if noise.sensor_std > 0:
        rel = rel + rng.normal(0.0, noise.sensor_std, size=rel.shape)
    counts = rng.integers(200, 2000, size=n_regions)
    return base[None] * (1.0 + rel), counts


def gen_mstmap(bvp: Signal, rows: int = 63, noise: NoiseSpec | None = None, hr_gt: float | None = None,
               pulse_amp: float = 0.01, pulsatility=PULSATILITY) -> LabeledSample:
    """Labeled MSTmap whose rows pool synthetic region traces over every subset."""
    noise = noise or NoiseSpec()
    n = int(round(np.log2(rows + 1)))
    if 2 ** n - 1 != rows:
        raise ValueError(f"rows must be 2^n - 1, got {rows}")
    traces, counts = region_traces(bvp, n, noise, pulse_amp, pulsatility)
    stats = [RegionStats(traces[t] * counts[:, None], counts) for t in range(traces.shape[0])]
    values = minmax_normalize_rows(subset_signals(stats))
    return LabeledSample(values, float(hr_gt) if hr_gt is not None else float("nan"), bvp, noise)


def gen_video(bvp: Signal, frame_size=(48, 64), n_regions: int = 6, amplitude: float = 4.0,
              seed: int = 0, background=None) -> VideoClip:
    """Skin-toned rectangles whose brightness follows ``bvp`` on a static background.

    A fixed per-pixel texture dithers the 8-bit quantization so region means
    still carry the sub-level pulse.
    """
    rng = np.random.default_rng(seed)
    h, w = frame_size
    cols = int(np.ceil(np.sqrt(n_regions)))
    rws = int(np.ceil(n_regions / cols))
    bh, bw = h // (rws + 1), w // (cols + 1)
    if bh < 1 or bw < 1:
        raise ValueError(f"frame {frame_size} too small for {n_regions} regions")
    boxes = []
    for i in range(n_regions):
        r, c = divmod(i, cols)
        y = (r + 1) * h // (rws + 1) - bh // 2
        x = (c + 1) * w // (cols + 1) - bw // 2
        boxes.append((x, y, bw, bh))
    if background is None:
        background = np.broadcast_to(np.linspace(40, 90, w)[None, :, None], (h, w, 3))
    background = np.asarray(background, float)
    skin = np.array([180.0, 130.0, 110.0])
    texture = rng.uniform(-6.0, 6.0, size=(h, w, 3))
    gains = rng.uniform(0.6, 1.4, size=n_regions)
    channel_w = np.array([0.5, 1.0, 0.4])
    pulse = bvp.samples / max(np.abs(bvp.samples).max(), 1e-12)
    frames = np.empty((pulse.size, h, w, 3), dtype=np.uint8)
    for t, p in enumerate(pulse):
        img = background.copy()
        for (x, y, bw_, bh_), g in zip(boxes, gains):
            img[y:y + bh_, x:x + bw_] = skin + texture[y:y + bh_, x:x + bw_] + amplitude * g * p * channel_w
        frames[t] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    rois = [RoiFrame(t, list(boxes)) for t in range(pulse.size)]
    return VideoClip(frames, bvp.fs, rois)


def _split_of(index: int, seed: int) -> str:
    digest = hashlib.sha256(f"{seed}:{index}".encode()).digest()
    return "val" if digest[0] % 5 == 0 else "train"


@dataclass
class Dataset:
    samples: list[LabeledSample]
    manifest: dict = field(default_factory=dict)

    def split(self, name: str) -> list[LabeledSample]:
        ids = {e["sample_id"] for e in self.manifest["samples"] if e["split"] == name}
        return [s for s in self.samples if s.sample_id in ids]


def manifest_hash(manifest: dict) -> str:
    return hashlib.sha256(json.dumps(manifest, sort_keys=True).encode()).hexdigest()


def draw_labels(count: int, hr_range=(50.0, 120.0), seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Uniform HRs and per-sample (bvp, noise) seeds, exactly as ``gen_dataset`` draws them."""
    rng = np.random.default_rng(seed)
    hrs = rng.uniform(hr_range[0], hr_range[1], size=count)
    return hrs, rng.integers(0, 2 ** 31 - 1, size=(count, 2))


def gen_dataset(count: int, hr_range=(50.0, 120.0), noise: NoiseSpec | str = "moderate",
                seed: int = 0, rows: int = 63, fs: float = 30.0, duration: float = 10.0,
                noise_mix: tuple[str, ...] | None = None) -> Dataset:
    """HRs drawn uniformly from ``hr_range``; split 80/20 by hashing the sample index.

    ``noise_mix`` cycles through several presets so pairs can mix corruption
    types; otherwise every sample uses ``noise`` (with its own seed).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    hrs, seeds = draw_labels(count, hr_range, seed)
    samples, entries = [], []
    for i in range(count):
        preset = noise_mix[i % len(noise_mix)] if noise_mix else noise
        base = noise_preset(preset) if isinstance(preset, str) else preset
        ns = replace(base, seed=int(seeds[i, 1]))
        bvp = gen_bvp(BvpSpec(hr=float(hrs[i]), fs=fs, duration=duration, seed=int(seeds[i, 0])))
        s = gen_mstmap(bvp, rows, ns, hr_gt=float(hrs[i]))
        s.sample_id = f"s{i:05d}"
        samples.append(s)
        entries.append({"sample_id": s.sample_id, "hr_gt": float(hrs[i]),
                        "noise": preset if isinstance(preset, str) else "custom",
                        "noise_spec": asdict(ns), "bvp_seed": int(seeds[i, 0]),
                        "split": _split_of(i, seed)})
    manifest = {"count": count, "seed": seed, "hr_range": list(hr_range), "rows": rows,
                "fs": fs, "duration": duration, "samples": entries}
    return Dataset(samples, manifest)


def balance_resample(samples: list, bin_width: float, rng: np.random.Generator,
                     key=lambda s: s.hr_gt) -> list:
    """Resample with replacement so every occupied HR bin is equally likely."""
    if not samples:
        raise ValueError("balance_resample needs at least one sample")
    bins = np.floor(np.array([key(s) for s in samples]) / bin_width).astype(int)
    _, inverse, counts = np.unique(bins, return_inverse=True, return_counts=True)
    prob = 1.0 / (len(counts) * counts[inverse])
    idx = rng.choice(len(samples), size=len(samples), replace=True, p=prob / prob.sum())
    return [samples[i] for i in idx]


# -- persistence -------------------------------------------------------------
def save_dataset(ds: Dataset, out_dir) -> Path:
    from .container import save_tensor
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for s, e in zip(ds.samples, ds.manifest["samples"]):
        map_file, bvp_file = f"{s.sample_id}.mst", f"{s.sample_id}.bvp.mst"
        save_tensor(out / map_file, s.values)
        save_tensor(out / bvp_file, s.bvp.samples)
        entries.append(dict(e, map_file=map_file, bvp_file=bvp_file))
    manifest = dict(ds.manifest, samples=entries)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return out / "manifest.json"


def load_dataset(path) -> Dataset:
    from .container import load_tensor
    path = Path(path)
    mpath = path / "manifest.json" if path.is_dir() else path
    manifest = json.loads(mpath.read_text())
    root = mpath.parent
    fs = float(manifest.get("fs", 30.0))
    samples = []
    for e in manifest["samples"]:
        ns = NoiseSpec(**e["noise_spec"]) if "noise_spec" in e else NoiseSpec()
        samples.append(LabeledSample(load_tensor(root / e["map_file"]), float(e["hr_gt"]),
                                     Signal(load_tensor(root / e["bvp_file"]), fs), ns,
                                     e["sample_id"]))
    return Dataset(samples, manifest)
