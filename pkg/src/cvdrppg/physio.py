"""Spectral and beat-domain analysis: HR, IBIs, HRV, respiration and HR metrics."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.signal import find_peaks

HR_BAND_BPM = (40.0, 180.0)
LF_BAND = (0.04, 0.15)
HF_BAND = (0.15, 0.40)
IBI_RANGE = (0.25, 2.0)
HRV_FS = 4.0
HRV_MIN_SECONDS = 30.0


class AnalysisError(ValueError):
    pass


@dataclass
class Signal:
    samples: np.ndarray
    fs: float

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64).ravel()
        if self.fs <= 0:
            raise AnalysisError(f"sampling rate must be positive, got {self.fs}")
        if self.samples.size < 2:
            raise AnalysisError("a signal needs at least two samples")
        if not np.isfinite(self.samples).all():
            raise AnalysisError("signal contains non-finite samples")

    @property
    def duration(self) -> float:
        return self.samples.size / self.fs


def _signal(x, fs) -> Signal:
    if isinstance(x, Signal):
        return x
    if fs is None:
        raise AnalysisError("fs is required when passing a raw array")
    return Signal(x, fs)


@dataclass
class IbiSeries:
    """Beat times plus the accepted intervals and the time each interval ends."""
    beat_times: np.ndarray
    intervals: np.ndarray
    interval_times: np.ndarray

    @classmethod
    def from_beats(cls, beat_times, valid_range=IBI_RANGE) -> "IbiSeries":
        bt = np.asarray(beat_times, dtype=np.float64)
        if bt.ndim != 1 or (np.diff(bt) <= 0).any():
            raise AnalysisError("beat times must be a strictly increasing 1-D sequence")
        iv = np.diff(bt)
        keep = (iv >= valid_range[0]) & (iv <= valid_range[1])
        return cls(bt, iv[keep], bt[1:][keep])


@dataclass
class HrvFeatures:
    rf: float
    lf: float
    hf: float
    lf_hf: float

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricsReport:
    std: float
    mae: float
    rmse: float
    r: float | None  # None when either side is constant
    n: int

    def as_dict(self) -> dict:
        return asdict(self)


# -- spectra -----------------------------------------------------------------
def periodogram(x: np.ndarray, fs: float, nfft: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Squared DFT magnitude |sum_t x_t exp(-2 pi i f t / fs)|^2 at rfft bins."""
    x = np.asarray(x, dtype=np.float64)
    nfft = x.size if nfft is None else nfft
    spec = np.fft.rfft(x, n=nfft)
    return np.fft.rfftfreq(nfft, 1.0 / fs), spec.real ** 2 + spec.imag ** 2


def _three_point_offset(xm: complex, x0: complex, xp: complex) -> float:
    """Fractional bin offset of a tone from three complex DFT values.

    Exact (zero) when the tone sits on a bin, and far less biased than a
    parabola through magnitudes for rectangular-window spectra.
    """
    den = 2.0 * x0 - xm - xp
    if den == 0:
        return 0.0
    return float(np.clip(-((xp - xm) / den).real, -0.5, 0.5))


def estimate_hr(signal, fs: float | None = None, band=HR_BAND_BPM, min_seconds: float = 5.0) -> float:
    """Heart rate in bpm from the in-band PSD peak, refined with its two neighbouring bins."""
    sig = _signal(signal, fs)
    if sig.duration < min_seconds:
        raise AnalysisError(f"need >= {min_seconds} s of signal, got {sig.duration:.2f} s")
    x = sig.samples - sig.samples.mean()
    spec = np.fft.rfft(x)
    power = spec.real ** 2 + spec.imag ** 2
    freqs = np.fft.rfftfreq(x.size, 1.0 / sig.fs)
    inband = np.flatnonzero((freqs >= band[0] / 60.0) & (freqs <= band[1] / 60.0))
    if inband.size == 0:
        raise AnalysisError(f"no DFT bins inside {band} bpm")
    k = int(inband[np.argmax(power[inband])])
    if power[k] <= 0.0:
        raise AnalysisError("flat spectrum: no power inside the HR band")
    delta = 0.0
    if 0 < k < power.size - 1:
        delta = _three_point_offset(spec[k - 1], spec[k], spec[k + 1])
    return float((k + delta) * sig.fs / x.size * 60.0)


# -- beats -------------------------------------------------------------------
def _sliding_threshold(x: np.ndarray, win: int, k: float) -> np.ndarray:
    half = win // 2
    c1 = np.concatenate([[0.0], np.cumsum(x)])
    c2 = np.concatenate([[0.0], np.cumsum(x * x)])
    idx = np.arange(x.size)
    lo = np.maximum(idx - half, 0)
    hi = np.minimum(idx + half + 1, x.size)
    n = hi - lo
    mu = (c1[hi] - c1[lo]) / n
    var = np.maximum((c2[hi] - c2[lo]) / n - mu * mu, 0.0)
    return mu + k * np.sqrt(var)


def detect_peaks(signal, fs: float | None = None, window_s: float = 2.0, k_std: float = 0.3,
                 refractory_s: float = 0.4, min_seconds: float = 5.0) -> IbiSeries:
    """Pulse peaks: local maxima above mean + k*std over a sliding window.

    Peaks closer than the refractory period keep the taller one.  Each peak
    time is refined by a parabola through its three neighbouring samples.
    """
    sig = _signal(signal, fs)
    if sig.duration < min_seconds:
        raise AnalysisError(f"need >= {min_seconds} s of signal, got {sig.duration:.2f} s")
    x = sig.samples
    thr = _sliding_threshold(x, max(int(round(window_s * sig.fs)), 1), k_std)
    distance = max(int(math.ceil(refractory_s * sig.fs)), 1)
    idx, _ = find_peaks(x, distance=distance)
    idx = idx[x[idx] > thr[idx]]
    if idx.size < 3:
        raise AnalysisError(f"found {idx.size} beats, need at least 3")
    a, b, c = x[idx - 1], x[idx], x[idx + 1]
    den = a - 2.0 * b + c
    delta = np.where(den < 0, 0.5 * (a - c) / np.where(den < 0, den, -1.0), 0.0)
    times = (idx + np.clip(delta, -0.5, 0.5)) / sig.fs
    return IbiSeries.from_beats(times)


# -- HRV -----------------------------------------------------------------------
def hrv_features(ibis: IbiSeries, fs: float = HRV_FS, min_seconds: float = HRV_MIN_SECONDS,
                 nfft_min: int = 4096) -> HrvFeatures:
    """LF/HF in normalized units and respiration frequency from an IBI series.

    The intervals are linearly resampled at ``fs`` against the beat times that
    close them, mean-detrended and zero-padded before the periodogram.
    """
    t, iv = ibis.interval_times, ibis.intervals
    if t.size < 3 or t[-1] - t[0] < min_seconds:
        span = 0.0 if t.size == 0 else t[-1] - t[0]
        raise AnalysisError(f"need >= {min_seconds} s of beats, got {span:.2f} s")
    grid = np.arange(t[0], t[-1], 1.0 / fs)
    series = np.interp(grid, t, iv)
    series = series - series.mean()
    nfft = max(nfft_min, 1 << int(np.ceil(np.log2(series.size))))
    freqs, power = periodogram(series, fs, nfft)
    lf_mask = (freqs >= LF_BAND[0]) & (freqs < LF_BAND[1])
    hf_mask = (freqs >= HF_BAND[0]) & (freqs <= HF_BAND[1])
    lf_pow, hf_pow = power[lf_mask].sum(), power[hf_mask].sum()
    total = lf_pow + hf_pow
    if total <= 0:
        raise AnalysisError("no LF/HF power: interval series is constant")
    lf, hf = lf_pow / total, hf_pow / total
    rf = float(freqs[hf_mask][np.argmax(power[hf_mask])])
    lf_hf = lf_pow / hf_pow if hf_pow > 0 else math.inf
    return HrvFeatures(rf=rf, lf=float(lf), hf=float(1.0 - lf), lf_hf=float(lf_hf))


# -- evaluation metrics ------------------------------------------------------------
def metrics(pred, gt) -> MetricsReport:
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape or p.ndim != 1 or p.size < 2:
        raise AnalysisError(f"need two equal-length lists of >= 2 values, got {p.shape} and {g.shape}")
    err = p - g
    r = None
    if np.ptp(p) > 0 and np.ptp(g) > 0:
        pc, gc = p - p.mean(), g - g.mean()
        r = float(np.clip((pc @ gc) / np.sqrt((pc @ pc) * (gc @ gc)), -1.0, 1.0))
    return MetricsReport(std=float(err.std()), mae=float(np.abs(err).mean()),
                         rmse=float(np.sqrt((err ** 2).mean())), r=r, n=int(p.size))


def clip_starts(video_seconds: float, clip_seconds: float, step: float = 0.5) -> np.ndarray:
    """Start times of every clip taken at ``step`` spacing from a longer video."""
    if clip_seconds > video_seconds:
        return np.array([0.0])
    count = int(np.floor((video_seconds - clip_seconds) / step + 1e-9)) + 1
    return np.arange(count) * step


def sliding_window_hr(clip_hrs, step: float = 0.5) -> float:
    """Video-level HR: the mean over clips cut every ``step`` seconds."""
    hrs = np.asarray(clip_hrs, dtype=np.float64).ravel()
    if hrs.size == 0:
        raise AnalysisError("need at least one clip prediction")
    return float(hrs.mean())


def analyze_signal(signal, fs: float | None = None) -> dict:
    """HR, HRV and IBIs of one waveform; HRV fields are None when it is too short."""
    sig = _signal(signal, fs)
    out = {"hr_bpm": estimate_hr(sig), "rf_hz": None, "lf_nu": None, "hf_nu": None,
           "lf_hf": None, "ibis": []}
    try:
        ibis = detect_peaks(sig)
    except AnalysisError as exc:
        out["hrv_error"] = str(exc)
        return out
    out["ibis"] = [float(v) for v in ibis.intervals]
    try:
        h = hrv_features(ibis)
    except AnalysisError as exc:
        out["hrv_error"] = str(exc)
        return out
    out.update(rf_hz=h.rf, lf_nu=h.lf, hf_nu=h.hf, lf_hf=h.lf_hf)
    return out
