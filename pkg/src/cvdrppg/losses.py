"""Training objectives: reconstruction, cross-verification and physiological losses.

Batched losses take signals shaped (N, L) and HRs shaped (N,).  The
single-pair formulas are the N == 1 case; batches average over pairs.
"""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

PEARSON_EPS = 1e-8
CE_EPS = 1e-10


def loss_rec(m1: Tensor, m2: Tensor, m1_rec: Tensor, m2_rec: Tensor, lambda_rec: float = 50.0) -> Tensor:
    return T.scale(T.l1_mean(m1, m1_rec) + T.l1_mean(m2, m2_rec), lambda_rec)


def _hr_l1(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"HR shapes {a.shape} and {b.shape} differ")
    return T.mean(T.tabs(a - b))


def loss_cvd(f_p1: Tensor, f_p2: Tensor, f_pse_p1: Tensor, f_pse_p2: Tensor,
             f_n1: Tensor, f_n2: Tensor, f_pse_n1: Tensor, f_pse_n2: Tensor,
             hr_1: Tensor, hr_2: Tensor, hr_pse1: Tensor, hr_pse2: Tensor,
             lambda_cvd: float = 10.0) -> Tensor:
    """Cross-verification loss.

    Noise features pair across clips: ``f_n1`` is compared with ``f_pse_n2``
    because the second pseudo map was decoded from clip 1's noise features.
    """
    phys = T.l1_mean(f_p1, f_pse_p1) + T.l1_mean(f_p2, f_pse_p2)
    noise = T.l1_mean(f_n1, f_pse_n2) + T.l1_mean(f_n2, f_pse_n1)
    hr = _hr_l1(hr_1, hr_pse1) + _hr_l1(hr_2, hr_pse2)
    return T.scale(phys + noise, lambda_cvd) + hr


def loss_rppg(s_pre: Tensor, s_gt: Tensor, eps: float = PEARSON_EPS) -> Tensor:
    """1 - Pearson correlation along the last axis; one value per row.

    ``eps`` sits under each square root, so two constant signals score 1.
    """
    if s_pre.shape != s_gt.shape:
        raise ShapeError(f"loss_rppg: shapes {s_pre.shape} and {s_gt.shape} differ")
    if s_pre.shape[-1] < 2:
        raise ShapeError("loss_rppg: signals need at least two samples")
    a = s_pre - T.mean(s_pre, axis=-1, keepdims=True)
    b = s_gt - T.mean(s_gt, axis=-1, keepdims=True)
    cov = T.mean(a * b, axis=-1)
    va = T.mean(T.square(a), axis=-1)
    vb = T.mean(T.square(b), axis=-1)
    return 1.0 - cov / (T.sqrt(va + eps) * T.sqrt(vb + eps))


def band_frequencies(band, bin_width: float) -> np.ndarray:
    lo, hi = band
    if hi < lo:
        raise ValueError(f"empty band {band}")
    count = int(np.floor((hi - lo) / bin_width + 1e-9)) + 1
    return lo + bin_width * np.arange(count)


def dft_basis(length: int, fs: float, freqs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = np.arange(length) / fs
    arg = 2.0 * np.pi * np.outer(t, freqs)
    return np.cos(arg), np.sin(arg)


def psd_at(s: Tensor, fs: float, freqs) -> Tensor:
    """|DFT|^2 of ``s`` (last axis) at arbitrary frequencies, differentiable in ``s``."""
    freqs = np.asarray(freqs, dtype=np.float64)
    cos, sin = dft_basis(s.shape[-1], fs, freqs)
    flat = s if s.ndim == 2 else T.reshape(s, (1, s.shape[-1]))
    power = T.square(T.matmul(flat, cos)) + T.square(T.matmul(flat, sin))
    return power if s.ndim == 2 else T.reshape(power, (freqs.size,))


def differentiable_psd(s: Tensor, fs: float, band, bin_width: float) -> Tensor:
    """Power at bin centres ``band[0] + k * bin_width`` up to ``band[1]`` (Hz)."""
    lo, hi = band
    if s.shape[-1] < 2:
        raise ShapeError("differentiable_psd: need at least two samples")
    if not (0 < lo <= hi < fs / 2):
        raise ValueError(f"band {band} must be non-empty and inside (0, {fs / 2}) Hz")
    return psd_at(s, fs, band_frequencies(band, bin_width))


def hr_bin_index(hr_gt, band_bpm=(40.0, 180.0)) -> np.ndarray:
    hr = np.atleast_1d(np.asarray(hr_gt, dtype=np.float64))
    if ((hr < band_bpm[0]) | (hr > band_bpm[1])).any():
        raise ValueError(f"ground-truth HR {hr[(hr < band_bpm[0]) | (hr > band_bpm[1])]} "
                         f"outside {band_bpm} bpm")
    return np.rint(hr - band_bpm[0]).astype(int)


def spectrum_probabilities(s_pre: Tensor, fs: float, band_bpm=(40.0, 180.0), eps: float = CE_EPS) -> Tensor:
    """In-band PSD of the mean-removed signal, normalized to sum to one (1-bpm bins)."""
    centred = s_pre - T.mean(s_pre, axis=-1, keepdims=True)
    band_hz = (band_bpm[0] / 60.0, band_bpm[1] / 60.0)
    power = differentiable_psd(centred, fs, band_hz, 1.0 / 60.0)
    k = power.shape[-1]
    return (power + eps) / (T.sum(power, axis=-1, keepdims=True) + k * eps)


def loss_rppg_hr(s_pre: Tensor, hr_gt, fs: float, band_bpm=(40.0, 180.0)) -> Tensor:
    """Cross-entropy between the normalized PSD and a one-hot at the nearest 1-bpm bin."""
    idx = hr_bin_index(hr_gt, band_bpm)
    p = spectrum_probabilities(s_pre, fs, band_bpm)
    if p.ndim == 1:
        return -T.log(p[int(idx[0])])
    if idx.size != p.shape[0]:
        raise ShapeError(f"{idx.size} HR labels for {p.shape[0]} signals")
    return -T.log(p[np.arange(idx.size), idx])


def loss_pre(hr_pre: Tensor, hr_gt, s_pre: Tensor | None, s_gt, fs: float,
             lambda_rppg: float = 2.0, band_bpm=(40.0, 180.0)) -> Tensor:
    """Sum over rows of |HR - HR_gt| + lambda_rppg * L_rppg + L_rppg_hr.

    ``s_pre=None`` drops both waveform terms (HR-head-only training).
    """
    hr_gt_t = T.as_tensor(hr_gt)
    if hr_pre.shape != hr_gt_t.shape:
        raise ShapeError(f"loss_pre: HR shapes {hr_pre.shape} and {hr_gt_t.shape} differ")
    total = T.sum(T.tabs(hr_pre - hr_gt_t))
    if s_pre is not None:
        total = total + T.scale(T.sum(loss_rppg(s_pre, T.as_tensor(s_gt))), lambda_rppg)
        total = total + T.sum(loss_rppg_hr(s_pre, hr_gt_t.data, fs, band_bpm))
    return total
