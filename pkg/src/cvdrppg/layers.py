"""Network layers: convolution, transposed convolution, normalization, pooling, FC.

Tensors are laid out NCHW.  Convolution is cross-correlation (no kernel flip).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import ShapeError, Tensor, _node

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


# -- correlation kernels on raw arrays ------------------------------------
def _corr(xp: np.ndarray, w: np.ndarray, stride, out_hw) -> np.ndarray:
    sh, sw = stride
    ho, wo = out_hw
    kh, kw = w.shape[2:]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N,ho,wo,O
    return out.transpose(0, 3, 1, 2)


def _corr_grad_input(g: np.ndarray, w: np.ndarray, stride, xp_shape) -> np.ndarray:
    sh, sw = stride
    n, _, ho, wo = g.shape
    kh, kw = w.shape[2:]
    cols = np.tensordot(g, w, axes=([1], [0]))  # N,ho,wo,C,kh,kw
    cols = cols.transpose(0, 3, 4, 5, 1, 2)  # N,C,kh,kw,ho,wo
    gx = np.zeros(xp_shape)
    for i in range(kh):
        for j in range(kw):
            gx[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += cols[:, :, i, j]
    return gx


def _corr_grad_weight(g: np.ndarray, xp: np.ndarray, stride, kernel) -> np.ndarray:
    sh, sw = stride
    kh, kw = kernel
    ho, wo = g.shape[2:]
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    return np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3]))  # O,C,kh,kw


def conv_out_size(n: int, k: int, stride: int, padding: int) -> int:
    return (n + 2 * padding - k) // stride + 1


# -- convolution -----------------------------------------------------------
def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlate NCHW ``x`` with OCkhkw ``w``, then add ``b``."""
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: input {x.shape} and weight {w.shape} must both be 4-D")
    n, c, h, wd = x.shape
    o, cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"conv2d: input channels {c} != weight in-channels {cw}")
    if b is not None and b.shape != (o,):
        raise ShapeError(f"conv2d: bias shape {b.shape} != ({o},)")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    if sh < 1 or sw < 1:
        raise ShapeError(f"conv2d: stride must be >= 1, got {(sh, sw)}")
    if kh > h + 2 * ph:
        raise ShapeError(f"conv2d: kernel height {kh} exceeds padded height {h + 2 * ph}")
    if kw > wd + 2 * pw:
        raise ShapeError(f"conv2d: kernel width {kw} exceeds padded width {wd + 2 * pw}")
    ho, wo = conv_out_size(h, kh, sh, ph), conv_out_size(wd, kw, sw, pw)
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else x.data
    out = _corr(xp, w.data, (sh, sw), (ho, wo))
    if b is not None:
        out = out + b.data[None, :, None, None]
    wdat = w.data

    def back(g):
        gxp = _corr_grad_input(g, wdat, (sh, sw), xp.shape) if x.requires_grad else None
        gx = None if gxp is None else gxp[:, :, ph:ph + h, pw:pw + wd]
        gw = _corr_grad_weight(g, xp, (sh, sw), (kh, kw)) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _node(out, parents, back, "conv2d")


def transposed_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0,
                      output_padding=0) -> Tensor:
    """Adjoint of :func:`conv2d`.  ``w`` has shape (C_in, C_out, kh, kw).

    Output size is ``(H - 1) * stride - 2 * padding + kh + output_padding``.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"transposed_conv2d: input {x.shape} and weight {w.shape} must be 4-D")
    n, c, h, wd = x.shape
    ci, co, kh, kw = w.shape
    if c != ci:
        raise ShapeError(f"transposed_conv2d: input channels {c} != weight in-channels {ci}")
    if b is not None and b.shape != (co,):
        raise ShapeError(f"transposed_conv2d: bias shape {b.shape} != ({co},)")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    oph, opw = _pair(output_padding)
    if sh < 1 or sw < 1:
        raise ShapeError(f"transposed_conv2d: stride must be >= 1, got {(sh, sw)}")
    ho = (h - 1) * sh - 2 * ph + kh + oph
    wo = (wd - 1) * sw - 2 * pw + kw + opw
    if ho < 1 or wo < 1:
        raise ShapeError(f"transposed_conv2d: padding {(ph, pw)} leaves an empty output")
    full = (n, co, (h - 1) * sh + kh + oph, (wd - 1) * sw + kw + opw)
    out = _corr_grad_input(x.data, w.data, (sh, sw), full)[:, :, ph:ph + ho, pw:pw + wo]
    if b is not None:
        out = out + b.data[None, :, None, None]
    xdat, wdat = x.data, w.data

    def back(g):
        gfull = np.zeros(full)
        gfull[:, :, ph:ph + ho, pw:pw + wo] = g
        gx = _corr(gfull, wdat, (sh, sw), (h, wd)) if x.requires_grad else None
        gw = _corr_grad_weight(xdat, gfull, (sh, sw), (kh, kw)) if w.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if b is not None else None
        return (gx, gw, gb) if b is not None else (gx, gw)

    parents = (x, w, b) if b is not None else (x, w)
    return _node(np.ascontiguousarray(out), parents, back, "transposed_conv2d")


# -- normalization -----------------------------------------------------------
@dataclass
class RunningStats:
    mean: np.ndarray
    var: np.ndarray
    momentum: float = BN_MOMENTUM

    @classmethod
    def zeros(cls, channels: int) -> "RunningStats":
        return cls(np.zeros(channels), np.ones(channels))


def _normalize(x: Tensor, gamma: Tensor, beta: Tensor, axes: tuple[int, ...], eps: float,
               stats: tuple[np.ndarray, np.ndarray] | None = None) -> Tensor:
    """Affine normalization over ``axes``; ``stats`` freezes mean/var (eval mode)."""
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeError(f"norm: gamma {gamma.shape} / beta {beta.shape} must be ({c},)")
    xd = x.data
    bshape = (1, c, 1, 1)
    if stats is None:
        mu = xd.mean(axis=axes, keepdims=True)
        var = xd.var(axis=axes, keepdims=True)
    else:
        mu = stats[0].reshape(bshape)
        var = stats[1].reshape(bshape)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mu) * inv
    gd = gamma.data.reshape(bshape)
    out = gd * xhat + beta.data.reshape(bshape)
    m = int(np.prod([xd.shape[a] for a in axes]))
    frozen = stats is not None

    def back(g):
        gg = (g * xhat).sum(axis=(0, 2, 3))
        gb = g.sum(axis=(0, 2, 3))
        gx = None
        if x.requires_grad:
            dxhat = g * gd
            if frozen:
                gx = dxhat * inv
            else:
                gx = inv / m * (m * dxhat - dxhat.sum(axis=axes, keepdims=True)
                                - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        return gx, gg, gb

    return _node(out, (x, gamma, beta), back, "norm")


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running: RunningStats | None = None,
               mode: str = "train", eps: float = BN_EPS) -> Tensor:
    """Per-channel normalization over N, H, W.

    Train mode uses batch statistics and, when ``running`` is given, updates it
    in place (biased mean, unbiased variance).  Eval mode uses ``running``.
    """
    if x.ndim != 4:
        raise ShapeError(f"batch_norm: expected NCHW input, got {x.shape}")
    n, c, h, w = x.shape
    if mode == "train":
        m = n * h * w
        if m < 2:
            raise ShapeError(f"batch_norm: train mode needs N*H*W >= 2 per channel, got {m}")
        out = _normalize(x, gamma, beta, (0, 2, 3), eps)
        if running is not None:
            mu = x.data.mean(axis=(0, 2, 3))
            var = x.data.var(axis=(0, 2, 3)) * m / (m - 1)
            k = running.momentum
            running.mean = (1 - k) * running.mean + k * mu
            running.var = (1 - k) * running.var + k * var
        return out
    if mode == "eval":
        if running is None:
            raise ValueError("batch_norm: eval mode needs running statistics")
        return _normalize(x, gamma, beta, (0, 2, 3), eps, stats=(running.mean, running.var))
    raise ValueError(f"batch_norm: mode must be 'train' or 'eval', got {mode!r}")


def instance_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = BN_EPS) -> Tensor:
    """Normalize each (n, c) plane over H, W, then apply the per-channel affine."""
    if x.ndim != 4:
        raise ShapeError(f"instance_norm: expected NCHW input, got {x.shape}")
    if x.shape[2] * x.shape[3] < 2:
        raise ShapeError(f"instance_norm: spatial plane {x.shape[2:]} has a single element")
    return _normalize(x, gamma, beta, (2, 3), eps)


# -- pooling ---------------------------------------------------------------
def avg_pool(x: Tensor, k, stride=None) -> Tensor:
    kh, kw = _pair(k)
    sh, sw = _pair(stride if stride is not None else k)
    n, c, h, w = x.shape
    if kh > h or kw > w:
        raise ShapeError(f"avg_pool: window {(kh, kw)} larger than input {(h, w)}")
    ho, wo = conv_out_size(h, kh, sh, 0), conv_out_size(w, kw, sw, 0)
    win = sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw][:, :, :ho, :wo]
    out = win.mean(axis=(4, 5))
    area = kh * kw

    def back(g):
        gx = np.zeros(x.shape)
        gs = g / area
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw] += gs
        return (gx,)

    return _node(out, (x,), back, "avg_pool")


def adaptive_matrix(n_in: int, n_out: int) -> np.ndarray:
    """Row i averages input cells [floor(i*n/out), ceil((i+1)*n/out))."""
    if n_out < 1 or n_out > n_in:
        raise ShapeError(f"adaptive_avg_pool: output size {n_out} invalid for input size {n_in}")
    p = np.zeros((n_out, n_in))
    for i in range(n_out):
        lo = (i * n_in) // n_out
        hi = -((-(i + 1) * n_in) // n_out)
        p[i, lo:hi] = 1.0 / (hi - lo)
    return p


def adaptive_avg_pool(x: Tensor, out_h: int, out_w: int) -> Tensor:
    n, c, h, w = x.shape
    ph, pw = adaptive_matrix(h, out_h), adaptive_matrix(w, out_w)
    out = np.einsum("ih,nchw,jw->ncij", ph, x.data, pw, optimize=True)
    return _node(out, (x,),
                 lambda g: (np.einsum("ih,ncij,jw->nchw", ph, g, pw, optimize=True),),
                 "adaptive_avg_pool")


# -- dense -----------------------------------------------------------------
def fully_connected(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for x of shape (N, F), w of shape (F, G)."""
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"fully_connected: input {x.shape} and weight {w.shape} must be 2-D")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"fully_connected: input features {x.shape[1]} != weight rows {w.shape[0]}")
    if b is not None and b.shape != (w.shape[1],):
        raise ShapeError(f"fully_connected: bias shape {b.shape} != ({w.shape[1]},)")
    xd, wd = x.data, w.data
    out = xd @ wd
    if b is not None:
        out = out + b.data

    def back(g):
        grads = (g @ wd.T, xd.T @ g)
        return grads + (g.sum(axis=0),) if b is not None else grads

    parents = (x, w, b) if b is not None else (x, w)
    return _node(out, parents, back, "fully_connected")
