"""Central finite-difference gradient checks."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, backward


def max_rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-7) -> float:
    """max_i |a_i - n_i| / max(|a_i|, |n_i|, floor * max|n|, 1e-12).

    The floor keeps entries whose true gradient is ~0 from turning rounding noise
    into huge relative errors.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    scale = floor * max(np.abs(n).max(), np.abs(a).max())
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), max(scale, 1e-12))
    return float((np.abs(a - n) / denom).max())


def numeric_grad(f: Callable[[], float], arr: np.ndarray, h: float = 1e-5,
                 indices: Sequence[tuple[int, ...]] | None = None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``arr`` (perturbed in place, then restored)."""
    out = np.zeros_like(arr) if indices is None else np.zeros(len(indices))
    it = np.ndindex(arr.shape) if indices is None else indices
    for k, idx in enumerate(it):
        old = arr[idx]
        arr[idx] = old + h
        fp = f()
        arr[idx] = old - h
        fm = f()
        arr[idx] = old
        val = (fp - fm) / (2.0 * h)
        if indices is None:
            out[idx] = val
        else:
            out[k] = val
    return out


def check_gradients(fn: Callable[..., Tensor], inputs: Sequence[np.ndarray], h: float = 1e-5,
                    wrt: Sequence[int] | None = None) -> list[float]:
    """Compare backprop with finite differences for ``fn(*tensors) -> scalar``.

    Returns the max relative error for every checked input.
    """
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    wrt = range(len(arrays)) if wrt is None else wrt
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    loss = fn(*tensors)
    backward(loss)
    errs = []
    for i in wrt:
        def f():
            return fn(*[Tensor(a) for a in arrays]).item()
        num = numeric_grad(f, arrays[i], h)
        ana = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(arrays[i])
        errs.append(max_rel_error(ana, num))
    return errs
