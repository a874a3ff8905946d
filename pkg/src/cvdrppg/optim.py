"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import NonFiniteError, ShapeError, Tensor


@dataclass
class AdamState:
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def init(self, params: list[Tensor]) -> "AdamState":
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]
        self.t = 0
        return self


def adam_step(params: list[Tensor], grads: list[np.ndarray | None], state: AdamState) -> AdamState:
    """Update ``params`` in place (their ``.data`` is replaced) and advance ``state``.

    A ``None`` gradient is treated as zero.  Any NaN/Inf gradient aborts the
    step before a single parameter is touched.
    """
    if not state.m:
        state.init(params)
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError(f"adam_step: {len(params)} params, {len(grads)} grads, "
                         f"{len(state.m)} moment slots")
    gs = []
    for i, (p, g) in enumerate(zip(params, grads)):
        g = np.zeros(p.shape) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape or state.m[i].shape != p.shape:
            raise ShapeError(f"adam_step: param {i} ({p.name}) shape {p.shape}, grad {g.shape}")
        if not np.isfinite(g).all():
            raise NonFiniteError(f"adam_step: non-finite gradient for param {i} ({p.name}) "
                                 f"at step {state.t + 1}")
        gs.append(g)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for i, (p, g) in enumerate(zip(params, gs)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        mhat = state.m[i] / c1
        vhat = state.v[i] / c2
        p.data = p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return state
