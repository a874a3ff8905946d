"""Dual-encoder autoencoder, physiological estimator and the cross-verified forward pass."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as T
from .layers import (RunningStats, adaptive_avg_pool, batch_norm, conv2d, conv_out_size,
                     fully_connected, instance_norm, transposed_conv2d)
from .losses import loss_cvd, loss_pre, loss_rec
from .tensor import ShapeError, Tensor


@dataclass
class ModelConfig:
    in_channels: int = 6
    input_h: int = 64
    input_w: int = 64
    enc_channels: tuple[int, ...] = (16, 32, 64, 64)
    enc_kernel: int = 3
    enc_stride: int = 2
    dec_kernel: int = 4
    est_channels: tuple[int, ...] = (64, 64)
    rppg_len: int | None = None  # defaults to input_w
    clip_seconds: float = 10.0
    hr_scale: float = 20.0
    hr_init: float = 85.0
    hr_band: tuple[float, float] = (40.0, 180.0)

    def __post_init__(self):
        self.enc_channels = tuple(int(c) for c in self.enc_channels)
        self.est_channels = tuple(int(c) for c in self.est_channels)
        self.hr_band = tuple(float(v) for v in self.hr_band)
        if self.rppg_len is None:
            self.rppg_len = self.input_w

    @property
    def rppg_fs(self) -> float:
        return self.rppg_len / self.clip_seconds

    def feature_shape(self) -> tuple[int, int, int]:
        h, w = self.input_h, self.input_w
        pad = self.enc_kernel // 2
        for _ in self.enc_channels:
            h = conv_out_size(h, self.enc_kernel, self.enc_stride, pad)
            w = conv_out_size(w, self.enc_kernel, self.enc_stride, pad)
        return self.enc_channels[-1], h, w

    def as_dict(self) -> dict:
        d = asdict(self)
        d["enc_channels"] = list(self.enc_channels)
        d["est_channels"] = list(self.est_channels)
        d["hr_band"] = list(self.hr_band)
        return d


@dataclass
class LossWeights:
    rec: float = 50.0
    cvd: float = 10.0
    rppg: float = 2.0

    def __post_init__(self):
        if min(self.rec, self.cvd, self.rppg) < 0:
            raise ValueError(f"loss weights must be >= 0, got {self}")


class Module:
    """Named parameters and batch-norm buffers, with a fixed registration order."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self._params: dict[str, Tensor] = {}
        self._stats: dict[str, RunningStats] = {}

    def param(self, name: str, data: np.ndarray) -> Tensor:
        full = f"{self.prefix}.{name}"
        t = Tensor(data, requires_grad=True, name=full)
        self._params[full] = t
        return t

    def stats(self, name: str, channels: int) -> RunningStats:
        full = f"{self.prefix}.{name}"
        self._stats[full] = RunningStats.zeros(channels)
        return self._stats[full]

    def parameters(self) -> dict[str, Tensor]:
        return dict(self._params)

    def buffers(self) -> dict[str, RunningStats]:
        return dict(self._stats)


def _he(rng, shape, fan_in, gain=1.0):
    return rng.normal(0.0, gain * np.sqrt(2.0 / fan_in), size=shape)


class Encoder(Module):
    """Stride-2 conv blocks, each conv -> batch norm -> ReLU."""

    def __init__(self, prefix: str, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(prefix)
        self.cfg = cfg
        k = cfg.enc_kernel
        self.blocks = []
        cin = cfg.in_channels
        for i, cout in enumerate(cfg.enc_channels):
            w = self.param(f"conv{i}.w", _he(rng, (cout, cin, k, k), cin * k * k))
            b = self.param(f"conv{i}.b", np.zeros(cout))
            g = self.param(f"bn{i}.gamma", np.ones(cout))
            be = self.param(f"bn{i}.beta", np.zeros(cout))
            self.blocks.append((w, b, g, be, self.stats(f"bn{i}", cout)))
            cin = cout

    def __call__(self, x: Tensor, train: bool = True, track: bool = True) -> Tensor:
        cfg = self.cfg
        expect = (cfg.in_channels, cfg.input_h, cfg.input_w)
        if x.ndim != 4 or x.shape[1:] != expect:
            raise ShapeError(f"{self.prefix}: expected input (N, {expect[0]}, {expect[1]}, "
                             f"{expect[2]}), got {x.shape}")
        mode = "train" if train else "eval"
        for w, b, g, be, rs in self.blocks:
            x = conv2d(x, w, b, stride=cfg.enc_stride, padding=cfg.enc_kernel // 2)
            x = T.relu(batch_norm(x, g, be, rs if track or not train else None, mode))
        return x


class Decoder(Module):
    """Transposed-conv blocks with instance norm; the last layer is a linear head."""

    def __init__(self, prefix: str, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(prefix)
        self.cfg = cfg
        k = cfg.dec_kernel
        widths = list(cfg.enc_channels[::-1][1:]) + [cfg.in_channels]
        cin = 2 * cfg.enc_channels[-1]
        self.blocks = []
        for i, cout in enumerate(widths):
            last = i == len(widths) - 1
            w = self.param(f"tconv{i}.w", _he(rng, (cin, cout, k, k), cin * k * k / 4,
                                                gain=0.5 if last else 1.0))
            b = self.param(f"tconv{i}.b", np.zeros(cout))
            norm = None if last else (self.param(f"in{i}.gamma", np.ones(cout)),
                                      self.param(f"in{i}.beta", np.zeros(cout)))
            self.blocks.append((w, b, norm))
            cin = cout
        self._pads = self._paddings()

    def _paddings(self) -> list[tuple[int, int]]:
        # choose (padding, output_padding) so each block exactly undoes its encoder twin
        cfg = self.cfg
        sizes = [(cfg.input_h, cfg.input_w)]
        pad = cfg.enc_kernel // 2
        for _ in cfg.enc_channels:
            h, w = sizes[-1]
            sizes.append((conv_out_size(h, cfg.enc_kernel, cfg.enc_stride, pad),
                          conv_out_size(w, cfg.enc_kernel, cfg.enc_stride, pad)))
        out = []
        s, k = cfg.enc_stride, cfg.dec_kernel
        for (hi, wi), (ho, wo) in zip(sizes[::-1][:-1], sizes[::-1][1:]):
            per_axis = []
            for a, b in ((hi, ho), (wi, wo)):
                base = (a - 1) * s + k - b  # = 2p - op
                p = (base + 1) // 2
                per_axis.append((p, 2 * p - base))
            out.append(tuple(zip(*per_axis)))
        return out

    def __call__(self, f_p: Tensor, f_n: Tensor) -> Tensor:
        if f_p.shape != f_n.shape:
            raise ShapeError(f"decoder: f_p {f_p.shape} and f_n {f_n.shape} differ")
        expect = self.cfg.feature_shape()
        if f_p.shape[1:] != expect:
            raise ShapeError(f"decoder: features must be (N, {expect}), got {f_p.shape}")
        x = T.concat([f_p, f_n], axis=1)
        for (w, b, norm), (pad, opad) in zip(self.blocks, self._pads):
            x = transposed_conv2d(x, w, b, stride=self.cfg.enc_stride, padding=pad,
                                  output_padding=opad)
            if norm is not None:
                x = T.relu(instance_norm(x, *norm))
        return x


class Estimator(Module):
    """Conv trunk with an HR head (global pooling + FC) and an rPPG head (FC over time cells)."""

    def __init__(self, prefix: str, cfg: ModelConfig, rng: np.random.Generator):
        super().__init__(prefix)
        self.cfg = cfg
        cin, _, fw = cfg.feature_shape()
        self.blocks = []
        for i, cout in enumerate(cfg.est_channels):
            w = self.param(f"conv{i}.w", _he(rng, (cout, cin, 3, 3), cin * 9))
            b = self.param(f"conv{i}.b", np.zeros(cout))
            g = self.param(f"bn{i}.gamma", np.ones(cout))
            be = self.param(f"bn{i}.beta", np.zeros(cout))
            self.blocks.append((w, b, g, be, self.stats(f"bn{i}", cout)))
            cin = cout
        self.time_cells = fw
        self.hr_w = self.param("hr.w", rng.normal(0.0, 0.1 / np.sqrt(cin), size=(cin, 1)))
        self.hr_b = self.param("hr.b", np.array([cfg.hr_init]))
        nin = cin * fw
        self.rppg_w = self.param("rppg.w", rng.normal(0.0, 1.0 / np.sqrt(nin), size=(nin, cfg.rppg_len)))
        self.rppg_b = self.param("rppg.b", np.zeros(cfg.rppg_len))

    def __call__(self, f_p: Tensor, train: bool = True,
                 track: bool = True) -> tuple[Tensor, Tensor]:
        expect = self.cfg.feature_shape()
        if f_p.ndim != 4 or f_p.shape[1:] != expect:
            raise ShapeError(f"estimator: features must be (N, {expect}), got {f_p.shape}")
        mode = "train" if train else "eval"
        x = f_p
        for w, b, g, be, rs in self.blocks:
            rs = rs if track or not train else None
            x = T.relu(batch_norm(conv2d(x, w, b, stride=1, padding=1), g, be, rs, mode))
        n, c = x.shape[:2]
        pooled = T.reshape(adaptive_avg_pool(x, 1, 1), (n, c))
        hr = T.scale(fully_connected(pooled, self.hr_w), self.cfg.hr_scale) + self.hr_b
        cells = T.reshape(adaptive_avg_pool(x, 1, self.time_cells), (n, c * self.time_cells))
        s = fully_connected(cells, self.rppg_w, self.rppg_b)
        return T.reshape(hr, (n,)), s


@dataclass
class CvdOutputs:
    m1_rec: Tensor
    m2_rec: Tensor
    m_pse1: Tensor | None
    m_pse2: Tensor | None
    features: dict[str, Tensor]
    hr: dict[str, Tensor]
    s_pre: dict[str, Tensor]
    l_rec: Tensor
    l_cvd: Tensor | None
    l_pre: Tensor
    total: Tensor

    def terms(self) -> dict[str, float]:
        return {"L_rec": self.l_rec.item(),
                "L_CVD": 0.0 if self.l_cvd is None else self.l_cvd.item(),
                "L_pre": self.l_pre.item(), "L": self.total.item()}


class CVDModel:
    def __init__(self, cfg: ModelConfig | None = None, seed: int = 0):
        self.cfg = cfg or ModelConfig()
        rng = np.random.default_rng(seed)
        self.enc_p = Encoder("enc_p", self.cfg, rng)
        self.enc_n = Encoder("enc_n", self.cfg, rng)
        self.dec = Decoder("dec", self.cfg, rng)
        self.est = Estimator("est", self.cfg, rng)

    @property
    def modules(self) -> list[Module]:
        return [self.enc_p, self.enc_n, self.dec, self.est]

    def parameters(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for m in self.modules:
            out.update(m.parameters())
        return out

    def buffers(self) -> dict[str, RunningStats]:
        out: dict[str, RunningStats] = {}
        for m in self.modules:
            out.update(m.buffers())
        return out

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    # -- persistence ----------------------------------------------------------
    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: v.data.copy() for k, v in self.parameters().items()}
        for k, rs in self.buffers().items():
            state[f"{k}.running_mean"] = rs.mean.copy()
            state[f"{k}.running_var"] = rs.var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params, bufs = self.parameters(), self.buffers()
        expected = set(params) | {f"{k}.running_{s}" for k in bufs for s in ("mean", "var")}
        if set(state) != expected:
            missing, extra = expected - set(state), set(state) - expected
            raise ShapeError(f"checkpoint mismatch: missing {sorted(missing)[:5]}, "
                             f"unexpected {sorted(extra)[:5]}")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise ShapeError(f"checkpoint {k}: shape {state[k].shape} != {p.shape}")
            p.data = np.array(state[k], dtype=np.float64)
        for k, rs in bufs.items():
            rs.mean = np.array(state[f"{k}.running_mean"], dtype=np.float64)
            rs.var = np.array(state[f"{k}.running_var"], dtype=np.float64)

    # -- the four building blocks ---------------------------------------------
    def encode(self, m: Tensor, train: bool = True,
               track: bool = True) -> tuple[Tensor, Tensor]:
        """``track=False`` normalises with batch statistics but leaves running stats alone."""
        return self.enc_p(m, train, track), self.enc_n(m, train, track)

    def decode(self, f_p: Tensor, f_n: Tensor) -> Tensor:
        return self.dec(f_p, f_n)

    def estimate(self, f_p: Tensor, train: bool = True,
                 track: bool = True) -> tuple[Tensor, Tensor]:
        return self.est(f_p, train, track)

    def predict(self, m, train: bool = False) -> tuple[np.ndarray, np.ndarray]:
        """HR (bpm) and rPPG waveform for a batch of network-shaped maps."""
        f_p = self.enc_p(T.as_tensor(m), train)
        hr, s = self.est(f_p, train)
        return hr.data.copy(), s.data.copy()


def forward_cvd(model: CVDModel, m1: Tensor, m2: Tensor, hr1, hr2, s1, s2,
                weights: LossWeights | None = None, use_cvd: bool = True,
                use_rppg: bool = True, train: bool = True,
                hr_stopgrad: bool = True) -> CvdOutputs:
    """Pairwise cross-verified pass over a batch of B pairs.

    Reconstructs both maps, decodes the pseudo maps D(f_p1, f_n2) and
    D(f_p2, f_n1), re-encodes them, and runs the shared estimator on all four
    physiological features.  Loss terms average over the B pairs.  With
    ``use_cvd=False`` the pseudo branch is skipped and L_CVD is absent.

    ``hr_stopgrad`` treats HR_i as a constant target inside the HR-consistency
    term of L_CVD (the value is unchanged).  Without it the cheapest way to
    satisfy that term is a constant HR output, and the HR head stalls.
    """
    weights = weights or LossWeights()
    cfg = model.cfg
    b = m1.shape[0]
    if m2.shape != m1.shape:
        raise ShapeError(f"pair maps differ in shape: {m1.shape} vs {m2.shape}")
    hr1, hr2 = np.asarray(hr1, float).reshape(b), np.asarray(hr2, float).reshape(b)
    s1, s2 = np.asarray(s1, float).reshape(b, -1), np.asarray(s2, float).reshape(b, -1)
    x = T.concat([m1, m2], axis=0)
    f_p, f_n = model.encode(x, train)
    f_p1, f_p2 = f_p[:b], f_p[b:]
    f_n1, f_n2 = f_n[:b], f_n[b:]
    feats = {"f_p1": f_p1, "f_p2": f_p2, "f_n1": f_n1, "f_n2": f_n2}

    if use_cvd:
        dec_p = T.concat([f_p, f_p], axis=0)
        dec_n = T.concat([f_n, f_n2, f_n1], axis=0)
        out = model.decode(dec_p, dec_n)
        rec, pse = out[:2 * b], out[2 * b:]
        # pseudo maps must not leak into the running stats used on real maps
        f_pse_p, f_pse_n = model.encode(pse, train, track=False)
        feats.update(f_pse_p1=f_pse_p[:b], f_pse_p2=f_pse_p[b:],
                     f_pse_n1=f_pse_n[:b], f_pse_n2=f_pse_n[b:])
        est_in = (f_p, f_pse_p)
        hr_gt = np.concatenate([hr1, hr2, hr1, hr2])
        s_gt = np.concatenate([s1, s2, s1, s2])
        names = ("1", "2", "pse1", "pse2")
    else:
        rec, pse = model.decode(f_p, f_n), None
        est_in = (f_p,)
        hr_gt = np.concatenate([hr1, hr2])
        s_gt = np.concatenate([s1, s2])
        names = ("1", "2")

    # originals and pseudo features get separate batch statistics
    heads = [model.estimate(f, train, track=i == 0) for i, f in enumerate(est_in)]
    hr_all = T.concat([h for h, _ in heads], axis=0)
    s_all = T.concat([s for _, s in heads], axis=0)
    hr = {n: hr_all[i * b:(i + 1) * b] for i, n in enumerate(names)}
    s_pre = {n: s_all[i * b:(i + 1) * b] for i, n in enumerate(names)}

    m1_rec, m2_rec = rec[:b], rec[b:]
    l_rec = loss_rec(m1, m2, m1_rec, m2_rec, weights.rec)
    l_cvd = None
    if use_cvd:
        l_cvd = loss_cvd(feats["f_p1"], feats["f_p2"], feats["f_pse_p1"], feats["f_pse_p2"],
                         feats["f_n1"], feats["f_n2"], feats["f_pse_n1"], feats["f_pse_n2"],
                         *(hr[k].detach() if hr_stopgrad else hr[k] for k in ("1", "2")),
                         hr["pse1"], hr["pse2"], weights.cvd)
    l_pre = T.scale(loss_pre(hr_all, hr_gt, s_all if use_rppg else None, s_gt, cfg.rppg_fs,
                             weights.rppg, cfg.hr_band), 1.0 / b)
    total = l_rec + l_pre if l_cvd is None else l_rec + l_cvd + l_pre
    return CvdOutputs(m1_rec, m2_rec, None if pse is None else pse[:b],
                      None if pse is None else pse[b:], feats, hr, s_pre,
                      l_rec, l_cvd, l_pre, total)
