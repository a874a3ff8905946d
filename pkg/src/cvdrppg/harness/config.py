"""Training configuration and its flat ``key = value`` file format."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ..model import LossWeights, ModelConfig


@dataclass
class TrainConfig:
    lr: float = 0.0005
    lr_decay: float = 0.1      # multiplier applied once, after lr_decay_at * epochs
    lr_decay_at: float = 0.8
    epochs: int = 30
    batch_pairs: int = 4
    lambda_rec: float = 50.0
    lambda_cvd: float = 10.0
    lambda_rppg: float = 2.0
    use_cvd: bool = True
    use_rppg: bool = True
    cvd_hr_stopgrad: bool = True
    clip_len: int = 300
    fps: float = 30.0
    input_h: int = 64
    input_w: int = 64
    enc_channels: tuple = (16, 32, 64, 64)
    est_channels: tuple = (64, 64)
    hr_scale: float = 20.0
    hr_band: tuple = (40.0, 180.0)
    flip_h: bool = True
    flip_v: bool = True
    balance: bool = False
    balance_bin: float = 5.0
    pair_cross_noise: bool = False
    seed: int = 0
    checkpoint_every: int = 0  # epochs; 0 = final only
    eval_every: int = 1        # epochs; 0 = never during training

    def __post_init__(self):
        self.enc_channels = tuple(int(v) for v in self.enc_channels)
        self.est_channels = tuple(int(v) for v in self.est_channels)
        self.hr_band = tuple(float(v) for v in self.hr_band)
        self.validate()

    def validate(self) -> None:
        for k in ("lr", "epochs", "batch_pairs", "clip_len", "fps", "input_h", "input_w", "hr_scale"):
            if getattr(self, k) <= 0:
                raise ValueError(f"{k} must be positive, got {getattr(self, k)}")
        for k in ("lambda_rec", "lambda_cvd", "lambda_rppg"):
            if getattr(self, k) < 0:
                raise ValueError(f"{k} must be >= 0, got {getattr(self, k)}")
        if not 0 < self.lr_decay <= 1 or not 0 <= self.lr_decay_at <= 1:
            raise ValueError(f"lr_decay must be in (0, 1] and lr_decay_at in [0, 1], "
                             f"got {self.lr_decay}, {self.lr_decay_at}")
        if not self.hr_band[0] < self.hr_band[1]:
            raise ValueError(f"hr_band must be increasing, got {self.hr_band}")

    def model_config(self, hr_init: float | None = None) -> ModelConfig:
        return ModelConfig(input_h=self.input_h, input_w=self.input_w,
                           enc_channels=self.enc_channels, est_channels=self.est_channels,
                           clip_seconds=self.clip_len / self.fps, hr_scale=self.hr_scale,
                           hr_init=hr_init if hr_init is not None else sum(self.hr_band) / 2,
                           hr_band=self.hr_band)

    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_rec, self.lambda_cvd, self.lambda_rppg)

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def lr_at(self, epoch: int) -> float:
        """Learning rate for a 1-based epoch: one step decay late in training."""
        return self.lr * (self.lr_decay if epoch > round(self.lr_decay_at * self.epochs) else 1.0)


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (tuple, list)):
        return ", ".join(_format(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse(text: str, like):
    text = text.strip()
    if isinstance(like, bool):
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(like, tuple):
        elem = like[0] if like else 0.0
        return tuple(_parse(p, elem) for p in text.split(",") if p.strip())
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    return text


def dump_config(cfg: TrainConfig) -> str:
    return "".join(f"{f.name} = {_format(getattr(cfg, f.name))}\n" for f in fields(cfg))


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    base = base or TrainConfig()
    values = {}
    known = {f.name for f in fields(base)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in known:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse(val, getattr(base, key))
    return base.replace(**values)


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


def save_config(path, cfg: TrainConfig) -> None:
    Path(path).write_text(dump_config(cfg))
