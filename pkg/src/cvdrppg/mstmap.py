"""Multi-scale spatial-temporal maps from per-frame ROI colour statistics.

Map layout is ``[rows, T, 6]`` with channels R, G, B, Y, U, V.  Row ``k``
holds the region subset whose bitmask is ``k + 1`` (bit ``i`` set means region
``i`` is in the subset).
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

CHANNELS = ("R", "G", "B", "Y", "U", "V")
ORDERING = "bitmask-ascending"
CONSTANT_ROW_VALUE = 127.5
MAX_REGIONS = 16

# BT.601 full range; U and V carry a +128 offset
YUV_MATRIX = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
YUV_OFFSET = np.array([0.0, 128.0, 128.0])


class RoiError(ValueError):
    pass


@dataclass
class RoiFrame:
    """Regions for one frame.  Each region is a boolean mask or an (x, y, w, h) box."""
    frame_index: int
    regions: list

    @property
    def n(self) -> int:
        return len(self.regions)

    def masks(self, height: int, width: int) -> list[np.ndarray]:
        out = []
        for i, reg in enumerate(self.regions):
            if isinstance(reg, np.ndarray) and reg.dtype == bool:
                if reg.shape != (height, width):
                    raise RoiError(f"frame {self.frame_index} region {i}: mask shape {reg.shape} "
                                   f"!= frame {(height, width)}")
                m = reg
            else:
                x, y, w, h = (int(v) for v in reg)
                if x < 0 or y < 0 or w < 1 or h < 1 or x + w > width or y + h > height:
                    raise RoiError(f"frame {self.frame_index} region {i}: box {(x, y, w, h)} "
                                   f"outside frame {width}x{height}")
                m = np.zeros((height, width), dtype=bool)
                m[y:y + h, x:x + w] = True
            if not m.any():
                raise RoiError(f"frame {self.frame_index} region {i} is empty")
            out.append(m)
        return out


@dataclass
class RegionStats:
    """Per-region channel sums, shape (n, 6), and pixel counts, shape (n,)."""
    sums: np.ndarray
    counts: np.ndarray


@dataclass
class MSTMap:
    values: np.ndarray  # rows x T x 6
    fps: float
    n: int
    ordering: str = ORDERING

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]

    def sidecar(self) -> dict:
        return {"fps": self.fps, "n": self.n, "ordering": self.ordering,
                "channels": list(CHANNELS), "shape": list(self.values.shape)}


@dataclass
class VideoClip:
    frames: np.ndarray  # T x H x W x 3, uint8
    fps: float
    rois: list[RoiFrame] = field(default_factory=list)

    def __post_init__(self):
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")
        if len(self.rois) != len(self.frames):
            raise RoiError(f"{len(self.frames)} frames but {len(self.rois)} ROI frames")


def rgb_to_yuv(r, g, b):
    """BT.601 full-range YUV, clamped to [0, 255]. Works on scalars or arrays."""
    rgb = np.stack(np.broadcast_arrays(np.asarray(r, float), np.asarray(g, float),
                                       np.asarray(b, float)), axis=-1)
    yuv = np.clip(rgb @ YUV_MATRIX.T + YUV_OFFSET, 0.0, 255.0)
    if yuv.ndim == 1:
        return tuple(float(v) for v in yuv)
    return yuv[..., 0], yuv[..., 1], yuv[..., 2]


def smooth_landmarks(series, window: int = 5) -> np.ndarray:
    """Centered moving average along time; edges average over the truncated window.

    ``series`` has shape (T, points, 2) or any (T, ...) shape.
    """
    arr = np.asarray(series, dtype=float)
    if arr.size == 0 or arr.shape[0] == 0:
        raise ValueError("smooth_landmarks: empty series")
    if window < 1 or window % 2 == 0:
        raise ValueError(f"smooth_landmarks: window must be odd and >= 1, got {window}")
    if window > arr.shape[0]:
        raise ValueError(f"smooth_landmarks: window {window} longer than series {arr.shape[0]}")
    half = window // 2
    n = arr.shape[0]
    return np.stack([arr[max(t - half, 0):min(t + half + 1, n)].mean(axis=0) for t in range(n)])


def region_channel_stats(frame: np.ndarray, rois: RoiFrame) -> RegionStats:
    frame = np.asarray(frame)
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"frame must be H x W x 3, got {frame.shape}")
    h, w = frame.shape[:2]
    rgb = frame.astype(np.float64)
    yuv = np.stack(rgb_to_yuv(rgb[..., 0], rgb[..., 1], rgb[..., 2]), axis=-1)
    six = np.concatenate([rgb, yuv], axis=-1)
    masks = rois.masks(h, w)
    sums = np.stack([six[m].sum(axis=0) for m in masks])
    counts = np.array([int(m.sum()) for m in masks])
    return RegionStats(sums, counts)


def subset_masks(n: int) -> np.ndarray:
    """Boolean (2^n - 1, n) membership table in ascending bitmask order."""
    if not 1 <= n <= MAX_REGIONS:
        raise ValueError(f"region count must be in [1, {MAX_REGIONS}], got {n}")
    bits = np.arange(1, 2 ** n)[:, None]
    return (bits >> np.arange(n)[None, :]) & 1 == 1


def subset_signals(stats_over_time: Sequence[RegionStats]) -> np.ndarray:
    """Pixel-weighted mean over every non-empty region subset -> (2^n - 1, T, 6)."""
    if len(stats_over_time) == 0:
        raise ValueError("subset_signals: need at least one frame")
    sums = np.stack([s.sums for s in stats_over_time])  # T, n, 6
    counts = np.stack([s.counts for s in stats_over_time]).astype(np.float64)  # T, n
    if (counts <= 0).any():
        raise RoiError("subset_signals: every region needs a positive pixel count")
    member = subset_masks(sums.shape[1]).astype(np.float64)  # S, n
    num = np.einsum("sn,tnc->stc", member, sums)
    den = counts @ member.T  # T, S
    return num / den.T[:, :, None]


def minmax_normalize_rows(raw: np.ndarray) -> np.ndarray:
    """Scale every (row, channel) time series to [0, 255]; constant ones become 127.5."""
    raw = np.asarray(raw, dtype=np.float64)
    lo = raw.min(axis=1, keepdims=True)
    hi = raw.max(axis=1, keepdims=True)
    span = hi - lo
    flat = span == 0
    out = (raw - lo) / np.where(flat, 1.0, span) * 255.0
    return np.where(flat, CONSTANT_ROW_VALUE, out)


def build_mstmap(clip: VideoClip) -> MSTMap:
    if len(clip.frames) == 0:
        raise ValueError("build_mstmap: empty clip")
    n = clip.rois[0].n
    stats = []
    for frame, roi in zip(clip.frames, clip.rois):
        if roi.n != n:
            raise RoiError(f"frame {roi.frame_index} has {roi.n} regions, expected {n}")
        stats.append(region_channel_stats(frame, roi))
    return MSTMap(minmax_normalize_rows(subset_signals(stats)), clip.fps, n)


def _bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    # half-pixel centers (align_corners=False), edge-clamped
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    a = np.zeros((n_out, n_in))
    a[np.arange(n_out), lo] += 1.0 - frac
    a[np.arange(n_out), hi] += frac
    return a


def resize_mstmap(values: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a [rows, T, C] map to [out_h, out_w, C].

    Sample centers follow the half-pixel convention (align_corners=False) with
    edge clamping, so resizing to the same size is the identity.
    """
    if out_h < 1 or out_w < 1:
        raise ValueError(f"resize_mstmap: output size must be >= 1, got {(out_h, out_w)}")
    values = np.asarray(values, dtype=np.float64)
    ah = _bilinear_matrix(values.shape[0], out_h)
    aw = _bilinear_matrix(values.shape[1], out_w)
    return np.einsum("ir,rtc,jt->ijc", ah, values, aw, optimize=True)


def flip_augment(values: np.ndarray, horizontal: bool = False, vertical: bool = False,
                 rng: np.random.Generator | None = None) -> tuple[np.ndarray, bool, bool]:
    """Reverse time (horizontal) and/or rows (vertical) of a [rows, T, ...] map.

    With ``rng`` each enabled flip fires with probability 1/2.  Returns the map
    and the flips actually applied so labels can follow along.
    """
    if rng is not None:
        horizontal = bool(horizontal and rng.random() < 0.5)
        vertical = bool(vertical and rng.random() < 0.5)
    out = values
    if horizontal:
        out = out[:, ::-1]
    if vertical:
        out = out[::-1]
    return np.ascontiguousarray(out), horizontal, vertical


# -- file I/O ----------------------------------------------------------------
def load_rois(path) -> tuple[float, list[RoiFrame]]:
    """Parse a ROI JSON document ``{fps, frames: [{index, regions: [...]}]}``."""
    path = Path(path)
    doc = json.loads(path.read_text())
    frames = []
    for fr in doc["frames"]:
        regions = []
        for reg in fr["regions"]:
            if "box" in reg:
                regions.append(tuple(reg["box"]))
            elif "mask_file" in reg:
                regions.append(read_image(path.parent / reg["mask_file"])[..., 0] > 0)
            else:
                raise RoiError(f"frame {fr['index']}: region needs 'box' or 'mask_file'")
        frames.append(RoiFrame(int(fr["index"]), regions))
    return float(doc["fps"]), frames


def read_ppm(path) -> np.ndarray:
    """Binary (P6) or ASCII (P3) 8-bit PPM -> H x W x 3 uint8."""
    data = Path(path).read_bytes()
    tokens: list[bytes] = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    magic, w, h, maxval = tokens[0], int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported (maxval {maxval})")
    if magic == b"P6":
        raw = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    elif magic == b"P3":
        raw = np.array(data[pos:].split()[: w * h * 3], dtype=np.uint8)
    else:
        raise ValueError(f"{path}: unsupported PPM magic {magic!r}")
    return raw.reshape(h, w, 3).copy()


def write_ppm(path, frame: np.ndarray) -> None:
    frame = np.asarray(frame, dtype=np.uint8)
    h, w = frame.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + frame.tobytes())


def read_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() in (".ppm", ".pnm"):
        return read_ppm(path)
    from PIL import Image  # PNG is optional
    return np.asarray(Image.open(path).convert("RGB"))


def _frame_key(p: Path):
    digits = re.findall(r"\d+", p.stem)
    return (int(digits[-1]) if digits else -1, p.name)


def load_frames(directory) -> np.ndarray:
    files = sorted((p for p in Path(directory).iterdir()
                    if p.suffix.lower() in (".ppm", ".pnm", ".png")), key=_frame_key)
    if not files:
        raise FileNotFoundError(f"no PPM/PNG frames in {directory}")
    return np.stack([read_image(p) for p in files])


def save_mstmap(path, mst: MSTMap) -> None:
    from .container import save_tensor
    path = Path(path)
    save_tensor(path, mst.values)
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(mst.sidecar(), indent=2))


def load_mstmap(path) -> MSTMap:
    from .container import load_tensor
    path = Path(path)
    values = load_tensor(path)
    side = path.with_suffix(path.suffix + ".json")
    meta = json.loads(side.read_text()) if side.exists() else {}
    n = meta.get("n", int(np.log2(values.shape[0] + 1)))
    return MSTMap(values, float(meta.get("fps", 30.0)), int(n), meta.get("ordering", ORDERING))
