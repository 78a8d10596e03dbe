"""Video containers, the synthetic moving-shape dataset, and clip augmentation.

Videos are ``T x H x W x C`` arrays.  On disk they live in a small binary
container::

    b"VIDT" | version:u8 | T,H,W,C:u32le | dtype:u8 | row-major payload

dtype byte 0 is uint8 in [0, 255], 1 is float32 in [0, 1].
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vid.errors import FormatError

MAGIC = b"VIDT"
VERSION = 1
_HEADER = struct.Struct("<4sB4IB")
_DTYPES = {0: np.dtype(np.uint8), 1: np.dtype("<f4")}
_DTYPE_CODES = {np.dtype(np.uint8): 0, np.dtype(np.float32): 1}
_DEFAULT_RANGE = {np.dtype(np.uint8): (0.0, 255.0)}

SHAPE_KINDS = ("square", "disc", "triangle", "diamond")


@dataclass
class VideoTensor:
    frames: np.ndarray
    value_range: tuple[float, float] | None = None

    def __post_init__(self):
        f = self.frames
        if f.ndim != 4:
            raise ValueError(f"expected T x H x W x C frames, got shape {f.shape}")
        if f.shape[0] < 1 or f.shape[3] not in (1, 3):
            raise ValueError(f"need T >= 1 and C in (1, 3), got shape {f.shape}")
        if self.value_range is None:
            self.value_range = _DEFAULT_RANGE.get(f.dtype, (0.0, 1.0))
        lo, hi = self.value_range
        if f.size and (f.min() < lo or f.max() > hi):
            raise ValueError(f"values outside declared range [{lo}, {hi}]")

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.frames.shape

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def take(self, indices) -> "VideoTensor":
        """Select frames by 1-based index."""
        idx = np.asarray(indices, dtype=np.int64) - 1
        if idx.min() < 0 or idx.max() >= self.num_frames:
            raise IndexError("frame index outside video")
        return VideoTensor(self.frames[idx], self.value_range)

    def as_float(self) -> "VideoTensor":
        """Float32 copy in [0, 1]."""
        if self.frames.dtype == np.uint8:
            return VideoTensor(self.frames.astype(np.float32) / 255.0, (0.0, 1.0))
        return VideoTensor(self.frames.astype(np.float32), self.value_range)


def write_video(v: VideoTensor, path) -> None:
    frames = v.frames
    code = _DTYPE_CODES.get(frames.dtype)
    if code is None:
        raise FormatError(f"unsupported dtype {frames.dtype}")
    if code == 1 and tuple(v.value_range) != (0.0, 1.0):
        raise FormatError("float videos must be stored in [0, 1]")
    header = _HEADER.pack(MAGIC, VERSION, *frames.shape, code)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(frames, dtype=_DTYPES[code]).tobytes())


def read_video(path) -> VideoTensor:
    blob = Path(path).read_bytes()
    if len(blob) < _HEADER.size:
        raise FormatError("malformed header: file too short")
    magic, version, t, h, w, c, code = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"malformed header: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    if code not in _DTYPES:
        raise FormatError(f"malformed header: unknown dtype code {code}")
    dtype = _DTYPES[code]
    expected = t * h * w * c * dtype.itemsize
    payload = blob[_HEADER.size :]
    if len(payload) != expected:
        raise FormatError(
            f"truncated payload: header needs {expected} bytes, found {len(payload)}"
        )
    frames = np.frombuffer(payload, dtype=dtype).reshape(t, h, w, c).copy()
    if code == 1:
        frames = frames.astype(np.float32)
    return VideoTensor(frames)


# -- manifest -----------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    class_id: int
    num_frames: int

    @property
    def video_id(self) -> str:
        return Path(self.path).stem


def write_manifest(entries, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for e in entries:
            w.writerow([e.path, e.class_id, e.num_frames])


def read_manifest(path) -> list[ManifestEntry]:
    """Rows of ``path,class_id,T``; relative paths resolve against the manifest."""
    base = Path(path).parent
    out = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or row[0].startswith("#"):
                continue
            if len(row) != 3:
                raise FormatError(f"{path}:{lineno}: expected path,class_id,T")
            p = Path(row[0])
            if not p.is_absolute():
                p = base / p
            out.append(ManifestEntry(str(p), int(row[1]), int(row[2])))
    return out


# -- synthetic moving shapes ----------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    """Moving-shape videos whose class is defined by shape and motion.

    Class ``c`` moves in direction ``2*pi*c/num_classes`` at a speed that
    alternates between ``speeds``.  With ``shape_by_class`` its shape is
    ``shape_kinds[c % len]``; otherwise each video draws a shape at random,
    so only motion identifies the class.  Colour, start position and
    background noise vary per video.
    """

    num_classes: int = 8
    frames_per_video: int = 48
    height: int = 32
    width: int = 32
    channels: int = 3
    shape_kinds: tuple[str, ...] = SHAPE_KINDS
    shape_radius: int = 4
    speeds: tuple[float, ...] = (1.0, 2.0)
    speed_jitter: float = 0.1
    noise_std: float = 4.0
    shape_by_class: bool = True
    seed: int = 0

    def __post_init__(self):
        unknown = set(self.shape_kinds) - set(SHAPE_KINDS)
        if unknown:
            raise ValueError(f"unknown shape kinds {sorted(unknown)}")
        if 2 * self.shape_radius + 1 > min(self.height, self.width):
            raise ValueError("shape larger than the frame")

    def class_velocity(self, class_id: int) -> tuple[float, float]:
        angle = 2 * math.pi * class_id / self.num_classes
        speed = self.speeds[class_id % len(self.speeds)]
        return speed * math.sin(angle), speed * math.cos(angle)

    def class_shape(self, class_id: int) -> str:
        return self.shape_kinds[class_id % len(self.shape_kinds)]


def trajectory(start, velocity, num_frames: int, lo, hi) -> np.ndarray:
    """Constant-velocity positions with mirror reflection at ``lo``/``hi``.

    Returns an array of shape ``(num_frames, ndim)``.
    """
    pos = np.array(start, dtype=np.float64)
    vel = np.array(velocity, dtype=np.float64)
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), pos.shape)
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), pos.shape)
    out = np.empty((num_frames, pos.size))
    for t in range(num_frames):
        out[t] = pos
        pos = pos + vel
        # a single fold suffices while |velocity| < hi - lo
        over, under = pos > hi, pos < lo
        pos = np.where(over, 2 * hi - pos, np.where(under, 2 * lo - pos, pos))
        vel = np.where(over | under, -vel, vel)
    return out


def _shape_mask(kind: str, cy: float, cx: float, r: float, h: int, w: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if kind == "square":
        return (np.abs(dy) <= r) & (np.abs(dx) <= r)
    if kind == "disc":
        return dy * dy + dx * dx <= r * r
    if kind == "diamond":
        return np.abs(dy) + np.abs(dx) <= r
    if kind == "triangle":
        # apex up, base at dy = +r
        return (dy <= r) & (dy >= -r) & (np.abs(dx) <= (dy + r) / 2)
    raise ValueError(f"unknown shape kind {kind!r}")


def gen_synthetic(spec: SyntheticSpec, class_id: int, rng: np.random.Generator) -> VideoTensor:
    if not 0 <= class_id < spec.num_classes:
        raise ValueError(f"class_id {class_id} outside [0, {spec.num_classes})")
    h, w, r = spec.height, spec.width, spec.shape_radius
    lo, hi = (r, r), (h - 1 - r, w - 1 - r)
    start = (rng.uniform(lo[0], hi[0]), rng.uniform(lo[1], hi[1]))
    vel = np.array(spec.class_velocity(class_id))
    vel = vel * (1.0 + rng.uniform(-spec.speed_jitter, spec.speed_jitter))
    color = rng.uniform(120, 255, size=spec.channels)
    background = rng.uniform(0, 60, size=spec.channels)
    centers = trajectory(start, vel, spec.frames_per_video, lo, hi)
    if spec.shape_by_class:
        kind = spec.class_shape(class_id)
    else:
        kind = spec.shape_kinds[int(rng.integers(len(spec.shape_kinds)))]

    frames = np.empty((spec.frames_per_video, h, w, spec.channels), dtype=np.float64)
    frames[:] = background
    for t, (cy, cx) in enumerate(centers):
        frames[t][_shape_mask(kind, cy, cx, r, h, w)] = color
    frames += rng.normal(0.0, spec.noise_std, size=frames.shape)
    return VideoTensor(np.clip(np.rint(frames), 0, 255).astype(np.uint8))


def gen_dataset(
    spec: SyntheticSpec, videos_per_class: int, out_dir=None
) -> tuple[list[VideoTensor], list[int], list[ManifestEntry]]:
    """Generate a balanced dataset; optionally write VIDT files and a manifest.

    Each video has its own RNG stream spawned from ``spec.seed`` so any one
    can be regenerated in isolation.
    """
    n = spec.num_classes * videos_per_class
    streams = np.random.SeedSequence(spec.seed).spawn(n)
    videos, labels, entries = [], [], []
    for i in range(n):
        cls = i % spec.num_classes
        v = gen_synthetic(spec, cls, np.random.default_rng(streams[i]))
        videos.append(v)
        labels.append(cls)
        name = f"video_{i:05d}.vidt"
        entries.append(ManifestEntry(name, cls, v.num_frames))
        if out_dir is not None:
            write_video(v, Path(out_dir) / name)
    if out_dir is not None:
        write_manifest(entries, Path(out_dir) / "manifest.csv")
    return videos, labels, entries


# -- augmentation ---------------------------------------------------------------


@dataclass(frozen=True)
class AugmentConfig:
    brightness_range: tuple[float, float] = (0.2, 1.8)
    contrast_range: tuple[float, float] = (0.2, 1.8)
    saturation_range: tuple[float, float] = (0.2, 1.8)
    hue_range: tuple[float, float] = (-0.2, 0.2)
    crop_size: tuple[int, int] = (28, 28)
    flip_prob: float = 0.5
    enabled: bool = True
    per_frame: bool = False

    def __post_init__(self):
        for name in ("brightness_range", "contrast_range", "saturation_range", "hue_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} is empty: [{lo}, {hi}]")
        if not 0.0 <= self.flip_prob <= 1.0:
            raise ValueError("flip_prob must be a probability")


@dataclass(frozen=True)
class JitterFactors:
    """Per-frame factors, each an array of length T."""

    brightness: np.ndarray
    contrast: np.ndarray
    saturation: np.ndarray
    hue: np.ndarray = field(repr=False)


def draw_jitter(cfg: AugmentConfig, num_frames: int, rng: np.random.Generator) -> JitterFactors:
    n = num_frames if cfg.per_frame else 1

    def draw(r):
        vals = rng.uniform(r[0], r[1], size=n)
        return np.broadcast_to(vals, (num_frames,)).copy()

    return JitterFactors(
        draw(cfg.brightness_range),
        draw(cfg.contrast_range),
        draw(cfg.saturation_range),
        draw(cfg.hue_range),
    )


def _gray(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] == 1:
        return x
    return (x @ np.array([0.299, 0.587, 0.114], dtype=x.dtype))[..., None]


def _hue_rotation(theta: float) -> np.ndarray:
    # rotation by theta about the grey axis (1, 1, 1)/sqrt(3)
    c, s = math.cos(theta), math.sin(theta)
    k = 1.0 / math.sqrt(3.0)
    ux = np.array([[0, -k, k], [k, 0, -k], [-k, k, 0]])
    uu = np.full((3, 3), k * k)
    return c * np.eye(3) + s * ux + (1 - c) * uu


def apply_jitter(v: VideoTensor, factors: JitterFactors) -> VideoTensor:
    x = v.as_float().frames
    t = x.shape[0]
    x = np.clip(x * factors.brightness.reshape(t, 1, 1, 1).astype(x.dtype), 0.0, 1.0)
    mean = _gray(x).mean(axis=(1, 2, 3), keepdims=True)
    c = factors.contrast.reshape(t, 1, 1, 1).astype(x.dtype)
    x = np.clip((x - mean) * c + mean, 0.0, 1.0)
    if x.shape[-1] == 3:
        g = _gray(x)
        s = factors.saturation.reshape(t, 1, 1, 1).astype(x.dtype)
        x = np.clip((x - g) * s + g, 0.0, 1.0)
        if np.any(factors.hue != 0.0):
            uniq, inv = np.unique(factors.hue, return_inverse=True)
            rots = np.stack([_hue_rotation(2 * math.pi * h).T for h in uniq]).astype(x.dtype)
            rot = rots[inv.ravel()]
            x = np.clip(np.matmul(x.reshape(t, -1, 3), rot).reshape(x.shape), 0.0, 1.0)
    return VideoTensor(x.astype(np.float32, copy=False), (0.0, 1.0))


def jitter(v: VideoTensor, cfg: AugmentConfig, rng: np.random.Generator) -> VideoTensor:
    if not cfg.enabled:
        return v
    return apply_jitter(v, draw_jitter(cfg, v.num_frames, rng))


def _check_crop(v: VideoTensor, size: tuple[int, int]) -> None:
    ch, cw = size
    _, h, w, _ = v.shape
    if ch > h or cw > w:
        raise ValueError(f"crop {ch}x{cw} larger than frame {h}x{w}")


def crop(v: VideoTensor, cfg: AugmentConfig, rng: np.random.Generator) -> VideoTensor:
    """Random crop, same window for every frame."""
    _check_crop(v, cfg.crop_size)
    ch, cw = cfg.crop_size
    _, h, w, _ = v.shape
    y = int(rng.integers(0, h - ch + 1))
    x = int(rng.integers(0, w - cw + 1))
    return VideoTensor(v.frames[:, y : y + ch, x : x + cw], v.value_range)


def center_crop(v: VideoTensor, size: tuple[int, int]) -> VideoTensor:
    _check_crop(v, size)
    ch, cw = size
    _, h, w, _ = v.shape
    y, x = (h - ch) // 2, (w - cw) // 2
    return VideoTensor(v.frames[:, y : y + ch, x : x + cw], v.value_range)


def hflip(v: VideoTensor, cfg: AugmentConfig, rng: np.random.Generator) -> VideoTensor:
    """Mirror every frame left-right with probability ``cfg.flip_prob``."""
    if rng.random() < cfg.flip_prob:
        return VideoTensor(v.frames[:, :, ::-1].copy(), v.value_range)
    return v


def normalize(v: VideoTensor) -> VideoTensor:
    """Float32 clip shifted to zero mean per channel; values span at most 1."""
    x = v.as_float().frames
    x = x - x.mean(axis=(0, 1, 2), keepdims=True)
    return VideoTensor(x.astype(np.float32), (-1.0, 1.0))


def augment(v: VideoTensor, cfg: AugmentConfig, rng: np.random.Generator) -> VideoTensor:
    """Training pipeline for one assembled clip: jitter, crop, flip, normalize.

    ``cfg.enabled`` switches colour jitter only; crop and flip always apply.
    """
    return normalize(hflip(crop(jitter(v, cfg, rng), cfg, rng), cfg, rng))


def preprocess_eval(v: VideoTensor, cfg: AugmentConfig) -> VideoTensor:
    """Deterministic evaluation path: centre crop and normalize."""
    return normalize(center_crop(v, cfg.crop_size))


def to_model_input(clips: list[VideoTensor]) -> np.ndarray:
    """Stack T x H x W x C clips into an N x C x T x H x W array."""
    return np.stack([c.frames for c in clips]).transpose(0, 4, 1, 2, 3)
