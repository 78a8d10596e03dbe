"""Self-supervised pretraining loop and feature extraction."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from vid.data import (
    AugmentConfig,
    VideoTensor,
    augment,
    preprocess_eval,
    read_manifest,
    read_video,
    to_model_input,
)
from vid.encoder import EncoderSpec, encode, init_encoder
from vid.errors import FormatError, InfeasibleError
from vid.nn import SGD, SgdConfig, Tensor, no_grad
from vid.nn.checkpoint import load_checkpoint, save_checkpoint
from vid.objectives import (
    BatchOutputs,
    HeadSpec,
    LossWeights,
    apply_heads,
    init_heads,
    total_loss,
)
from vid.sampler import SamplerConfig, generate_batch

log = logging.getLogger(__name__)

# A rectified projection can be exactly zero; during training such a clip
# gets similarity 0 instead of aborting the run.
PROJECTION_NORM_FLOOR = 1e-8

METRIC_COLUMNS = (
    "step",
    "epoch",
    "loss_lod",
    "loss_led",
    "loss_icl",
    "loss_total",
    "acc_lod",
    "acc_led",
    "lr",
)

_DTYPES = {"float64": np.float64, "float32": np.float32}


@dataclass(frozen=True)
class TrainConfig:
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    sgd: SgdConfig = field(default_factory=lambda: SgdConfig(learning_rate=0.01))
    encoder: EncoderSpec | None = None  # None: EncoderSpec.for_clip(sampler.clip_len)
    weights: LossWeights = field(default_factory=LossWeights)
    batch_videos: int = 8
    epochs: int = 18
    max_steps: int = 0  # 0: no cap beyond epochs
    proj_dim: int = 32
    temperature: float = 1.0
    dtype: str = "float64"
    seed: int = 0
    checkpoint_dir: str = ""
    metrics_path: str = ""

    def __post_init__(self):
        if self.encoder is None:
            object.__setattr__(self, "encoder", EncoderSpec.for_clip(self.sampler.clip_len))
        if self.batch_videos < 2:
            raise ValueError("batch_videos must be >= 2 so every clip has negatives")
        if self.dtype not in _DTYPES:
            raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def np_dtype(self):
        return _DTYPES[self.dtype]

    def head_spec(self) -> HeadSpec:
        return HeadSpec(
            self.encoder.feature_dim,
            self.sampler.num_loc_classes,
            self.sampler.num_len_classes,
            self.proj_dim,
        )


# -- flat key=value config files -------------------------------------------------


def _flatten(cfg: TrainConfig) -> dict[str, object]:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, EncoderSpec):
            out["encoder.channels"] = list(v.channels)
            out["encoder.kernels"] = [list(k) for k in v.kernels]
            out["encoder.strides"] = [list(s) for s in v.strides]
            out["encoder.padding"] = [list(p) for p in v.paddings]
            out["encoder.in_channels"] = v.in_channels
        elif dataclasses.is_dataclass(v):
            for g in dataclasses.fields(v):
                out[f"{f.name}.{g.name}"] = getattr(v, g.name)
        else:
            out[f.name] = v
    return out


def config_to_text(cfg: TrainConfig) -> str:
    lines = []
    for k, v in _flatten(cfg).items():
        if isinstance(v, (tuple, list)):
            v = json.dumps(v)
        lines.append(f"{k}={v}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str, base: TrainConfig | None = None) -> TrainConfig:
    """Parse ``key=value`` lines; unknown keys are an error, missing keys keep ``base``.

    When no ``encoder.*`` key is given the encoder is rebuilt for the parsed
    clip length.
    """
    base = base or TrainConfig()
    flat = _flatten(base)
    given = set()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        if k not in flat:
            raise ValueError(f"line {lineno}: unknown key {k!r}")
        old = flat[k]
        if isinstance(old, bool):
            flat[k] = v.lower() in ("1", "true", "yes")
        elif isinstance(old, (tuple, list)):
            flat[k] = json.loads(v)
        elif isinstance(old, int):
            flat[k] = int(v)
        elif isinstance(old, float):
            flat[k] = float(v)
        else:
            flat[k] = v
        given.add(k)
    if not any(k.startswith("encoder.") for k in given):
        flat = {k: v for k, v in flat.items() if not k.startswith("encoder.")}
    return _unflatten(flat)


def _unflatten(flat: dict[str, object]) -> TrainConfig:
    groups: dict[str, dict] = {}
    top = {}
    for k, v in flat.items():
        if "." in k:
            g, name = k.split(".", 1)
            groups.setdefault(g, {})[name] = v
        else:
            top[k] = v
    tuples = lambda v: tuple(tuple(x) if isinstance(x, list) else x for x in v)  # noqa: E731
    aug = {k: tuple(v) if isinstance(v, list) else v for k, v in groups["augment"].items()}
    enc = groups.get("encoder")
    encoder = None
    if enc is not None:
        encoder = EncoderSpec(
            channels=tuple(enc["channels"]),
            kernels=tuples(enc["kernels"]),
            strides=tuples(enc["strides"]),
            in_channels=enc["in_channels"],
            padding=tuples(enc["padding"]),
        )
    return TrainConfig(
        sampler=SamplerConfig(**groups["sampler"]),
        augment=AugmentConfig(**aug),
        sgd=SgdConfig(**groups["sgd"]),
        encoder=encoder,
        weights=LossWeights(**groups["weights"]),
        **top,
    )


# -- model ---------------------------------------------------------------------


def init_model(cfg: TrainConfig, seed: int | None = None) -> dict[str, Tensor]:
    rng = np.random.default_rng([cfg.seed if seed is None else seed, 0])
    params = init_encoder(cfg.encoder, rng, cfg.np_dtype)
    params.update(init_heads(cfg.head_spec(), rng, cfg.np_dtype))
    return params


def forward(cfg: TrainConfig, params, x: np.ndarray):
    h = encode(cfg.encoder, params, Tensor(x.astype(cfg.np_dtype, copy=False)))
    return h, apply_heads(params, h)


# -- data ------------------------------------------------------------------------


@dataclass
class Dataset:
    videos: list[VideoTensor]
    labels: list[int]
    ids: list[str]

    def __len__(self) -> int:
        return len(self.videos)

    @classmethod
    def from_manifest(cls, path) -> "Dataset":
        entries = read_manifest(path)
        videos = [read_video(e.path) for e in entries]
        return cls(videos, [e.class_id for e in entries], [e.video_id for e in entries])

    def subset(self, idx) -> "Dataset":
        return Dataset(
            [self.videos[i] for i in idx], [self.labels[i] for i in idx], [self.ids[i] for i in idx]
        )


def check_feasible(data: Dataset, sampler: SamplerConfig) -> None:
    for v, vid in zip(data.videos, data.ids):
        if v.num_frames < sampler.min_video_len:
            raise InfeasibleError(
                f"video {vid!r} has {v.num_frames} frames; need at least {sampler.min_video_len}"
            )


def make_pretext_batch(cfg: TrainConfig, data: Dataset, video_idx, step_key, train: bool = True):
    """Two incoherent clips per video, each with its own RNG stream.

    Returns ``(x, loc_labels, len_labels, video_ids)`` with clips ordered
    ``[v0 a, v0 b, v1 a, v1 b, ...]``.
    """
    clips, locs, lens, ids = [], [], [], []
    for slot, vi in enumerate(video_idx):
        video = data.videos[vi]
        for view in range(2):
            rng = np.random.default_rng([*step_key, slot, view])
            plan = generate_batch(cfg.sampler, video.num_frames, 1, rng, data.ids[vi]).sample(0)
            clip = video.take(plan.frame_indices)
            clip = augment(clip, cfg.augment, rng) if train else preprocess_eval(clip, cfg.augment)
            clips.append(clip)
            locs.append(plan.loc_labels[0])
            lens.append(plan.len_labels[0])
            ids.append(vi)
    return to_model_input(clips), np.array(locs), np.array(lens), np.array(ids)


# -- training ----------------------------------------------------------------------


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    metrics: list[dict[str, float]]
    optimizer: SGD

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.params.items()}


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def pretrain(cfg: TrainConfig, data: Dataset, params: dict[str, Tensor] | None = None) -> TrainResult:
    """Run SGD on the weighted pretext objective.

    Epochs are shuffled passes over ``data`` in batches of
    ``cfg.batch_videos`` (a short final batch is dropped).  Every random draw
    is keyed on ``(seed, step, slot, view)``, so runs are bit-reproducible.
    """
    check_feasible(data, cfg.sampler)
    if len(data) < cfg.batch_videos:
        raise ValueError(f"{len(data)} videos cannot fill a batch of {cfg.batch_videos}")
    params = params if params is not None else init_model(cfg)
    opt = SGD(params, cfg.sgd)
    metrics: list[dict[str, float]] = []
    steps_per_epoch = len(data) // cfg.batch_videos

    writer = fh = None
    if cfg.metrics_path:
        Path(cfg.metrics_path).parent.mkdir(parents=True, exist_ok=True)
        fh = open(cfg.metrics_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(METRIC_COLUMNS)
    try:
        step = 0
        for epoch in range(cfg.epochs):
            order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(len(data))
            lr = cfg.sgd.lr_at(epoch)
            for b in range(steps_per_epoch):
                if cfg.max_steps and step >= cfg.max_steps:
                    break
                idx = order[b * cfg.batch_videos : (b + 1) * cfg.batch_videos]
                x, locs, lens, ids = make_pretext_batch(cfg, data, idx, (cfg.seed, 2, step))
                opt.zero_grad()
                _, (z_loc, z_len, z_cl) = forward(cfg, params, x)
                batch = BatchOutputs(z_loc, z_len, z_cl, locs, lens, ids)
                terms = total_loss(batch, cfg.weights, cfg.temperature, PROJECTION_NORM_FLOOR)
                if not math.isfinite(terms.total.item()):
                    raise FloatingPointError(
                        f"non-finite loss at step {step}: lod={terms.lod} led={terms.led} icl={terms.icl}"
                    )
                if terms.total.requires_grad:
                    terms.total.backward()
                opt.step(lr)
                row = {
                    "step": step,
                    "epoch": epoch,
                    "loss_lod": terms.lod,
                    "loss_led": terms.led,
                    "loss_icl": terms.icl,
                    "loss_total": terms.total.item(),
                    "acc_lod": float(np.mean(z_loc.data.argmax(axis=1) == locs)),
                    "acc_led": float(np.mean(z_len.data.argmax(axis=1) == lens)),
                    "lr": lr,
                }
                metrics.append(row)
                if writer:
                    writer.writerow([_fmt(row[c]) for c in METRIC_COLUMNS])
                step += 1
            if cfg.checkpoint_dir:
                save_model(Path(cfg.checkpoint_dir) / "last.vidc", cfg, params, opt)
            log.info("epoch %d done at step %d", epoch, step)
            if cfg.max_steps and step >= cfg.max_steps:
                break
    finally:
        if fh:
            fh.close()
    return TrainResult(params, metrics, opt)


def save_model(path, cfg: TrainConfig, params, opt: SGD | None = None) -> None:
    """Checkpoint with the full config text in its metadata."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(
        path,
        {k: p.data for k, p in params.items()},
        dict(opt.state) if opt else {},
        opt.steps if opt else 0,
        {"config": config_to_text(cfg)},
    )


def load_model(path) -> tuple[TrainConfig, dict[str, Tensor]]:
    arrays, _, _, meta = load_checkpoint(path)
    if "config" not in meta:
        raise FormatError(f"{path}: checkpoint carries no training config")
    cfg = config_from_text(meta["config"])
    expected = set(init_model(cfg))
    if set(arrays) != expected:
        raise ValueError(f"{path}: parameter names do not match the stored encoder spec")
    return cfg, {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}


# -- evaluation helpers ------------------------------------------------------------


def pretext_accuracy(cfg: TrainConfig, params, data: Dataset, seed: int = 0, batch: int = 32):
    """Held-out LoD and LeD top-1 on deterministically preprocessed clips."""
    hits_loc = hits_len = total = 0
    with no_grad():
        for start in range(0, len(data), batch):
            idx = list(range(start, min(start + batch, len(data))))
            x, locs, lens, _ = make_pretext_batch(cfg, data, idx, (seed, 3, start), train=False)
            _, (z_loc, z_len, _) = forward(cfg, params, x)
            hits_loc += int((z_loc.data.argmax(axis=1) == locs).sum())
            hits_len += int((z_len.data.argmax(axis=1) == lens).sum())
            total += len(locs)
    return hits_loc / total, hits_len / total


def coherent_clip_starts(num_frames: int, clip_len: int, clips_per_video: int = 1) -> list[int]:
    """1-based start frames of evenly spaced coherent clips (centred when one)."""
    if num_frames < clip_len:
        raise InfeasibleError(f"video of {num_frames} frames is shorter than a {clip_len}-frame clip")
    span = num_frames - clip_len
    if clips_per_video == 1:
        return [span // 2 + 1]
    return [int(round(i * span / (clips_per_video - 1))) + 1 for i in range(clips_per_video)]


def extract_features(
    model,
    clips,
    batch: int = 32,
) -> np.ndarray:
    """Pooled encoder features for preprocessed ``N x C x T x H x W`` clips.

    ``model`` is a checkpoint path or a ``(TrainConfig, params)`` pair.
    """
    cfg, params = load_model(model) if isinstance(model, (str, Path)) else model
    clips = np.asarray(clips)
    if clips.ndim != 5 or clips.shape[1] != cfg.encoder.in_channels:
        raise ValueError(
            f"clips of shape {clips.shape} do not match a {cfg.encoder.in_channels}-channel encoder"
        )
    out = []
    with no_grad():
        for s in range(0, len(clips), batch):
            h = encode(cfg.encoder, params, Tensor(clips[s : s + batch].astype(cfg.np_dtype)))
            out.append(h.data)
    return np.concatenate(out, axis=0)


def video_features(model, data: Dataset, clips_per_video: int = 1, mode: str = "mean") -> np.ndarray:
    """Features of coherent, centre-cropped clips; one row per video (``mean``)
    or per clip (``clips``)."""
    cfg, _ = load_model(model) if isinstance(model, (str, Path)) else model
    if isinstance(model, (str, Path)):
        model = load_model(model)
    l0 = cfg.sampler.clip_len
    clips = []
    for v in data.videos:
        for s in coherent_clip_starts(v.num_frames, l0, clips_per_video):
            clips.append(preprocess_eval(v.take(range(s, s + l0)), cfg.augment))
    feats = extract_features(model, to_model_input(clips))
    if mode == "clips":
        return feats
    if mode != "mean":
        raise ValueError("mode must be 'mean' or 'clips'")
    return feats.reshape(len(data), clips_per_video, -1).mean(axis=1)
