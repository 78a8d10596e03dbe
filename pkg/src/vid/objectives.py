"""Pretext heads and losses: incoherence location (LoD), incoherence length
(LeD) and intra-video contrastive learning (ICL), plus their weighted sum."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from vid.encoder import fan_in_uniform
from vid.errors import DegenerateInputError
from vid.nn import Tensor, affine, l2_normalize, no_grad, parameter, relu, softmax_xent, take2d


@dataclass(frozen=True)
class LossWeights:
    lod: float = 1.0
    led: float = 0.1
    icl: float = 0.1

    def __post_init__(self):
        if min(self.lod, self.led, self.icl) < 0:
            raise ValueError("loss weights must be non-negative")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.lod, self.led, self.icl)


@dataclass(frozen=True)
class HeadSpec:
    feature_dim: int
    num_loc: int
    num_len: int
    proj_dim: int = 32


def init_heads(spec: HeadSpec, rng: np.random.Generator, dtype=np.float64) -> dict[str, Tensor]:
    d = spec.feature_dim
    params = {}
    for name, out in (("loc", spec.num_loc), ("len", spec.num_len), ("proj", spec.proj_dim)):
        params[f"{name}.w"] = parameter(fan_in_uniform(rng, (d, out), d, dtype))
        params[f"{name}.b"] = parameter(np.zeros(out, dtype=dtype))
    return params


@dataclass
class BatchOutputs:
    """Head outputs for 2N clips; rows with equal ``video_ids`` are a positive pair."""

    loc_logits: Tensor
    len_logits: Tensor
    proj: Tensor
    loc_labels: np.ndarray
    len_labels: np.ndarray
    video_ids: np.ndarray

    def __post_init__(self):
        self.loc_labels = np.asarray(self.loc_labels, dtype=np.int64)
        self.len_labels = np.asarray(self.len_labels, dtype=np.int64)
        self.video_ids = np.asarray(self.video_ids)
        n = self.loc_logits.shape[0]
        for name in ("len_logits", "proj"):
            if getattr(self, name).shape[0] != n:
                raise ValueError(f"{name} has {getattr(self, name).shape[0]} rows, expected {n}")
        if not (len(self.loc_labels) == len(self.len_labels) == len(self.video_ids) == n):
            raise ValueError("labels and video ids must have one entry per clip")


def apply_heads(params: dict[str, Tensor], h: Tensor) -> tuple[Tensor, Tensor, Tensor]:
    z_loc = affine(h, params["loc.w"], params["loc.b"])
    z_len = affine(h, params["len.w"], params["len.b"])
    z_cl = relu(affine(h, params["proj.w"], params["proj.b"]))
    return z_loc, z_len, z_cl


def lod_loss(batch: BatchOutputs) -> Tensor:
    return softmax_xent(batch.loc_logits, batch.loc_labels)


def led_loss(batch: BatchOutputs) -> Tensor:
    return softmax_xent(batch.len_logits, batch.len_labels)


def pair_index(video_ids) -> tuple[np.ndarray, np.ndarray]:
    """For each clip, the column indices ``[sibling, other-video clips...]``.

    Returns ``(rows, cols)`` of shape ``(2N, 2N - 1)`` for :func:`take2d`.
    """
    ids = np.asarray(video_ids)
    groups = defaultdict(list)
    for i, v in enumerate(ids.tolist()):
        groups[v].append(i)
    bad = {v: len(g) for v, g in groups.items() if len(g) != 2}
    if bad:
        raise ValueError(f"every video needs exactly two clips, got {bad}")
    if len(groups) < 2:
        raise ValueError("contrastive loss needs clips from at least two videos")
    n = len(ids)
    rows = np.repeat(np.arange(n)[:, None], n - 1, axis=1)
    cols = np.empty((n, n - 1), dtype=np.int64)
    for i, v in enumerate(ids.tolist()):
        a, b = groups[v]
        sibling = b if i == a else a
        cols[i, 0] = sibling
        cols[i, 1:] = [j for j in range(n) if ids[j] != v]
    return rows, cols


def icl_loss(batch: BatchOutputs, temperature: float = 1.0, norm_floor: float = 0.0) -> Tensor:
    """Mean over clips of ``-log(e^s_pos / (e^s_pos + sum_neg e^s_neg))``.

    ``s`` is cosine similarity; negatives are every clip of every other
    video.  ``temperature`` divides the similarities and defaults to 1,
    which is the plain untempered form.  A zero projection raises unless
    ``norm_floor`` is positive, in which case it has similarity 0 to
    everything (used during training, where a rectified projection can die).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    rows, cols = pair_index(batch.video_ids)
    zn = l2_normalize(batch.proj, norm_floor)
    sims = zn @ zn.T
    logits = take2d(sims, rows, cols)
    if temperature != 1.0:
        logits = logits * (1.0 / temperature)
    return softmax_xent(logits, np.zeros(len(rows), dtype=np.int64))


@dataclass
class LossTerms:
    total: Tensor
    lod: float
    led: float
    icl: float


def total_loss(
    batch: BatchOutputs, weights: LossWeights, temperature: float = 1.0, norm_floor: float = 0.0
) -> LossTerms:
    """Weighted sum of the three losses.

    Terms with zero weight are kept out of the graph; their values are still
    reported (NaN when a term is undefined, e.g. all-zero projections).
    """
    fns = (lod_loss, led_loss, lambda b: icl_loss(b, temperature, norm_floor))
    total = None
    values = []
    for w, fn in zip(weights.as_tuple(), fns):
        if w == 0:
            with no_grad():
                try:
                    values.append(fn(batch).item())
                except DegenerateInputError:
                    values.append(float("nan"))
            continue
        term = fn(batch)
        values.append(term.item())
        scaled = term if w == 1 else term * w
        total = scaled if total is None else total + scaled
    if total is None:
        total = Tensor(np.zeros((), dtype=batch.loc_logits.data.dtype))
    return LossTerms(total, *values)
