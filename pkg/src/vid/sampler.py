"""Hierarchical generation of incoherent clips.

An incoherent clip is ``k`` consecutive-frame sub-clips taken in order from a
raw video, with a bounded number of frames skipped between neighbours.  All
frame indices are 1-based and inclusive.

The sampling functions accept either scalars or numpy integer arrays for the
video-dependent quantities, so :func:`generate_batch` draws many samples with
exactly the same arithmetic that :func:`generate` uses for a single one.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from vid.errors import InfeasibleError

__all__ = [
    "SamplerConfig",
    "IndexRange",
    "SubClipPlan",
    "IncoherentSample",
    "SampleBatch",
    "select_location",
    "range_first",
    "sample_first",
    "range_second",
    "sample_second",
    "assemble",
    "generate",
    "generate_batch",
    "enumerate_valid",
    "format_sample",
    "parse_sample",
]

ENUMERATION_LIMIT = 10**6


@dataclass(frozen=True)
class SamplerConfig:
    clip_len: int = 16
    inc_min: int = 3
    inc_max: int = 10
    num_subclips: int = 2
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.inc_min <= self.inc_max:
            raise ValueError(
                f"need 1 <= inc_min <= inc_max, got [{self.inc_min}, {self.inc_max}]"
            )
        if self.num_subclips < 2:
            raise ValueError("num_subclips must be >= 2")
        if self.clip_len < self.num_subclips:
            raise ValueError(
                f"clip_len {self.clip_len} cannot hold {self.num_subclips} sub-clips"
            )
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")

    @property
    def num_gaps(self) -> int:
        return self.num_subclips - 1

    @property
    def num_loc_classes(self) -> int:
        return self.clip_len - 1

    @property
    def num_len_classes(self) -> int:
        return self.inc_max - self.inc_min + 1

    @property
    def min_video_len(self) -> int:
        """Shortest raw video from which any sample can be drawn."""
        return self.clip_len + self.num_gaps * self.inc_min


@dataclass(frozen=True)
class IndexRange:
    lo: int
    hi: int

    def __post_init__(self):
        if self.lo > self.hi:
            raise InfeasibleError(f"empty index range [{self.lo}, {self.hi}]")

    def __len__(self) -> int:
        return self.hi - self.lo + 1

    def __contains__(self, idx: int) -> bool:
        return self.lo <= idx <= self.hi


@dataclass(frozen=True)
class SubClipPlan:
    length: int
    start: int
    frame_indices: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        if self.length < 1:
            raise ValueError("sub-clip length must be positive")
        if self.start < 1:
            raise ValueError("frame indices are 1-based")
        object.__setattr__(
            self, "frame_indices", tuple(range(self.start, self.start + self.length))
        )

    @property
    def last(self) -> int:
        return self.start + self.length - 1


@dataclass(frozen=True)
class IncoherentSample:
    """An assembled clip plan with its per-gap labels.

    For the usual two sub-clip case ``loc_label``, ``len_label`` and
    ``inc_len`` give the single label; with more sub-clips use the plural
    tuples, one entry per gap.
    """

    source_id: str
    subclips: tuple[SubClipPlan, ...]
    loc_labels: tuple[int, ...]
    len_labels: tuple[int, ...]
    inc_lens: tuple[int, ...]
    total_len: int

    def _single(self, values: tuple[int, ...], name: str) -> int:
        if len(values) != 1:
            raise ValueError(f"{name} is ambiguous with {len(values)} gaps")
        return values[0]

    @property
    def loc_label(self) -> int:
        return self._single(self.loc_labels, "loc_label")

    @property
    def len_label(self) -> int:
        return self._single(self.len_labels, "len_label")

    @property
    def inc_len(self) -> int:
        return self._single(self.inc_lens, "inc_len")

    @property
    def frame_indices(self) -> tuple[int, ...]:
        return tuple(i for sc in self.subclips for i in sc.frame_indices)

    def key(self) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """(lengths, starts): uniquely identifies the plan within one video."""
        return (
            tuple(sc.length for sc in self.subclips),
            tuple(sc.start for sc in self.subclips),
        )


def _require_pair(cfg: SamplerConfig) -> None:
    if cfg.num_subclips != 2:
        raise ValueError("this step is defined for two sub-clips only")


def select_location(cfg: SamplerConfig, rng: np.random.Generator, size=None):
    """Draw the first sub-clip length uniformly; return ``(l1, l2, L_loc)``."""
    _require_pair(cfg)
    if cfg.clip_len < 2:
        raise ValueError("clip_len must be at least 2")
    l1 = rng.integers(1, cfg.clip_len, size=size)
    if size is None:
        l1 = int(l1)
    return l1, cfg.clip_len - l1, l1 - 1


def range_first(cfg: SamplerConfig, T: int, l2) -> IndexRange:
    """Admissible positions for the last frame of the first sub-clip."""
    if T < cfg.clip_len + cfg.inc_min:
        raise InfeasibleError(
            f"raw video of {T} frames is shorter than {cfg.clip_len + cfg.inc_min}"
        )
    return IndexRange(1, T - cfg.inc_min - l2)


def _first_start_hi(hi, l1):
    return hi - l1 + 1


def sample_first(rng_range: IndexRange, l1: int, rng: np.random.Generator) -> SubClipPlan:
    start_hi = _first_start_hi(rng_range.hi, l1)
    if start_hi < max(rng_range.lo, 1):
        raise InfeasibleError(
            f"no start places a {l1}-frame sub-clip inside [{rng_range.lo}, {rng_range.hi}]"
        )
    return SubClipPlan(l1, int(rng.integers(1, start_hi + 1)))


def _second_start_bounds(cfg: SamplerConfig, T, m1, l2):
    lo = m1 + cfg.inc_min + 1
    hi = np.minimum(m1 + cfg.inc_max + 1, T - l2 + 1)
    return lo, hi


def range_second(cfg: SamplerConfig, T: int, m1: int, l2: int) -> tuple[IndexRange, IndexRange]:
    """Frame range for the second sub-clip and the start interval it implies.

    Returns ``(frames, starts)``.  The skipped-frame count between the
    sub-clips is ``start - m1 - 1``, so the start interval realises exactly
    the configured gap bounds, clipped at the video end.
    """
    lo, hi = _second_start_bounds(cfg, T, m1, l2)
    if hi < lo:
        raise InfeasibleError(
            f"second sub-clip of {l2} frames cannot follow frame {m1} in a {T}-frame video"
        )
    frames = IndexRange(lo, min(m1 + cfg.inc_max + l2, T))
    return frames, IndexRange(int(lo), int(hi))


def sample_second(starts: IndexRange, l2: int, rng: np.random.Generator) -> SubClipPlan:
    return SubClipPlan(l2, int(rng.integers(starts.lo, starts.hi + 1)))


def assemble(
    source_id: str, plans: Sequence[SubClipPlan], cfg: SamplerConfig
) -> IncoherentSample:
    plans = tuple(plans)
    if len(plans) != cfg.num_subclips:
        raise ValueError(f"expected {cfg.num_subclips} sub-clips, got {len(plans)}")
    total = sum(p.length for p in plans)
    if total != cfg.clip_len:
        raise ValueError(f"sub-clip lengths sum to {total}, expected {cfg.clip_len}")
    locs, lens, gaps = [], [], []
    offset = 0
    for prev, nxt in zip(plans, plans[1:]):
        if nxt.start <= prev.last:
            raise ValueError("sub-clips overlap or are out of order")
        gap = nxt.start - prev.last - 1
        if not cfg.inc_min <= gap <= cfg.inc_max:
            raise ValueError(
                f"incoherence length {gap} outside [{cfg.inc_min}, {cfg.inc_max}]"
            )
        offset += prev.length
        locs.append(offset - 1)
        lens.append(gap - cfg.inc_min)
        gaps.append(gap)
    return IncoherentSample(
        source_id=str(source_id),
        subclips=plans,
        loc_labels=tuple(locs),
        len_labels=tuple(lens),
        inc_lens=tuple(gaps),
        total_len=total,
    )


@dataclass
class SampleBatch:
    """Many plans from one video, stored column-wise.

    ``lengths`` and ``starts`` have shape ``(n, k)``.
    """

    source_id: str
    cfg: SamplerConfig
    lengths: np.ndarray
    starts: np.ndarray

    def __len__(self) -> int:
        return self.lengths.shape[0]

    @property
    def gaps(self) -> np.ndarray:
        ends = self.starts + self.lengths - 1
        return self.starts[:, 1:] - ends[:, :-1] - 1

    @property
    def loc_labels(self) -> np.ndarray:
        return np.cumsum(self.lengths, axis=1)[:, :-1] - 1

    @property
    def len_labels(self) -> np.ndarray:
        return self.gaps - self.cfg.inc_min

    def keys(self) -> set[tuple[tuple[int, ...], tuple[int, ...]]]:
        rows = np.unique(np.concatenate([self.lengths, self.starts], axis=1), axis=0)
        k = self.lengths.shape[1]
        return {(tuple(map(int, r[:k])), tuple(map(int, r[k:]))) for r in rows}

    def sample(self, i: int) -> IncoherentSample:
        plans = [
            SubClipPlan(int(l), int(s)) for l, s in zip(self.lengths[i], self.starts[i])
        ]
        return assemble(self.source_id, plans, self.cfg)

    def __iter__(self):
        return (self.sample(i) for i in range(len(self)))


def _draw_lengths(cfg: SamplerConfig, rng: np.random.Generator, n: int) -> np.ndarray:
    if cfg.num_subclips == 2:
        l1, l2, _ = select_location(cfg, rng, size=n)
        return np.stack([l1, l2], axis=1)
    # uniform over compositions of clip_len into k positive parts
    cuts = np.sort(
        np.argsort(rng.random((n, cfg.clip_len - 1)), axis=1)[:, : cfg.num_gaps] + 1,
        axis=1,
    )
    edges = np.concatenate(
        [np.zeros((n, 1), dtype=np.int64), cuts, np.full((n, 1), cfg.clip_len)], axis=1
    )
    return np.diff(edges, axis=1)


def generate_batch(
    cfg: SamplerConfig,
    T: int,
    n: int,
    rng: np.random.Generator,
    source_id: str = "",
) -> SampleBatch:
    """Draw ``n`` independent incoherent-clip plans from a ``T``-frame video.

    Each sub-clip is placed so that the frames still needed by the remaining
    sub-clips (their lengths plus one minimal gap each) fit before the video
    end; nothing ever wraps around.
    """
    if T < cfg.min_video_len:
        raise InfeasibleError(
            f"video {source_id!r}: {T} frames, need at least {cfg.min_video_len}"
        )
    k = cfg.num_subclips
    lengths = _draw_lengths(cfg, rng, n).astype(np.int64)
    starts = np.empty_like(lengths)
    # frames reserved after sub-clip j: remaining lengths + remaining gaps
    tail = np.cumsum(lengths[:, ::-1], axis=1)[:, ::-1]
    for j in range(k):
        reserve = (tail[:, j + 1] if j + 1 < k else 0) + (k - 1 - j) * cfg.inc_min
        last_hi = T - reserve
        if j == 0:
            lo = np.ones(n, dtype=np.int64)
            hi = _first_start_hi(last_hi, lengths[:, 0])
        else:
            prev_last = starts[:, j - 1] + lengths[:, j - 1] - 1
            lo, hi = _second_start_bounds(cfg, last_hi, prev_last, lengths[:, j])
        if np.any(hi < lo):
            raise InfeasibleError(f"video {source_id!r}: empty start range for sub-clip {j + 1}")
        starts[:, j] = rng.integers(lo, hi + 1)
    return SampleBatch(str(source_id), cfg, lengths, starts)


def generate(
    cfg: SamplerConfig, T: int, source_id: str, rng: np.random.Generator
) -> IncoherentSample:
    return generate_batch(cfg, T, 1, rng, source_id).sample(0)


def _compositions(total: int, parts: int) -> Iterable[tuple[int, ...]]:
    for cuts in itertools.combinations(range(1, total), parts - 1):
        edges = (0, *cuts, total)
        yield tuple(b - a for a, b in zip(edges, edges[1:]))


def enumerate_valid(cfg: SamplerConfig, T: int, source_id: str = "") -> set[IncoherentSample]:
    """Every valid plan for a ``T``-frame video, by exhaustive search.

    Deliberately shares no code with the sampler: it walks all
    (lengths, starts) tuples and keeps those meeting the sample invariants.
    """
    k = cfg.num_subclips
    n_lengths = sum(1 for _ in _compositions(cfg.clip_len, k))
    budget = n_lengths * max(T, 1) ** k
    if budget > ENUMERATION_LIMIT:
        raise ValueError(f"enumeration of {budget} tuples exceeds {ENUMERATION_LIMIT}")
    out = set()
    for lengths in _compositions(cfg.clip_len, k):
        for starts in itertools.product(range(1, T + 1), repeat=k):
            ends = [s + l - 1 for s, l in zip(starts, lengths)]
            if ends[-1] > T:
                continue
            gaps = [starts[j + 1] - ends[j] - 1 for j in range(k - 1)]
            if all(cfg.inc_min <= g <= cfg.inc_max for g in gaps):
                out.add(
                    IncoherentSample(
                        source_id=str(source_id),
                        subclips=tuple(SubClipPlan(l, s) for l, s in zip(lengths, starts)),
                        loc_labels=tuple(
                            sum(lengths[: j + 1]) - 1 for j in range(k - 1)
                        ),
                        len_labels=tuple(g - cfg.inc_min for g in gaps),
                        inc_lens=tuple(gaps),
                        total_len=cfg.clip_len,
                    )
                )
    return out


def format_sample(s: IncoherentSample) -> str:
    """One text line: ``source_id, l0, k, L_loc, L_len, lo-hi, lo-hi, ...``.

    With more than two sub-clips the label fields are ``;``-joined lists.
    """
    locs = ";".join(map(str, s.loc_labels))
    lens = ";".join(map(str, s.len_labels))
    ranges = ", ".join(f"{sc.start}-{sc.last}" for sc in s.subclips)
    return f"{s.source_id}, {s.total_len}, {len(s.subclips)}, {locs}, {lens}, {ranges}"


def parse_sample(line: str, cfg: SamplerConfig) -> IncoherentSample:
    fields = [f.strip() for f in line.split(",")]
    if len(fields) < 5:
        raise ValueError(f"malformed sample line: {line!r}")
    source_id, l0, k = fields[0], int(fields[1]), int(fields[2])
    ranges = fields[5:]
    if len(ranges) != k or l0 != cfg.clip_len or k != cfg.num_subclips:
        raise ValueError(f"sample line does not match sampler config: {line!r}")
    plans = []
    for r in ranges:
        lo, hi = (int(x) for x in r.split("-"))
        plans.append(SubClipPlan(hi - lo + 1, lo))
    sample = assemble(source_id, plans, cfg)
    if fields[3] != ";".join(map(str, sample.loc_labels)) or fields[4] != ";".join(
        map(str, sample.len_labels)
    ):
        raise ValueError(f"labels inconsistent with ranges: {line!r}")
    return sample
