import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import chisquare

from vid.errors import InfeasibleError
from vid.sampler import (
    IncoherentSample,
    IndexRange,
    SamplerConfig,
    SubClipPlan,
    assemble,
    enumerate_valid,
    format_sample,
    generate,
    generate_batch,
    parse_sample,
    range_first,
    range_second,
    sample_first,
    sample_second,
    select_location,
)


class FixedDraw:
    """Stands in for a Generator whose next integer draw is known."""

    def __init__(self, value):
        self.value = value

    def integers(self, lo, hi=None, size=None):
        assert lo <= self.value < hi
        return self.value


def check_invariants(s: IncoherentSample, cfg: SamplerConfig, T: int):
    assert s.total_len == sum(sc.length for sc in s.subclips) == cfg.clip_len
    idx = s.frame_indices
    assert all(a < b for a, b in zip(idx, idx[1:]))
    assert 1 <= idx[0] and idx[-1] <= T
    for sc in s.subclips:
        assert sc.frame_indices == tuple(range(sc.start, sc.start + sc.length))
    for gap, ll in zip(s.inc_lens, s.len_labels):
        assert cfg.inc_min <= gap <= cfg.inc_max
        assert ll == gap - cfg.inc_min
    assert s.loc_labels[0] == s.subclips[0].length - 1
    assert 0 <= s.loc_labels[0] <= cfg.clip_len - 2


def test_config_defaults_and_validation():
    cfg = SamplerConfig()
    assert (cfg.clip_len, cfg.inc_min, cfg.inc_max, cfg.num_subclips) == (16, 3, 10, 2)
    assert cfg.num_loc_classes == 15 and cfg.num_len_classes == 8
    with pytest.raises(ValueError):
        SamplerConfig(inc_min=5, inc_max=4)
    with pytest.raises(ValueError):
        SamplerConfig(inc_min=0)
    with pytest.raises(ValueError):
        SamplerConfig(clip_len=2, num_subclips=3)


def test_select_location_hand_value():
    assert select_location(SamplerConfig(), FixedDraw(5)) == (5, 11, 4)


def test_select_location_single_split():
    cfg = SamplerConfig(clip_len=2, inc_min=1, inc_max=1)
    rng = np.random.default_rng(0)
    assert {select_location(cfg, rng) for _ in range(20)} == {(1, 1, 0)}


def test_select_location_uniform():
    cfg = SamplerConfig(clip_len=8)
    _, _, loc = select_location(cfg, np.random.default_rng(1), size=100_000)
    counts = np.bincount(loc, minlength=7)
    assert len(counts) == 7
    assert chisquare(counts).pvalue > 0.01


def test_range_first_examples():
    assert range_first(SamplerConfig(), 64, 11) == IndexRange(1, 50)
    # l0 = 8 so that a 16-frame video is feasible
    assert range_first(SamplerConfig(clip_len=8, inc_min=3), 16, 4) == IndexRange(1, 9)
    with pytest.raises(InfeasibleError):
        range_first(SamplerConfig(), 18, 8)


def test_range_first_tightest_video_has_one_start():
    cfg = SamplerConfig()
    T = cfg.clip_len + cfg.inc_min
    r = range_first(cfg, T, cfg.clip_len - 1)
    # l1 = 1: the single frame must end exactly at r.hi == 1
    assert r == IndexRange(1, 1)
    rng = np.random.default_rng(0)
    assert {sample_first(r, 1, rng).start for _ in range(10)} == {1}


def test_sample_first_examples():
    plan = sample_first(IndexRange(1, 50), 5, FixedDraw(10))
    assert plan.frame_indices == (10, 11, 12, 13, 14) and plan.last == 14
    rng = np.random.default_rng(0)
    assert sample_first(IndexRange(1, 5), 5, rng).start == 1
    with pytest.raises(InfeasibleError):
        sample_first(IndexRange(1, 4), 5, rng)


def test_sample_first_uniform():
    rng = np.random.default_rng(2)
    starts = [sample_first(IndexRange(1, 10), 3, rng).start for _ in range(100_000)]
    counts = np.bincount(starts)[1:]
    assert len(counts) == 8
    assert chisquare(counts).pvalue > 0.01


def test_range_second_examples():
    cfg = SamplerConfig(inc_min=3, inc_max=10)
    frames, starts = range_second(cfg, 64, 14, 11)
    assert frames == IndexRange(18, 35) and starts == IndexRange(18, 25)

    _, starts = range_second(cfg, 18, 14, 1)
    assert starts == IndexRange(18, 18)

    _, starts = range_second(cfg, 100, 5, 2)
    assert starts == IndexRange(9, 16)
    gaps = sorted(s - 5 - 1 for s in range(starts.lo, starts.hi + 1))
    assert gaps == list(range(3, 11))

    with pytest.raises(InfeasibleError):
        range_second(cfg, 18, 15, 1)


def test_assemble_labels():
    cfg = SamplerConfig()
    s = assemble("v", [SubClipPlan(5, 10), SubClipPlan(11, 20)], cfg)
    assert s.inc_len == 5 and s.len_label == 2 and s.loc_label == 4 and s.total_len == 16
    lo = assemble("v", [SubClipPlan(5, 10), SubClipPlan(11, 14 + 3 + 1)], cfg)
    assert lo.len_label == 0
    hi = assemble("v", [SubClipPlan(5, 10), SubClipPlan(11, 14 + 10 + 1)], cfg)
    assert hi.len_label == 7


@pytest.mark.parametrize(
    "plans",
    [
        [SubClipPlan(5, 10), SubClipPlan(11, 12)],  # overlap
        [SubClipPlan(11, 30), SubClipPlan(5, 1)],  # out of order
        [SubClipPlan(5, 10), SubClipPlan(11, 17)],  # gap 2 < 3
        [SubClipPlan(5, 10), SubClipPlan(11, 26)],  # gap 11 > 10
        [SubClipPlan(5, 10), SubClipPlan(10, 20)],  # wrong total
    ],
)
def test_assemble_rejects(plans):
    with pytest.raises(ValueError):
        assemble("v", plans, SamplerConfig())


def test_stepwise_composition_matches_oracle():
    cfg = SamplerConfig(clip_len=4, inc_min=1, inc_max=2)
    T = 9
    oracle = {s.key() for s in enumerate_valid(cfg, T)}
    rng = np.random.default_rng(3)
    seen = set()
    for _ in range(3000):
        l1, l2, loc = select_location(cfg, rng)
        p1 = sample_first(range_first(cfg, T, l2), l1, rng)
        _, starts = range_second(cfg, T, p1.last, l2)
        p2 = sample_second(starts, l2, rng)
        s = assemble("v", [p1, p2], cfg)
        assert s.loc_label == loc
        seen.add(s.key())
    assert seen == oracle


def test_generate_default_sweep():
    cfg = SamplerConfig()
    rng = np.random.default_rng(4)
    for s in generate_batch(cfg, 64, 10_000, rng, "v"):
        check_invariants(s, cfg, 64)


def test_generate_tightest_video():
    cfg = SamplerConfig()
    rng = np.random.default_rng(5)
    batch = generate_batch(cfg, 19, 10_000, rng)
    assert set(batch.gaps.ravel().tolist()) == {3}
    with pytest.raises(InfeasibleError):
        generate(cfg, 18, "v", rng)


def test_generate_deterministic():
    cfg = SamplerConfig()
    a = [generate(cfg, 40, "v", np.random.default_rng(9)) for _ in range(3)]
    assert a[0] == a[1] == a[2]
    b1 = generate_batch(cfg, 40, 50, np.random.default_rng(11))
    b2 = generate_batch(cfg, 40, 50, np.random.default_rng(11))
    assert np.array_equal(b1.starts, b2.starts) and np.array_equal(b1.lengths, b2.lengths)


def test_enumerate_valid_examples():
    only = enumerate_valid(SamplerConfig(clip_len=2, inc_min=1, inc_max=1), 3)
    assert len(only) == 1
    (s,) = only
    assert s.subclips[0].frame_indices == (1,) and s.subclips[1].frame_indices == (3,)

    assert enumerate_valid(SamplerConfig(clip_len=3, inc_min=1, inc_max=2), 3) == set()
    with pytest.raises(ValueError):
        enumerate_valid(SamplerConfig(), 300)


def test_enumerate_valid_count_by_hand():
    # l0=3, gaps in [1,2], T=6: count (l1, s1, s2) tuples directly
    cfg = SamplerConfig(clip_len=3, inc_min=1, inc_max=2)
    expected = 0
    for l1 in (1, 2):
        l2 = 3 - l1
        for s1 in range(1, 7):
            for gap in (1, 2):
                s2 = s1 + l1 + gap
                expected += s2 + l2 - 1 <= 6
    oracle = enumerate_valid(cfg, 6)
    assert len(oracle) == expected == 10
    batch = generate_batch(cfg, 6, 100_000, np.random.default_rng(6))
    assert batch.keys() == {s.key() for s in oracle}


def test_length_reachability():
    cfg = SamplerConfig(clip_len=8, inc_min=2, inc_max=5)
    batch = generate_batch(cfg, cfg.clip_len + cfg.inc_max, 20_000, np.random.default_rng(7))
    assert set(batch.len_labels.ravel().tolist()) == set(range(4))


def test_three_subclips_match_oracle():
    cfg = SamplerConfig(clip_len=6, inc_min=1, inc_max=2, num_subclips=3)
    T = 11
    oracle = {s.key() for s in enumerate_valid(cfg, T)}
    batch = generate_batch(cfg, T, 50_000, np.random.default_rng(8))
    assert batch.keys() == oracle
    s = batch.sample(0)
    assert len(s.loc_labels) == 2
    with pytest.raises(ValueError):
        s.loc_label


def test_text_format_round_trip():
    cfg = SamplerConfig()
    s = generate(cfg, 64, "clip_a", np.random.default_rng(10))
    line = format_sample(s)
    assert line.split(", ")[:5] == ["clip_a", "16", "2", str(s.loc_label), str(s.len_label)]
    assert parse_sample(line, cfg) == s
    with pytest.raises(ValueError):
        parse_sample(line.replace(f", {s.loc_label}, ", ", 99, ", 1), cfg)


@settings(max_examples=60, deadline=None)
@given(
    clip_len=st.integers(2, 8),
    inc_min=st.integers(1, 3),
    extra=st.integers(0, 3),
    slack=st.integers(0, 5),
    seed=st.integers(0, 2**32 - 1),
)
def test_generate_always_valid(clip_len, inc_min, extra, slack, seed):
    cfg = SamplerConfig(clip_len, inc_min, inc_min + extra)
    T = cfg.min_video_len + slack
    oracle = {s.key() for s in enumerate_valid(cfg, T)}
    batch = generate_batch(cfg, T, 200, np.random.default_rng(seed))
    assert batch.keys() <= oracle
    for s in list(batch)[:20]:
        check_invariants(s, cfg, T)


@settings(max_examples=30, deadline=None)
@given(clip_len=st.integers(2, 10), T=st.integers(20, 60), seed=st.integers(0, 2**16))
def test_location_marginal_independent_of_video(clip_len, T, seed):
    # the location is drawn first, so its stream position does not depend on T
    cfg = SamplerConfig(clip_len, 1, 3)
    a = generate_batch(cfg, T, 50, np.random.default_rng(seed)).loc_labels
    b = generate_batch(cfg, T + 7, 50, np.random.default_rng(seed)).loc_labels
    assert np.array_equal(a, b)
