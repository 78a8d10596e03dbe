import math

import numpy as np
import pytest

from vid.data import AugmentConfig, SyntheticSpec, center_crop, gen_dataset, hflip, normalize, to_model_input
from vid.encoder import EncoderSpec
from vid.errors import FormatError, InfeasibleError
from vid.nn import SgdConfig
from vid.nn.checkpoint import save_checkpoint
from vid.objectives import LossWeights
from vid.sampler import SamplerConfig
from vid.trainer import (
    METRIC_COLUMNS,
    Dataset,
    TrainConfig,
    coherent_clip_starts,
    config_from_text,
    config_to_text,
    extract_features,
    init_model,
    load_model,
    make_pretext_batch,
    pretext_accuracy,
    pretrain,
    save_model,
    video_features,
)

TINY_SPEC = SyntheticSpec(num_classes=2, frames_per_video=14, height=12, width=12, shape_radius=2, seed=3)


def tiny_data(videos_per_class=3, spec=TINY_SPEC) -> Dataset:
    videos, labels, _ = gen_dataset(spec, videos_per_class)
    return Dataset(videos, labels, [f"v{i}" for i in range(len(videos))])


def tiny_config(**kw) -> TrainConfig:
    base = dict(
        sampler=SamplerConfig(clip_len=4, inc_min=1, inc_max=2),
        augment=AugmentConfig(crop_size=(10, 10)),
        encoder=EncoderSpec(channels=(3, 4), kernels=((3, 3, 3), (4, 3, 3)), strides=((1, 2, 2), (1, 2, 2)),
                            padding=((1, 1, 1), (0, 1, 1))),
        batch_videos=2,
        epochs=1,
        proj_dim=4,
    )
    base.update(kw)
    return TrainConfig(**base)


def test_default_config_values():
    cfg = TrainConfig()
    assert cfg.batch_videos == 8 and cfg.epochs == 18
    assert cfg.sgd.momentum == 0.9 and cfg.sgd.weight_decay == 0.005 and cfg.sgd.lr_decay_every == 6
    assert cfg.weights == LossWeights(1.0, 0.1, 0.1)
    assert cfg.encoder.channels == (8, 16, 32) and cfg.encoder.feature_dim == 32
    with pytest.raises(ValueError):
        TrainConfig(batch_videos=1)


def test_config_text_round_trip():
    cfg = tiny_config(seed=5, weights=LossWeights(1.0, 0.0, 0.5), metrics_path="m.csv")
    assert config_from_text(config_to_text(cfg)) == cfg


def test_config_text_overrides_and_errors():
    cfg = config_from_text("# desk run\nsampler.clip_len = 8\nsgd.learning_rate=0.05\naugment.enabled=false\n")
    assert cfg.sampler.clip_len == 8 and cfg.sgd.learning_rate == 0.05 and not cfg.augment.enabled
    # encoder follows the clip length unless given explicitly
    assert cfg.encoder.kernels[-1][0] == 8
    with pytest.raises(ValueError, match="unknown key"):
        config_from_text("nonsense=1")
    with pytest.raises(ValueError, match="key=value"):
        config_from_text("justtext")


def test_pretext_batch_layout():
    cfg, data = tiny_config(), tiny_data()
    x, locs, lens, ids = make_pretext_batch(cfg, data, [0, 2], (0, 2, 0))
    assert x.shape == (4, 3, 4, 10, 10)
    assert ids.tolist() == [0, 0, 2, 2]
    assert np.all((0 <= locs) & (locs <= 2)) and np.all((0 <= lens) & (lens <= 1))
    x2, *_ = make_pretext_batch(cfg, data, [0, 2], (0, 2, 0))
    assert np.array_equal(x, x2)


def test_infeasible_video_reported_by_id():
    cfg = tiny_config(sampler=SamplerConfig(clip_len=4, inc_min=20, inc_max=20))
    with pytest.raises(InfeasibleError, match="v0"):
        pretrain(cfg, tiny_data())


def test_zero_weights_leave_parameters_unchanged():
    cfg = tiny_config(weights=LossWeights(0.0, 0.0, 0.0), sgd=SgdConfig(learning_rate=0.1, weight_decay=0.0), max_steps=1)
    data = tiny_data()
    before = {k: v.data.copy() for k, v in init_model(cfg).items()}
    after = pretrain(cfg, data).param_arrays()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_metrics_csv_deterministic(tmp_path):
    data = tiny_data()
    runs = []
    for name in ("a", "b"):
        cfg = tiny_config(epochs=2, metrics_path=str(tmp_path / f"{name}.csv"), checkpoint_dir=str(tmp_path / name))
        pretrain(cfg, data)
        runs.append((tmp_path / f"{name}.csv").read_text())
    assert runs[0] == runs[1]
    lines = runs[0].splitlines()
    assert lines[0] == ",".join(METRIC_COLUMNS)
    assert len(lines) == 1 + 2 * 3
    # checkpoints differ only in the recorded metrics path
    pa, pb = (load_model(tmp_path / n / "last.vidc")[1] for n in ("a", "b"))
    assert all(pa[k].data.tobytes() == pb[k].data.tobytes() for k in pa)
    other = tiny_config(epochs=2, seed=1, metrics_path=str(tmp_path / "c.csv"))
    pretrain(other, data)
    assert (tmp_path / "c.csv").read_text() != runs[0]


def test_training_reduces_loss_on_tiny_set():
    cfg = tiny_config(epochs=40, sgd=SgdConfig(learning_rate=0.05, lr_decay_every=0), dtype="float32")
    metrics = pretrain(cfg, tiny_data()).metrics
    first = np.median([m["loss_total"] for m in metrics[:10]])
    last = np.median([m["loss_total"] for m in metrics[-10:]])
    assert last < first
    assert all(math.isfinite(m["loss_total"]) for m in metrics)


def test_model_save_load_round_trip(tmp_path):
    cfg = tiny_config(seed=4)
    params = init_model(cfg)
    save_model(tmp_path / "m.vidc", cfg, params)
    cfg2, params2 = load_model(tmp_path / "m.vidc")
    assert cfg2 == cfg
    assert all(np.array_equal(params[k].data, params2[k].data) for k in params)
    save_checkpoint(tmp_path / "bare.vidc", {"x": np.ones(2)})
    with pytest.raises(FormatError):
        load_model(tmp_path / "bare.vidc")


def test_coherent_clip_starts():
    assert coherent_clip_starts(48, 8) == [21]
    assert coherent_clip_starts(8, 8) == [1]
    assert coherent_clip_starts(20, 4, 3) == [1, 9, 17]
    with pytest.raises(InfeasibleError):
        coherent_clip_starts(3, 4)


def test_extract_features_properties(tmp_path):
    cfg, data = tiny_config(), tiny_data()
    params = init_model(cfg)
    clip = normalize(center_crop(data.videos[0].take(range(3, 7)), (10, 10)))
    flipped = hflip(clip, AugmentConfig(flip_prob=1.0), np.random.default_rng(0))
    x = to_model_input([clip, clip, flipped])
    f = extract_features((cfg, params), x)
    assert f.shape == (3, cfg.encoder.feature_dim)
    assert np.array_equal(f[0], f[1])
    assert not np.allclose(f[0], f[2])
    save_model(tmp_path / "m.vidc", cfg, params)
    assert np.array_equal(extract_features(tmp_path / "m.vidc", x), f)
    with pytest.raises(ValueError):
        extract_features((cfg, params), x[:, :1])


def test_video_features_modes():
    cfg, data = tiny_config(), tiny_data()
    params = init_model(cfg)
    one = video_features((cfg, params), data)
    assert one.shape == (len(data), cfg.encoder.feature_dim)
    clips = video_features((cfg, params), data, clips_per_video=3, mode="clips")
    mean = video_features((cfg, params), data, clips_per_video=3)
    assert clips.shape == (3 * len(data), cfg.encoder.feature_dim)
    assert np.allclose(mean, clips.reshape(len(data), 3, -1).mean(axis=1))


def test_pretext_accuracy_bounds():
    cfg, data = tiny_config(), tiny_data()
    lod, led = pretext_accuracy(cfg, init_model(cfg), data)
    assert 0.0 <= lod <= 1.0 and 0.0 <= led <= 1.0
    assert (lod, led) == pretext_accuracy(cfg, init_model(cfg), data)
