import numpy as np
import pytest

from vid.cli import main
from vid.sampler import SamplerConfig, parse_sample


def test_sample_prints_valid_plans(capsys):
    assert main(["sample", "--T", "64", "--l0", "16", "--inc-min", "3", "--inc-max", "10", "--seed", "7", "--n", "3"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 3
    cfg = SamplerConfig(16, 3, 10)
    for line in lines:
        s = parse_sample(line, cfg)
        assert s.total_len == 16 and 3 <= s.inc_len <= 10
        assert s.frame_indices[-1] <= 64


def test_sample_is_deterministic(capsys):
    main(["sample", "--T", "40", "--seed", "1", "--n", "5"])
    a = capsys.readouterr().out
    main(["sample", "--T", "40", "--seed", "1", "--n", "5"])
    assert capsys.readouterr().out == a


def test_sample_infeasible_video(capsys):
    assert main(["sample", "--T", "18"]) == 2
    assert "error" in capsys.readouterr().err


def test_unknown_flag_shows_usage(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["sample", "--T", "40", "--frobnicate"])
    assert exc.value.code != 0
    assert "usage" in capsys.readouterr().err


def test_unknown_subcommand(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["teleport"])
    assert exc.value.code != 0


def test_grad_check_passes(capsys):
    assert main(["grad-check"]) == 0
    out = capsys.readouterr().out
    assert "conv3d" in out and "softmax_xent" in out and "FAIL" not in out


def test_bad_k_list(capsys):
    with pytest.raises(SystemExit):
        main(["retrieve", "--checkpoint", "x", "--train", "a", "--test", "b", "--k", "1,zero"])


def test_end_to_end_pipeline(tmp_path, capsys):
    train_dir, test_dir = tmp_path / "train", tmp_path / "test"
    common = ["--classes", "2", "--frames", "14", "--size", "12"]
    assert main(["gen-data", "--out", str(train_dir), "--videos-per-class", "3", "--seed", "0", *common]) == 0
    assert main(["gen-data", "--out", str(test_dir), "--videos-per-class", "2", "--seed", "1", *common]) == 0
    cfg = tmp_path / "run.cfg"
    cfg.write_text(
        "\n".join(
            [
                "sampler.clip_len=4",
                "sampler.inc_min=1",
                "sampler.inc_max=2",
                "augment.crop_size=[10, 10]",
                "batch_videos=2",
                "epochs=1",
                f"metrics_path={tmp_path / 'metrics.csv'}",
            ]
        )
    )
    model = tmp_path / "model.vidc"
    args = ["pretrain", "--config", str(cfg), "--manifest", str(train_dir / "manifest.csv"), "--out", str(model)]
    assert main(args) == 0
    assert model.exists()
    assert len((tmp_path / "metrics.csv").read_text().splitlines()) == 4
    capsys.readouterr()

    eval_args = ["--checkpoint", str(model), "--train", str(train_dir / "manifest.csv"), "--test", str(test_dir / "manifest.csv")]
    assert main(["retrieve", *eval_args, "--k", "1,5,10,20,50", "--csv", str(tmp_path / "r.csv")]) == 0
    table = capsys.readouterr().out
    for k in (1, 5, 10, 20, 50):
        assert f"Top{k}" in table
    rows = (tmp_path / "r.csv").read_text().splitlines()
    rates = [float(r.split(",")[1]) for r in rows[1:]]
    assert len(rates) == 5 and rates == sorted(rates)

    assert main(["probe", *eval_args, "--epochs", "20"]) == 0
    assert "top-1 accuracy" in capsys.readouterr().out
    assert main(["probe", *eval_args, "--epochs", "20", "--random-init"]) == 0

    ablate = ["ablate", "--config", str(cfg), "--train", str(train_dir / "manifest.csv"), "--test", str(test_dir / "manifest.csv")]
    assert main([*ablate, "--rows", "Random Init", "LoD"]) == 0
    out = capsys.readouterr().out
    assert "Random Init" in out and "LoD" in out


def test_pretrain_dump_config(capsys):
    assert main(["pretrain", "--set", "sampler.clip_len=8", "--dump-config"]) == 0
    out = capsys.readouterr().out
    assert "sampler.clip_len=8" in out and "encoder.kernels=[[3, 3, 3], [3, 3, 3], [8, 3, 3]]" in out


def test_pretrain_requires_manifest(capsys):
    with pytest.raises(SystemExit):
        main(["pretrain"])
