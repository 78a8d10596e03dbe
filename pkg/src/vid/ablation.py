"""Loss-weight ablation: pretrain once per weight row, score the frozen features."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from vid.evaluate import ProbeReport, RetrievalReport, knn_retrieval, linear_probe
from vid.objectives import LossWeights
from vid.trainer import Dataset, TrainConfig, init_model, pretrain, video_features

# (name, weights); None marks the untrained baseline
ABLATION_ROWS: tuple[tuple[str, LossWeights | None], ...] = (
    ("Random Init", None),
    ("LoD", LossWeights(1.0, 0.0, 0.0)),
    ("LeD", LossWeights(0.0, 1.0, 0.0)),
    ("ICL", LossWeights(0.0, 0.0, 1.0)),
    ("LoD+LeD", LossWeights(1.0, 0.1, 0.0)),
    ("LoD+ICL", LossWeights(1.0, 0.0, 0.1)),
    ("LeD+ICL", LossWeights(0.0, 1.0, 0.1)),
    ("LoD+LeD+ICL", LossWeights(1.0, 0.1, 0.1)),
)


@dataclass
class RepresentationScore:
    probe: ProbeReport
    retrieval: RetrievalReport


def score_features(model, train: Dataset, test: Dataset, ks=(1, 5), clips_per_video: int = 1) -> RepresentationScore:
    """Linear probe (train -> test) and retrieval (test queries, train gallery)."""
    ftr = video_features(model, train, clips_per_video)
    fte = video_features(model, test, clips_per_video)
    probe = linear_probe(ftr, train.labels, fte, test.labels)
    retrieval = knn_retrieval(fte, test.labels, ftr, train.labels, ks)
    return RepresentationScore(probe, retrieval)


def run_ablation(cfg: TrainConfig, train: Dataset, test: Dataset, rows=ABLATION_ROWS, ks=(1, 5)):
    """Yield ``(name, weights, score)`` per row; every row starts from the same init."""
    for name, weights in rows:
        if weights is None:
            params = init_model(cfg)
        else:
            row_cfg = dataclasses.replace(cfg, weights=weights, metrics_path="", checkpoint_dir="")
            params = pretrain(row_cfg, train).params
        yield name, weights, score_features((cfg, params), train, test, ks)


def format_ablation(results) -> str:
    lines = [f"{'Sub-tasks':<12} {'LoD':>5} {'LeD':>5} {'ICL':>5} {'probe%':>7} {'top5%':>7}"]
    for name, w, score in results:
        cells = ["-"] * 3 if w is None else [f"{x:g}" if x else "-" for x in w.as_tuple()]
        top5 = score.retrieval.hit_rates.get(5, float("nan"))
        lines.append(
            f"{name:<12} {cells[0]:>5} {cells[1]:>5} {cells[2]:>5} "
            f"{100 * score.probe.top1:7.1f} {100 * top5:7.1f}"
        )
    return "\n".join(lines)
