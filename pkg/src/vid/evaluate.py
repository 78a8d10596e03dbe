"""Downstream evaluation of frozen features: top-k retrieval and linear probing."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from vid.nn import SGD, SgdConfig, Tensor, affine, parameter, softmax_xent

DEFAULT_KS = (1, 5, 10, 20, 50)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("VID_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class RetrievalReport:
    ks: tuple[int, ...]
    hit_rates: dict[int, float]
    per_class: dict[int, dict[int, float]]
    clamped: bool = False

    def rows(self) -> list[tuple[str, float]]:
        return [(f"top{k}", self.hit_rates[k]) for k in self.ks]

    def to_csv(self) -> str:
        classes = sorted(self.per_class)
        lines = ["k,all," + ",".join(f"class_{c}" for c in classes)]
        for k in self.ks:
            cells = [f"{self.hit_rates[k]:.6f}"] + [f"{self.per_class[c][k]:.6f}" for c in classes]
            lines.append(f"{k}," + ",".join(cells))
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        head = " ".join(f"{'Top' + str(k):>7}" for k in self.ks)
        vals = " ".join(f"{100 * self.hit_rates[k]:7.1f}" for k in self.ks)
        note = "  (k clamped to gallery size)" if self.clamped else ""
        return f"{head}\n{vals}{note}"


def _unit_rows(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(n == 0, 1.0, n)


def knn_retrieval(
    query_feats,
    query_labels,
    gallery_feats,
    gallery_labels,
    ks=DEFAULT_KS,
    exclude_self: np.ndarray | None = None,
) -> RetrievalReport:
    """Fraction of queries with a same-class item among their k most
    cosine-similar gallery items.

    ``exclude_self[i]`` is the gallery index of query ``i`` when query and
    gallery overlap (-1 for none); that item is never retrieved.  Ties keep
    gallery order.
    """
    q = np.asarray(query_feats, dtype=np.float64)
    g = np.asarray(gallery_feats, dtype=np.float64)
    ql = np.asarray(query_labels)
    gl = np.asarray(gallery_labels)
    if q.ndim != 2 or g.ndim != 2 or q.shape[1] != g.shape[1]:
        raise ValueError(f"feature dims differ: {q.shape} vs {g.shape}")
    if len(g) == 0:
        raise ValueError("gallery is empty")
    available = len(g) - (exclude_self is not None)
    ks = tuple(int(k) for k in ks)
    clamped = any(k > available for k in ks)
    kmax = min(max(ks), available)
    qn, gn = _unit_rows(q), _unit_rows(g)

    def rank(chunk: slice) -> np.ndarray:
        sims = qn[chunk] @ gn.T
        if exclude_self is not None:
            rows = np.arange(sims.shape[0])
            cols = np.asarray(exclude_self)[chunk]
            valid = cols >= 0
            sims[rows[valid], cols[valid]] = -np.inf
        order = np.argsort(-sims, axis=1, kind="stable")[:, :kmax]
        same = gl[order] == ql[chunk, None]
        # first rank (1-based) at which a same-class item appears; inf if none
        first = np.where(same.any(axis=1), same.argmax(axis=1) + 1, np.inf)
        return first

    n = len(q)
    workers = worker_count()
    bounds = np.linspace(0, n, workers + 1).astype(int)
    chunks = [slice(a, b) for a, b in zip(bounds, bounds[1:])]
    if workers == 1:
        parts = [rank(c) for c in chunks]
    else:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(rank, chunks))
    first = np.concatenate(parts) if parts else np.empty(0)

    rates = {k: float(np.mean(first <= min(k, kmax))) for k in ks}
    per_class = {
        int(c): {k: float(np.mean(first[ql == c] <= min(k, kmax))) for k in ks}
        for c in np.unique(ql)
    }
    return RetrievalReport(ks, rates, per_class, clamped)


@dataclass
class ProbeReport:
    top1: float
    confusion: np.ndarray
    losses: list[float] = field(default_factory=list)

    def table(self) -> str:
        lines = [f"top-1 accuracy: {100 * self.top1:.1f}%", "confusion (rows = true class):"]
        for i, row in enumerate(self.confusion):
            lines.append(f"{i:3d} | " + " ".join(f"{int(v):4d}" for v in row))
        return "\n".join(lines)


def linear_probe(
    train_feats,
    train_labels,
    test_feats,
    test_labels,
    epochs: int = 300,
    lr: float = 0.1,
    num_classes: int | None = None,
    weight_decay: float = 1e-4,
) -> ProbeReport:
    """Full-batch softmax regression on standardized frozen features.

    Features are standardized with training statistics; the classifier starts
    at zero, so with ``epochs=0`` every test clip is assigned class 0.
    """
    xtr = np.asarray(train_feats, dtype=np.float64)
    xte = np.asarray(test_feats, dtype=np.float64)
    ytr = np.asarray(train_labels, dtype=np.int64)
    yte = np.asarray(test_labels, dtype=np.int64)
    if xtr.shape[1] != xte.shape[1]:
        raise ValueError("train and test features differ in dimension")
    if len(np.unique(ytr)) < 2:
        raise ValueError("linear probe needs at least two classes in training data")
    ncls = num_classes or int(max(ytr.max(), yte.max())) + 1
    mu = xtr.mean(axis=0)
    sd = xtr.std(axis=0)
    sd = np.where(sd < 1e-12, 1.0, sd)
    xtr, xte = (xtr - mu) / sd, (xte - mu) / sd

    w = parameter(np.zeros((xtr.shape[1], ncls)))
    b = parameter(np.zeros(ncls))
    opt = SGD({"w": w, "b": b}, SgdConfig(learning_rate=lr, momentum=0.9, weight_decay=weight_decay, lr_decay_every=0))
    xt = Tensor(xtr)
    losses = []
    for _ in range(epochs):
        opt.zero_grad()
        loss = softmax_xent(affine(xt, w, b), ytr)
        loss.backward()
        opt.step()
        losses.append(loss.item())
    pred = (xte @ w.data + b.data).argmax(axis=1)
    conf = np.zeros((ncls, ncls), dtype=np.int64)
    np.add.at(conf, (yte, pred), 1)
    return ProbeReport(float(np.mean(pred == yte)), conf, losses)
