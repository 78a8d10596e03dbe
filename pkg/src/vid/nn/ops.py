"""Differentiable operators used by the encoder, heads and losses."""

from __future__ import annotations

import numpy as np

from vid.errors import DegenerateInputError
from vid.nn.tensor import Tensor, as_tensor


def _triple(v) -> tuple[int, int, int]:
    if isinstance(v, int):
        return (v, v, v)
    t = tuple(int(x) for x in v)
    if len(t) != 3:
        raise ValueError(f"expected 3 values, got {v!r}")
    return t


def conv3d_output_shape(in_shape, kernel, stride=1, padding=0) -> tuple[int, int, int]:
    k, s, p = _triple(kernel), _triple(stride), _triple(padding)
    return tuple((n + 2 * pp - kk) // ss + 1 for n, kk, ss, pp in zip(in_shape, k, s, p))


def conv3d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of ``N x C x T x H x W`` input with ``O x C x kt x kh x kw`` weights."""
    xd, wd = x.data, w.data
    if xd.ndim != 5 or wd.ndim != 5:
        raise ValueError("conv3d expects 5-D input and weight")
    n, c = xd.shape[:2]
    o, wc, kt, kh, kw = wd.shape
    if wc != c:
        raise ValueError(f"input has {c} channels, weight expects {wc}")
    if b is not None and b.shape != (o,):
        raise ValueError(f"bias shape {b.shape} does not match {o} output channels")
    st, sh, sw = _triple(stride)
    pt, ph, pw = _triple(padding)
    to, ho, wo = conv3d_output_shape(xd.shape[2:], (kt, kh, kw), stride, padding)
    if min(to, ho, wo) < 1:
        raise ValueError("kernel larger than padded input")

    xp = np.pad(xd, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    cols = np.empty((n, c, kt, kh, kw, to, ho, wo), dtype=xd.dtype)
    for a in range(kt):
        for bb in range(kh):
            for cc in range(kw):
                cols[:, :, a, bb, cc] = xp[
                    :, :, a : a + st * to : st, bb : bb + sh * ho : sh, cc : cc + sw * wo : sw
                ]
    k = c * kt * kh * kw
    cols = cols.reshape(n, k, to * ho * wo)
    w2 = wd.reshape(o, k)
    out = np.matmul(w2, cols)
    if b is not None:
        out += b.data[None, :, None]
    out = out.reshape(n, o, to, ho, wo)

    def backward(g):
        g2 = g.reshape(n, o, to * ho * wo)
        gw = np.matmul(g2, cols.transpose(0, 2, 1)).sum(axis=0).reshape(wd.shape)
        gx = None
        if x.requires_grad:
            gcols = np.matmul(w2.T, g2).reshape(n, c, kt, kh, kw, to, ho, wo)
            gxp = np.zeros_like(xp)
            for a in range(kt):
                for bb in range(kh):
                    for cc in range(kw):
                        gxp[
                            :, :, a : a + st * to : st, bb : bb + sh * ho : sh, cc : cc + sw * wo : sw
                        ] += gcols[:, :, a, bb, cc]
            gx = gxp[:, :, pt : pt + xd.shape[2], ph : ph + xd.shape[3], pw : pw + xd.shape[4]]
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=(0, 2))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor.from_op(out, parents, backward, "conv3d")


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """``x @ w + b`` for ``x`` of shape ``B x D`` and ``w`` of shape ``D x O``."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"affine shape mismatch: x {x.shape}, w {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"bias shape {b.shape} does not match {w.shape[1]} outputs")
    xd, wd = x.data, w.data
    return Tensor.from_op(
        xd @ wd + b.data,
        (x, w, b),
        lambda g: (g @ wd.T, xd.T @ g, g.sum(axis=0)),
        "affine",
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def global_avg_pool(x: Tensor) -> Tensor:
    """Average over every axis after the first two: ``N x C x ... -> N x C``."""
    if x.ndim < 3:
        raise ValueError("global_avg_pool needs spatial axes")
    axes = tuple(range(2, x.ndim))
    count = int(np.prod(x.shape[2:]))
    shape = x.shape
    return Tensor.from_op(
        x.data.mean(axis=axes),
        (x,),
        lambda g: (np.broadcast_to(g.reshape(g.shape + (1,) * len(axes)) / count, shape).copy(),),
        "global_avg_pool",
    )


def _check_labels(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"label outside [0, {num_classes})")
    return labels


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_xent(logits: Tensor, labels) -> Tensor:
    """Mean softmax cross-entropy of ``B x C`` logits against integer labels.

    A 1-D ``logits`` with a scalar label is treated as a batch of one.
    """
    z = logits.data
    single = z.ndim == 1
    if single:
        z = z[None]
    if z.ndim != 2:
        raise ValueError("softmax_xent expects B x C logits")
    bsz, ncls = z.shape
    labels = _check_labels(np.atleast_1d(labels), ncls)
    if labels.shape != (bsz,):
        raise ValueError(f"{labels.shape[0]} labels for {bsz} rows")
    logp = log_softmax(z)
    loss = -logp[np.arange(bsz), labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[np.arange(bsz), labels] -= 1.0
        gz = g * p / bsz
        return (gz[0] if single else gz,)

    return Tensor.from_op(np.asarray(loss), (logits,), backward, "softmax_xent")


def _norms(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(n == 0):
        raise DegenerateInputError("zero-norm vector in cosine similarity")
    return n


def cosine(u: Tensor, v: Tensor) -> Tensor:
    """Cosine similarity along the last axis."""
    u, v = as_tensor(u), as_tensor(v)
    if u.shape != v.shape:
        raise ValueError(f"cosine shape mismatch: {u.shape} vs {v.shape}")
    nu, nv = _norms(u.data), _norms(v.data)
    uh, vh = u.data / nu, v.data / nv
    s = (uh * vh).sum(axis=-1)

    def backward(g):
        g = np.asarray(g)[..., None]
        sk = s[..., None]
        return g * (vh - sk * uh) / nu, g * (uh - sk * vh) / nv

    return Tensor.from_op(s, (u, v), backward, "cosine")


def l2_normalize(x: Tensor, floor: float = 0.0) -> Tensor:
    """Scale each row (last axis) to unit Euclidean norm.

    With ``floor > 0`` norms are clamped from below instead of rejecting
    zero rows, so an all-zero row maps to zero.
    """
    if floor > 0:
        n = np.linalg.norm(x.data, axis=-1, keepdims=True)
        clamped = n < floor
        n = np.maximum(n, floor)
    else:
        n = _norms(x.data)
        clamped = np.zeros(n.shape, dtype=bool)
    y = x.data / n

    def backward(g):
        radial = np.where(clamped, 0.0, (g * y).sum(axis=-1, keepdims=True))
        return ((g - y * radial) / n,)

    return Tensor.from_op(y, (x,), backward, "l2_normalize")


def take2d(x: Tensor, rows, cols) -> Tensor:
    """Gather ``x[rows, cols]`` from a 2-D tensor with integer index arrays."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    shape = x.shape

    def backward(g):
        gx = np.zeros(shape, dtype=g.dtype)
        np.add.at(gx, (rows, cols), g)
        return (gx,)

    return Tensor.from_op(x.data[rows, cols], (x,), backward, "take2d")
