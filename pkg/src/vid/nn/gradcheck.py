"""Finite-difference checks for the autodiff engine.

The numerical side evaluates forward passes only, on raw numpy copies of the
inputs, so it shares nothing with the backward code it checks.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from vid.nn import ops
from vid.nn.tensor import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Largest elementwise ``|a - n| / max(|a| + |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(a - n) / np.maximum(np.abs(a) + np.abs(n), floor), initial=0.0))


def numerical_grad(f: Callable[[list[np.ndarray]], float], inputs: list[np.ndarray], eps: float = 1e-5):
    """Central differences of scalar ``f`` with respect to every input entry."""
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    grads = []
    for x in inputs:
        g = np.zeros_like(x)
        flat, gflat = x.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = f(inputs)
            flat[i] = orig - eps
            fm = f(inputs)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2 * eps)
        grads.append(g)
    return grads


def check_op(op: Callable[..., Tensor], inputs: list[np.ndarray], rng, eps: float = 1e-5) -> float:
    """Max relative error of ``op``'s gradients against central differences.

    The op output is reduced to a scalar by a fixed random weighting so every
    output element contributes.
    """
    out_shape = op(*[Tensor(x) for x in inputs]).shape
    weights = rng.standard_normal(out_shape)

    def scalar(xs):
        return float((op(*[Tensor(x) for x in xs]).data * weights).sum())

    ts = [Tensor(np.array(x, dtype=np.float64), requires_grad=True) for x in inputs]
    out = op(*ts)
    (out * Tensor(weights)).sum().backward()
    numeric = numerical_grad(scalar, inputs, eps)
    return max(relative_error(t.grad, n) for t, n in zip(ts, numeric))


def directional_check(
    f: Callable[[dict[str, np.ndarray]], Tensor],
    params: dict[str, np.ndarray],
    rng,
    num_directions: int = 10,
    eps: float = 1e-5,
) -> float:
    """Compare ``grad . d`` with a central difference along random unit ``d``.

    ``f`` maps a dict of arrays to a scalar Tensor; leaf Tensors are created
    from the dict for the analytic pass.
    """
    leaves = {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in params.items()}
    f(leaves).backward()
    grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in leaves.items()}
    worst = 0.0
    for _ in range(num_directions):
        d = {k: rng.standard_normal(v.shape) for k, v in params.items()}
        norm = np.sqrt(sum(float((x * x).sum()) for x in d.values()))
        d = {k: x / norm for k, x in d.items()}
        analytic = sum(float((grads[k] * d[k]).sum()) for k in params)
        plus = {k: Tensor(params[k] + eps * d[k]) for k in params}
        minus = {k: Tensor(params[k] - eps * d[k]) for k in params}
        numeric = (f(plus).item() - f(minus).item()) / (2 * eps)
        worst = max(worst, relative_error(analytic, numeric))
    return worst


def _away_from_zero(rng, shape, margin=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin, x)


def primitive_suite(rng) -> dict[str, float]:
    """Run the finite-difference check on every primitive; return max rel. error per op."""
    r = rng.standard_normal
    labels3 = np.array([2, 0, 1, 2])
    results = {
        "add": check_op(lambda a, b: a + b, [r((3, 4)), r((1, 4))], rng),
        "mul": check_op(lambda a, b: a * b, [r((3, 4)), r((3, 1))], rng),
        "div": check_op(lambda a, b: a / b, [r((3, 4)), 2.0 + np.abs(r((3, 4)))], rng),
        "matmul": check_op(lambda a, b: a @ b, [r((3, 4)), r((4, 2))], rng),
        "transpose": check_op(lambda a: a.T, [r((3, 4))], rng),
        "sum": check_op(lambda a: a.sum(axis=1), [r((3, 4))], rng),
        "mean": check_op(lambda a: a.mean(axis=0, keepdims=True), [r((3, 4))], rng),
        "reshape": check_op(lambda a: a.reshape(2, 6), [r((3, 4))], rng),
        "exp": check_op(lambda a: a.exp(), [r((3, 4))], rng),
        "log": check_op(lambda a: a.log(), [0.5 + np.abs(r((3, 4)))], rng),
        "conv3d": check_op(
            lambda x, w, b: ops.conv3d(x, w, b, stride=(1, 2, 2), padding=1),
            [r((2, 2, 4, 5, 5)), r((3, 2, 3, 3, 3)), r(3)],
            rng,
        ),
        "conv3d_nopad": check_op(
            lambda x, w, b: ops.conv3d(x, w, b, stride=2, padding=0),
            [r((1, 2, 5, 5, 4)), r((2, 2, 2, 3, 2)), r(2)],
            rng,
        ),
        "affine": check_op(ops.affine, [r((4, 5)), r((5, 3)), r(3)], rng),
        "relu": check_op(ops.relu, [_away_from_zero(rng, (4, 5))], rng),
        "global_avg_pool": check_op(ops.global_avg_pool, [r((2, 3, 2, 3, 3))], rng),
        "softmax_xent": check_op(lambda z: ops.softmax_xent(z, labels3), [r((4, 3))], rng),
        "cosine": check_op(ops.cosine, [r((3, 5)), r((3, 5))], rng),
        "l2_normalize": check_op(ops.l2_normalize, [r((3, 5))], rng),
        "take2d": check_op(
            lambda a: ops.take2d(a, [[0, 1, 1], [2, 0, 0]], [[1, 2, 2], [0, 0, 3]]), [r((3, 4))], rng
        ),
    }
    return results
