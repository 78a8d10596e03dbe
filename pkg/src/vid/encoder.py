"""Small 3D CNN encoder: conv + ReLU stages, then global average pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from vid.nn import Tensor, conv3d, global_avg_pool, parameter, relu


@dataclass(frozen=True)
class EncoderSpec:
    channels: tuple[int, ...] = (8, 16, 32)
    kernels: tuple[tuple[int, int, int], ...] = ((3, 3, 3),) * 3
    strides: tuple[tuple[int, int, int], ...] = ((1, 2, 2), (2, 2, 2), (2, 2, 2))
    in_channels: int = 3
    # None: "same"-style padding of kernel // 2 on every axis
    padding: tuple[tuple[int, int, int], ...] | None = None

    def __post_init__(self):
        n = len(self.channels)
        if not (len(self.kernels) == len(self.strides) == n):
            raise ValueError("channels, kernels and strides must have one entry per stage")
        if self.padding is not None and len(self.padding) != n:
            raise ValueError("padding must have one entry per stage")

    @classmethod
    def for_clip(cls, clip_len: int, channels=(8, 16, 32), in_channels: int = 3) -> "EncoderSpec":
        """Desk-scale default: two spatially strided 3x3x3 stages, then a stage
        whose temporal kernel spans the whole clip (no temporal padding), so
        pooled features keep the position of temporal events."""
        return cls(
            channels=tuple(channels),
            kernels=((3, 3, 3), (3, 3, 3), (clip_len, 3, 3)),
            strides=((1, 2, 2), (1, 2, 2), (1, 2, 2)),
            in_channels=in_channels,
            padding=((1, 1, 1), (1, 1, 1), (0, 1, 1)),
        )

    @property
    def feature_dim(self) -> int:
        return self.channels[-1]

    @property
    def paddings(self) -> tuple[tuple[int, int, int], ...]:
        if self.padding is not None:
            return self.padding
        return tuple(tuple(k // 2 for k in ks) for ks in self.kernels)

    def to_dict(self) -> dict:
        return {
            "channels": list(self.channels),
            "kernels": [list(k) for k in self.kernels],
            "strides": [list(s) for s in self.strides],
            "in_channels": self.in_channels,
            "padding": [list(p) for p in self.paddings],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderSpec":
        return cls(
            channels=tuple(d["channels"]),
            kernels=tuple(tuple(k) for k in d["kernels"]),
            strides=tuple(tuple(s) for s in d["strides"]),
            in_channels=d["in_channels"],
            padding=tuple(tuple(p) for p in d["padding"]) if d.get("padding") else None,
        )


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    # He-uniform bound keeps activations O(1) through ReLU stages without normalization
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def init_encoder(spec: EncoderSpec, rng: np.random.Generator, dtype=np.float64) -> dict[str, Tensor]:
    params = {}
    cin = spec.in_channels
    for i, (cout, k) in enumerate(zip(spec.channels, spec.kernels)):
        fan_in = cin * int(np.prod(k))
        params[f"enc.conv{i}.w"] = parameter(fan_in_uniform(rng, (cout, cin, *k), fan_in, dtype))
        params[f"enc.conv{i}.b"] = parameter(np.zeros(cout, dtype=dtype))
        cin = cout
    return params


def encode(spec: EncoderSpec, params: dict[str, Tensor], x) -> Tensor:
    """Map ``N x C x T x H x W`` clips to ``N x feature_dim`` pooled features."""
    h = x if isinstance(x, Tensor) else Tensor(x)
    for i, (stride, pad) in enumerate(zip(spec.strides, spec.paddings)):
        h = relu(conv3d(h, params[f"enc.conv{i}.w"], params[f"enc.conv{i}.b"], stride, pad))
    return global_avg_pool(h)
