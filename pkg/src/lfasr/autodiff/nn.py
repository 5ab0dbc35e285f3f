"""Parameter containers and convolution layers."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .tensor import Tensor


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution layer. Padding is "same" (zeros)."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, ...]
    dilation: tuple[int, ...] | int = 1
    stride: tuple[int, ...] | int = 1

    def __post_init__(self):
        nd = len(self.kernel)
        dil = (self.dilation,) * nd if isinstance(self.dilation, int) else tuple(self.dilation)
        st = (self.stride,) * nd if isinstance(self.stride, int) else tuple(self.stride)
        object.__setattr__(self, "kernel", tuple(int(k) for k in self.kernel))
        object.__setattr__(self, "dilation", dil)
        object.__setattr__(self, "stride", st)
        if len(dil) != nd or len(st) != nd:
            raise ValueError("kernel, dilation and stride must have the same rank")
        if any(k < 1 or k % 2 == 0 for k in self.kernel):
            raise ValueError(f"kernel extents must be odd for same padding, got {self.kernel}")
        if min(dil) < 1 or min(st) < 1:
            raise ValueError("dilation and stride must be >= 1")
        if self.in_channels < 1 or self.out_channels < 1:
            raise ValueError("channel counts must be >= 1")

    @property
    def padding(self) -> tuple[int, ...]:
        return tuple(d * (k - 1) // 2 for k, d in zip(self.kernel, self.dilation))

    @property
    def weight_shape(self) -> tuple[int, ...]:
        return (self.out_channels, self.in_channels) + self.kernel

    def to_dict(self) -> dict:
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel": list(self.kernel),
            "dilation": list(self.dilation),
            "stride": list(self.stride),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ConvSpec":
        return cls(d["in_channels"], d["out_channels"], tuple(d["kernel"]),
                   tuple(d["dilation"]), tuple(d["stride"]))


class Module:
    """Owns named :class:`Tensor` parameters and child modules."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Tensor) and value.requires_grad:
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(name + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
        return out

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def num_parameters(self) -> int:
        return sum(p.size for p in self.parameters())

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None


class Conv(Module):
    """Same-padded 2-d or 3-d convolution with Kaiming-uniform init."""

    def __init__(self, spec: ConvSpec, rng: np.random.Generator | None = None, zero: bool = False):
        self.spec = spec
        fan_in = spec.in_channels * math.prod(spec.kernel)
        if zero:
            w = np.zeros(spec.weight_shape)
        else:
            if rng is None:
                raise ValueError("rng is required for random init")
            bound = math.sqrt(6.0 / fan_in)
            w = rng.uniform(-bound, bound, size=spec.weight_shape)
        self.weight = Tensor(w, requires_grad=True)
        self.bias = Tensor(np.zeros(spec.out_channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return ops.convnd(x, self.weight, self.bias, self.spec.stride, self.spec.padding, self.spec.dilation)
