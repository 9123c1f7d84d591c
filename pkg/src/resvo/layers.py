"""Functional float64 layers over flat ``{name: tensor}`` parameter dicts.

Every forward takes its parameters explicitly so that a parameter dict produced
by a differentiable update (``theta + beta * grad``) can be plugged straight in.
"""

from __future__ import annotations

import math
from typing import Mapping

import numpy as np
import torch

Params = dict[str, torch.Tensor]
DTYPE = torch.float64


def init_linear(params: Params, name: str, fan_in: int, fan_out: int, gen: torch.Generator | None,
                zero: bool = False, scale: float = 1.0) -> None:
    if zero:
        params[f"{name}.w"] = torch.zeros(fan_in, fan_out, dtype=DTYPE)
    else:
        bound = scale / math.sqrt(fan_in)
        params[f"{name}.w"] = (torch.rand(fan_in, fan_out, generator=gen, dtype=DTYPE) * 2 - 1) * bound
    params[f"{name}.b"] = torch.zeros(fan_out, dtype=DTYPE)


def linear(params: Mapping[str, torch.Tensor], name: str, x: torch.Tensor) -> torch.Tensor:
    return x @ params[f"{name}.w"] + params[f"{name}.b"]


def init_mlp(sizes: list[int], gen: torch.Generator | None, prefix: str = "mlp", zero_last: bool = False) -> Params:
    params: Params = {}
    for k in range(len(sizes) - 1):
        last = k == len(sizes) - 2
        init_linear(params, f"{prefix}{k}", sizes[k], sizes[k + 1], gen, zero=zero_last and last)
    return params


def mlp(params: Mapping[str, torch.Tensor], x: torch.Tensor, depth: int, prefix: str = "mlp") -> torch.Tensor:
    # tanh keeps second derivatives non-zero, which the bi-level update needs
    for k in range(depth):
        x = linear(params, f"{prefix}{k}", x)
        if k < depth - 1:
            x = torch.tanh(x)
    return x


def init_conv(params: Params, name: str, in_ch: int, out_ch: int, size: int, gen: torch.Generator | None) -> None:
    bound = 1.0 / math.sqrt(in_ch * size * size)
    params[f"{name}.w"] = (torch.rand(out_ch, in_ch, size, size, generator=gen, dtype=DTYPE) * 2 - 1) * bound
    params[f"{name}.b"] = torch.zeros(out_ch, dtype=DTYPE)


def conv(params: Mapping[str, torch.Tensor], name: str, x: torch.Tensor) -> torch.Tensor:
    return torch.nn.functional.conv2d(x, params[f"{name}.w"], params[f"{name}.b"])


def torch_generator(rng: np.random.Generator) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(int(rng.integers(0, 2**62)))
    return gen


def detach(params: Mapping[str, torch.Tensor], requires_grad: bool = True) -> Params:
    return {k: v.detach().clone().requires_grad_(requires_grad) for k, v in params.items()}


def num_parameters(params: Mapping[str, torch.Tensor]) -> int:
    return sum(v.numel() for v in params.values())


ARCHS = ("tabular", "dense", "conv")


class Net:
    """Observation trunk plus a side input, ending in a linear head.

    ``tabular`` is a single affine map of the one-hot features, ``dense`` adds one
    tanh hidden layer, ``conv`` runs a 3x3 convolution over channel-first grid
    observations before the dense head.
    """

    def __init__(self, arch: str, obs_shape: tuple[int, ...], extra_dim: int, out_dim: int,
                 hidden: int = 32, channels: int = 6):
        if arch not in ARCHS:
            raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHS}")
        if arch == "conv" and len(obs_shape) != 3:
            raise ValueError(f"conv nets need (channels, height, width) observations, got {obs_shape}")
        self.arch, self.obs_shape, self.extra_dim, self.out_dim = arch, tuple(obs_shape), extra_dim, out_dim
        self.hidden, self.channels = hidden, channels
        if arch == "conv":
            c, h, w = obs_shape
            self.flat_dim = channels * (h - 2) * (w - 2)
        else:
            self.flat_dim = int(np.prod(obs_shape))

    def init(self, gen: torch.Generator | None, zero_head: bool = False, heads: int = 1) -> Params:
        params: Params = {}
        width = self.flat_dim + self.extra_dim
        if self.arch == "conv":
            init_conv(params, "conv", self.obs_shape[0], self.channels, 3, gen)
        if self.arch != "tabular":
            init_linear(params, "hidden", width, self.hidden, gen)
            width = self.hidden
        for h in range(heads):
            init_linear(params, f"head{h}", width, self.out_dim, gen, zero=zero_head)
        return params

    def features(self, params: Mapping[str, torch.Tensor], obs: torch.Tensor, extra: torch.Tensor) -> torch.Tensor:
        lead = obs.shape[: obs.dim() - len(self.obs_shape)]
        if self.arch == "conv":
            x = torch.tanh(conv(params, "conv", obs.reshape(-1, *self.obs_shape)))
            x = x.reshape(*lead, self.flat_dim)
        else:
            x = obs.reshape(*lead, self.flat_dim)
        x = torch.cat([x, extra], dim=-1)
        if self.arch != "tabular":
            x = torch.tanh(linear(params, "hidden", x))
        return x

    def forward(self, params: Mapping[str, torch.Tensor], obs: torch.Tensor, extra: torch.Tensor,
                head: int = 0) -> torch.Tensor:
        return linear(params, f"head{head}", self.features(params, obs, extra))
