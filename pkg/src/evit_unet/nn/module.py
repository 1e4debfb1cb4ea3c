"""Parameter containers and the primitive layers the blocks are built from."""

from __future__ import annotations

import math
from typing import Iterator, Optional

import numpy as np

from ..core import ops
from ..core.tensor import Tensor


class Module:
    """Holds parameters, buffers and child modules in assignment order."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple]:
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self) -> list:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_buffers(prefix + name + ".")

    def named_modules(self, prefix: str = "") -> Iterator[tuple]:
        yield prefix.rstrip("."), self
        for name, m in self._modules.items():
            yield from m.named_modules(prefix + name + ".")

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_params(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Sequence(Module):
    """Indexed list of child modules; children are named "0", "1", ..."""

    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, m: Module) -> None:
        self._modules[str(len(self._items))] = m
        self._items.append(m)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> Tensor:
    bound = math.sqrt(6.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), requires_grad=True)


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int, dtype) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype), requires_grad=True)


def zeros(shape, dtype) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def full(shape, value, dtype) -> Tensor:
    return Tensor(np.full(shape, value, dtype=dtype), requires_grad=True)


class Conv2d(Module):
    def __init__(self, cin, cout, kernel, rng, dtype, stride=1, pad=0, bias=True):
        super().__init__()
        self.stride, self.pad = stride, pad
        self.weight = kaiming_uniform(rng, (cout, cin, kernel, kernel), cin * kernel * kernel, dtype)
        if bias:
            self.bias = zeros((cout,), dtype)
        else:
            self.bias = None

    def forward(self, x):
        return ops.conv2d(x, self.weight, self.bias, self.stride, self.pad)


class DepthwiseConv2d(Module):
    def __init__(self, channels, kernel, rng, dtype, stride=1, pad=0, bias=True):
        super().__init__()
        self.stride, self.pad = stride, pad
        self.weight = kaiming_uniform(rng, (channels, 1, kernel, kernel), kernel * kernel, dtype)
        if bias:
            self.bias = zeros((channels,), dtype)
        else:
            self.bias = None

    def forward(self, x):
        return ops.depthwise_conv2d(x, self.weight, self.bias, self.stride, self.pad)


class BatchNorm2d(Module):
    def __init__(self, channels, dtype, momentum=0.1, eps=1e-5, shift=True):
        super().__init__()
        self.momentum, self.eps = momentum, eps
        self.weight = full((channels,), 1.0, dtype)
        self.bias = zeros((channels,), dtype) if shift else None
        self.register_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.register_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x, mode="train"):
        return ops.batchnorm2d(x, self.weight, self.bias, self.running_mean, self.running_var,
                               mode, self.momentum, self.eps)


class ConvNorm(Module):
    """Convolution (dense or depthwise) followed by batch norm and an optional GELU.

    The conv carries no bias: the norm's shift makes it redundant. ``shift=False``
    drops the norm's shift too, for outputs whose consumer ignores it.
    """

    def __init__(self, cin, cout, kernel, rng, dtype, stride=1, pad=0, act=False, depthwise=False,
                 shift=True):
        super().__init__()
        if depthwise:
            self.conv = DepthwiseConv2d(cin, kernel, rng, dtype, stride, pad, bias=False)
        else:
            self.conv = Conv2d(cin, cout, kernel, rng, dtype, stride, pad, bias=False)
        self.norm = BatchNorm2d(cout, dtype, shift=shift)
        self.act = act

    def forward(self, x, mode="train"):
        y = self.norm(self.conv(x), mode)
        return ops.gelu(y) if self.act else y


class Linear(Module):
    def __init__(self, fan_in, fan_out, rng, dtype, bias=True):
        super().__init__()
        self.weight = xavier_uniform(rng, fan_out, fan_in, dtype)
        self.bias: Optional[Tensor] = zeros((fan_out,), dtype) if bias else None

    def forward(self, x):
        return ops.linear(x, self.weight, self.bias)
