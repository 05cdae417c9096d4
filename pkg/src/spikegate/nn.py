"""Parameter containers and layers built on the tensor ops."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from .tensor import SpikeTensor, ops

# active activity recorders (see energy.recording)
_RECORDERS: list = []


def _record(layer: "Module", x: SpikeTensor, out: SpikeTensor) -> None:
    for rec in _RECORDERS:
        rec.observe(layer, x, out)


def parameter(data: np.ndarray) -> SpikeTensor:
    return SpikeTensor(data, requires_grad=True)


def kaiming_uniform(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / max(fan_in, 1))
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def gn_groups(channels: int) -> int:
    """Group count: 32 groups, 16 below 32 channels, one per channel below 16."""
    if channels >= 32 and channels % 32 == 0:
        return 32
    if channels >= 16 and channels % 16 == 0:
        return 16
    return channels


class Module:
    name: str = ""

    def set_spiking(self, flag: bool) -> None:
        """Mark every layer below as fed by spikes (SOP-costed) or analog values."""
        for _, mod in self.named_modules():
            if hasattr(type(mod), "spiking") and mod.kind != "norm":
                mod.spiking = flag

    def children(self) -> Iterator[tuple[str, "Module"]]:
        for key, val in vars(self).items():
            if isinstance(val, Module):
                yield key, val
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield f"{key}.{i}", item

    def named_modules(self, prefix: str = "") -> Iterator[tuple[str, "Module"]]:
        yield prefix, self
        for key, child in self.children():
            yield from child.named_modules(f"{prefix}.{key}" if prefix else key)

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, SpikeTensor]]:
        for key, val in vars(self).items():
            if isinstance(val, SpikeTensor) and val.requires_grad:
                yield (f"{prefix}.{key}" if prefix else key), val
        for key, child in self.children():
            yield from child.named_parameters(f"{prefix}.{key}" if prefix else key)

    def parameters(self) -> list[SpikeTensor]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self) -> None:
        for path, mod in self.named_modules():
            mod.name = path or type(self).__name__

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        missing = set(params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in params.items():
            arr = np.asarray(state[k], dtype=p.dtype)
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {p.shape}")
            p.data = arr.copy()

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Conv2d(Module):
    kind = "conv"
    spiking = True

    def __init__(self, c_in: int, c_out: int, k: int, stride: int = 1, rng=None):
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out, self.k, self.stride = c_in, c_out, k, stride
        self.weight = parameter(kaiming_uniform(rng, (c_out, c_in, k, k), c_in * k * k))

    def forward(self, x: SpikeTensor) -> SpikeTensor:
        out = ops.conv2d(x, self.weight, self.stride, self.k // 2)
        _record(self, x, out)
        return out

    def dense_flops(self, h_out: int, w_out: int) -> int:
        return self.k * self.k * self.c_in * self.c_out * h_out * w_out


class DepthwiseConv2d(Module):
    kind = "depthwise"
    spiking = True

    def __init__(self, channels: int, k: int, stride: int = 1, rng=None):
        rng = rng or np.random.default_rng(0)
        self.c_in = self.c_out = channels
        self.k, self.stride = k, stride
        self.weight = parameter(kaiming_uniform(rng, (channels, 1, k, k), k * k))

    def forward(self, x: SpikeTensor) -> SpikeTensor:
        out = ops.depthwise_conv2d(x, self.weight, self.stride, self.k // 2)
        _record(self, x, out)
        return out

    def dense_flops(self, h_out: int, w_out: int) -> int:
        return self.k * self.k * self.c_in * h_out * w_out


class PointwiseConv2d(Module):
    kind = "pointwise"
    spiking = True

    def __init__(self, c_in: int, c_out: int, stride: int = 1, rng=None):
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out, self.stride = c_in, c_out, stride
        self.k = 1
        self.weight = parameter(kaiming_uniform(rng, (c_out, c_in, 1, 1), c_in))

    def forward(self, x: SpikeTensor) -> SpikeTensor:
        out = ops.pointwise_conv2d(x, self.weight, self.stride)
        _record(self, x, out)
        return out

    def dense_flops(self, h_out: int, w_out: int) -> int:
        return self.c_in * self.c_out * h_out * w_out


class Linear(Module):
    kind = "linear"
    spiking = True

    def __init__(self, n_in: int, n_out: int, bias: bool = False, rng=None):
        rng = rng or np.random.default_rng(0)
        self.c_in, self.c_out = n_in, n_out
        self.weight = parameter(kaiming_uniform(rng, (n_out, n_in), n_in))
        self.bias = parameter(np.zeros(n_out, np.float32)) if bias else None

    def forward(self, x: SpikeTensor) -> SpikeTensor:
        out = ops.linear(x, self.weight, self.bias)
        _record(self, x, out)
        return out

    def dense_flops(self, h_out: int = 1, w_out: int = 1) -> int:
        return self.c_in * self.c_out


class GroupNorm(Module):
    kind = "norm"
    spiking = False

    def __init__(self, channels: int, groups: int | None = None, eps: float = 1e-5):
        self.channels = channels
        self.groups = groups or gn_groups(channels)
        self.eps = eps
        self.weight = parameter(np.ones(channels, np.float32))
        self.bias = parameter(np.zeros(channels, np.float32))

    def forward(self, x: SpikeTensor) -> SpikeTensor:
        out = ops.group_norm(x, self.groups, self.weight, self.bias, self.eps)
        _record(self, x, out)
        return out

    def forward_seq(self, x: SpikeTensor) -> SpikeTensor:
        """Normalize a ``[T,B,C,H,W]`` sequence with statistics shared across time.

        Per-step statistics break down when a step is silent (the first step
        of a deep layer often is): the group variance is zero and the backward
        pass scales by 1/sqrt(eps). Pooling the T steps per sample avoids that.
        """
        t, b, c, h, w = x.shape
        seq = x.transpose((1, 2, 0, 3, 4)).reshape(b, c, t * h, w)
        out = self(seq)
        return out.reshape(b, c, t, h, w).transpose((2, 0, 1, 3, 4))

    def dense_flops(self, h_out: int, w_out: int) -> int:
        # scale and shift per element
        return 2 * self.channels * h_out * w_out


def fold_time(x: SpikeTensor) -> SpikeTensor:
    """[T,B,...] -> [T*B,...]"""
    return x.reshape((x.shape[0] * x.shape[1],) + x.shape[2:])


def unfold_time(x: SpikeTensor, steps: int) -> SpikeTensor:
    return x.reshape((steps, x.shape[0] // steps) + x.shape[1:])


class SGD:
    """SGD with momentum; the only writer of parameter data."""

    def __init__(self, params: list[SpikeTensor], lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.params = list(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        if self.lr == 0.0:
            return
        for p, v in zip(self.params, self._velocity):
            if p.grad is None:
                continue
            g = p.grad
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            v *= self.momentum
            v += g
            p.data = (p.data - self.lr * v).astype(p.dtype)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
