"""Membrane-shortcut residual blocks and their analytic cost counters.

Both blocks take membrane-like input ``[T, B, C_in, H, W]`` and return
``[T, B, C_out, H', W']``; every convolution consumes the spikes of the LIF
layer right before it.

Regular::

    LIF -> Conv kxk (stride) -> GN -> LIF -> Conv kxk -> GN   (+ shortcut)

Lightweight::

    LIF -> DW kxk (stride) -> GN -> LIF -> PW 1x1 -> GN -> LIF -> DW kxk -> GN   (+ shortcut)

The shortcut is the raw input when shapes agree, otherwise a strided 1x1
conv over the first LIF layer's spikes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Literal

import numpy as np

from .neuron import LifParams, lif_forward
from .nn import Conv2d, DepthwiseConv2d, GroupNorm, Module, PointwiseConv2d, fold_time, unfold_time
from .tensor import ShapeError, SpikeTensor, ops

BlockKind = Literal["regular", "lightweight"]

# debug switch: assert every conv input is binary
CHECK_SPIKING_PURITY = False


@dataclass(frozen=True)
class BlockSpec:
    kind: BlockKind
    c_in: int
    c_out: int
    k: int = 3
    stride: int = 1
    h: int = 8
    w: int = 8

    def __post_init__(self):
        if self.kind not in ("regular", "lightweight"):
            raise ValueError(f"unknown block kind {self.kind!r}")
        if self.k % 2 == 0 or self.k < 1:
            raise ValueError(f"kernel size must be odd, got {self.k}")
        if self.stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {self.stride}")
        if self.c_in < 1 or self.c_out < 1:
            raise ValueError("channel counts must be >= 1")

    @property
    def h_out(self) -> int:
        return (self.h + 2 * (self.k // 2) - self.k) // self.stride + 1

    @property
    def w_out(self) -> int:
        return (self.w + 2 * (self.k // 2) - self.k) // self.stride + 1

    @property
    def needs_projection(self) -> bool:
        return self.stride != 1 or self.c_in != self.c_out


@dataclass(frozen=True)
class LayerCost:
    name: str
    params: int
    flops: int


@dataclass
class CostReport:
    """Main-path conv costs (``layers``) and the shortcut projection, kept apart."""

    layers: list[LayerCost] = field(default_factory=list)
    shortcut: LayerCost | None = None

    @property
    def params(self) -> int:
        return sum(c.params for c in self.layers)

    @property
    def flops(self) -> int:
        return sum(c.flops for c in self.layers)

    @property
    def params_with_shortcut(self) -> int:
        return self.params + (self.shortcut.params if self.shortcut else 0)

    @property
    def flops_with_shortcut(self) -> int:
        return self.flops + (self.shortcut.flops if self.shortcut else 0)


def conv_cost(k: int, c_in: int, c_out: int, h_out: int, w_out: int) -> LayerCost:
    """Vanilla conv: params k*k*Cin*Cout, MACs k*k*Cin*Cout*Hout*Wout."""
    params = k * k * c_in * c_out
    return LayerCost("conv", params, params * h_out * w_out)


def _shortcut_cost(spec: BlockSpec) -> LayerCost | None:
    if not spec.needs_projection:
        return None
    params = spec.c_in * spec.c_out
    return LayerCost("shortcut_1x1", params, params * spec.h_out * spec.w_out)


def count_regular(spec: BlockSpec) -> CostReport:
    ho, wo, k = spec.h_out, spec.w_out, spec.k
    first = conv_cost(k, spec.c_in, spec.c_out, ho, wo)
    second = conv_cost(k, spec.c_out, spec.c_out, ho, wo)
    return CostReport(
        [LayerCost("conv1", first.params, first.flops), LayerCost("conv2", second.params, second.flops)],
        _shortcut_cost(spec),
    )


def count_lightweight(spec: BlockSpec) -> CostReport:
    """Depthwise (k^2*Cin) + pointwise (Cin*Cout) + second depthwise (k^2*Cout)."""
    ho, wo, k = spec.h_out, spec.w_out, spec.k
    px = ho * wo
    dw1 = k * k * spec.c_in
    pw = spec.c_in * spec.c_out
    dw2 = k * k * spec.c_out
    return CostReport(
        [
            LayerCost("dw1", dw1, dw1 * px),
            LayerCost("pw", pw, pw * px),
            LayerCost("dw2", dw2, dw2 * px),
        ],
        _shortcut_cost(spec),
    )


def count(spec: BlockSpec) -> CostReport:
    return count_regular(spec) if spec.kind == "regular" else count_lightweight(spec)


@dataclass(frozen=True)
class CostRatio:
    params: Fraction
    flops: Fraction


def cost_ratio(spec: BlockSpec) -> CostRatio:
    """Lightweight / regular cost for the same channels, kernel and stride."""
    reg = count_regular(BlockSpec("regular", spec.c_in, spec.c_out, spec.k, spec.stride, spec.h, spec.w))
    light = count_lightweight(BlockSpec("lightweight", spec.c_in, spec.c_out, spec.k, spec.stride, spec.h, spec.w))
    return CostRatio(Fraction(light.params, reg.params), Fraction(light.flops, reg.flops))


def replacement_ratio(k: int, c_in: int, c_out: int) -> Fraction:
    """Cost of one depthwise+pointwise pair relative to the vanilla conv it replaces."""
    return Fraction(k * k * c_in + c_in * c_out, k * k * c_in * c_out)


def claimed_ratio(c_in: int) -> float:
    """The closed form 1/(2*Cin) + 1/27 printed alongside the "about 27x" claim."""
    return 1.0 / (2 * c_in) + 1.0 / 27.0


# forward ---------------------------------------------------------------------


def _check_binary(x: SpikeTensor, where: str) -> None:
    if CHECK_SPIKING_PURITY and not np.all((x.data == 0) | (x.data == 1)):
        raise AssertionError(f"{where}: conv input is not a binary spike map")


def _spiking(layer, spikes: SpikeTensor, steps: int, where: str) -> SpikeTensor:
    _check_binary(spikes, where)
    return unfold_time(layer(fold_time(spikes)), steps)


class _Block(Module):
    def __init__(self, spec: BlockSpec, lif: LifParams | None, rng):
        self.spec = spec
        self.lif = lif or LifParams()
        self.rng = rng or np.random.default_rng(0)
        self.shortcut = (
            PointwiseConv2d(spec.c_in, spec.c_out, stride=spec.stride, rng=self.rng)
            if spec.needs_projection
            else None
        )

    def conv_layers(self) -> list[Module]:
        raise NotImplementedError

    def _shortcut(self, x: SpikeTensor, first_spikes: SpikeTensor) -> SpikeTensor:
        if self.shortcut is None:
            return x
        return _spiking(self.shortcut, first_spikes, x.shape[0], "shortcut")

    def _join(self, main: SpikeTensor, short: SpikeTensor) -> SpikeTensor:
        if main.shape != short.shape:
            raise ShapeError(f"shortcut join: main path {main.shape} vs shortcut {short.shape}")
        return ops.add(main, short)


class RegularBlock(_Block):
    def __init__(self, spec: BlockSpec, lif: LifParams | None = None, rng=None):
        if spec.kind != "regular":
            raise ValueError("RegularBlock needs spec.kind == 'regular'")
        super().__init__(spec, lif, rng)
        self.conv1 = Conv2d(spec.c_in, spec.c_out, spec.k, spec.stride, rng=self.rng)
        self.norm1 = GroupNorm(spec.c_out)
        self.conv2 = Conv2d(spec.c_out, spec.c_out, spec.k, 1, rng=self.rng)
        self.norm2 = GroupNorm(spec.c_out)

    def conv_layers(self):
        return [self.conv1, self.conv2]

    def forward(self, x: SpikeTensor) -> SpikeTensor:
        steps = x.shape[0]
        s0 = lif_forward(x, self.lif)
        y = _spiking(self.conv1, s0, steps, "conv1")
        y = self.norm1.forward_seq(y)
        s1 = lif_forward(y, self.lif)
        y = _spiking(self.conv2, s1, steps, "conv2")
        y = self.norm2.forward_seq(y)
        return self._join(y, self._shortcut(x, s0))


class LightweightBlock(_Block):
    def __init__(self, spec: BlockSpec, lif: LifParams | None = None, rng=None):
        if spec.kind != "lightweight":
            raise ValueError("LightweightBlock needs spec.kind == 'lightweight'")
        super().__init__(spec, lif, rng)
        self.dw1 = DepthwiseConv2d(spec.c_in, spec.k, spec.stride, rng=self.rng)
        self.norm1 = GroupNorm(spec.c_in)
        self.pw = PointwiseConv2d(spec.c_in, spec.c_out, rng=self.rng)
        self.norm2 = GroupNorm(spec.c_out)
        self.dw2 = DepthwiseConv2d(spec.c_out, spec.k, 1, rng=self.rng)
        self.norm3 = GroupNorm(spec.c_out)

    def conv_layers(self):
        return [self.dw1, self.pw, self.dw2]

    def forward(self, x: SpikeTensor) -> SpikeTensor:
        steps = x.shape[0]
        s0 = lif_forward(x, self.lif)
        y = _spiking(self.dw1, s0, steps, "dw1")
        y = self.norm1.forward_seq(y)
        s1 = lif_forward(y, self.lif)
        y = _spiking(self.pw, s1, steps, "pw")
        y = self.norm2.forward_seq(y)
        s2 = lif_forward(y, self.lif)
        y = _spiking(self.dw2, s2, steps, "dw2")
        y = self.norm3.forward_seq(y)
        return self._join(y, self._shortcut(x, s0))


def build_block(spec: BlockSpec, lif: LifParams | None = None, rng=None) -> _Block:
    cls = RegularBlock if spec.kind == "regular" else LightweightBlock
    return cls(spec, lif, rng)


def regular_block_forward(x: SpikeTensor, spec: BlockSpec, lif: LifParams | None = None, block=None) -> SpikeTensor:
    if spec.kind != "regular":
        raise ValueError("regular_block_forward needs a regular spec")
    return (block or RegularBlock(spec, lif))(x)


def lightweight_block_forward(x: SpikeTensor, spec: BlockSpec, lif: LifParams | None = None, block=None) -> SpikeTensor:
    if spec.kind != "lightweight":
        raise ValueError("lightweight_block_forward needs a lightweight spec")
    return (block or LightweightBlock(spec, lif))(x)
