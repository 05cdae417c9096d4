"""Cross-scale gated coding and the direct-coding baseline.

The encoder runs channel attention and a three-scale spatial attention in
parallel on the static input, squashes their Hadamard product through a
sigmoid, and uses that map to filter the spike train of a dedicated LIF
layer driven by the input repeated over time.
"""

from __future__ import annotations

import numpy as np

from .neuron import LifParams, lif_forward
from .nn import Conv2d, Linear, Module, parameter
from .tensor import ShapeError, SpikeTensor, ops

BRANCH_KERNELS = (3, 5, 7)


class ChannelAttention(Module):
    """Global average pool, then Linear -> ReLU -> Linear (no biases)."""

    def __init__(self, channels: int, ratio: int = 4, rng=None):
        rng = rng or np.random.default_rng(0)
        hidden = max(channels // ratio, 1)
        self.fc1 = Linear(channels, hidden, rng=rng)
        self.fc2 = Linear(hidden, channels, rng=rng)

    def forward(self, x: SpikeTensor) -> SpikeTensor:
        b, c = x.shape[:2]
        pooled = ops.mean(x, axis=(2, 3))
        z = self.fc2(ops.relu(self.fc1(pooled)))
        return z.reshape(b, c, 1, 1)


class SpatialAttention(Module):
    """alpha*Conv3(ReLU(Conv3 x)) + beta*Conv5(...) + gamma*Conv7(...) + x."""

    def __init__(self, channels: int, rng=None, init_weight: float = 1.0 / 3.0):
        rng = rng or np.random.default_rng(0)
        self.branches = [
            (Conv2d(channels, channels, k, rng=rng), Conv2d(channels, channels, k, rng=rng)) for k in BRANCH_KERNELS
        ]
        # alpha, beta, gamma
        self.scales = parameter(np.full(len(BRANCH_KERNELS), init_weight, np.float32))

    def children(self):
        yield from super().children()
        for k, (first, second) in zip(BRANCH_KERNELS, self.branches):
            yield f"conv{k}a", first
            yield f"conv{k}b", second

    def branch(self, i: int, x: SpikeTensor) -> SpikeTensor:
        first, second = self.branches[i]
        return second(ops.relu(first(x)))

    def forward(self, x: SpikeTensor) -> SpikeTensor:
        out = x
        for i in range(len(BRANCH_KERNELS)):
            out = ops.add(out, ops.mul(self.branch(i, x), self.scales[i]))
        return out


def gate(sa: SpikeTensor, ca: SpikeTensor) -> SpikeTensor:
    """sigmoid(SA * CA), broadcasting CA [B,C,1,1] over the spatial axes."""
    return ops.sigmoid(ops.mul(sa, ca))


class CSGCEncoder(Module):
    """Gated spike encoder producing ``[T, B, C, H, W]`` in [0, 1).

    ``use_ca`` / ``use_sa`` switch the two attention paths off for ablations;
    a disabled channel path contributes ones, a disabled spatial path passes
    the input through.
    """

    def __init__(
        self,
        channels: int,
        lif: LifParams | None = None,
        ratio: int = 4,
        use_ca: bool = True,
        use_sa: bool = True,
        rng=None,
    ):
        rng = rng or np.random.default_rng(0)
        self.lif = lif or LifParams()
        self.use_ca, self.use_sa = use_ca, use_sa
        self.ca = ChannelAttention(channels, ratio, rng=rng) if use_ca else None
        self.sa = SpatialAttention(channels, rng=rng) if use_sa else None
        # the attention paths see the analog image, not spikes
        self.set_spiking(False)

    def gate_map(self, x: SpikeTensor) -> SpikeTensor:
        sa = self.sa(x) if self.sa is not None else x
        if self.ca is None:
            return ops.sigmoid(sa)
        return gate(sa, self.ca(x))

    def forward(self, x: SpikeTensor, steps: int) -> SpikeTensor:
        return csgc_encode(x, steps, self)


def channel_attention(x: SpikeTensor, params: ChannelAttention) -> SpikeTensor:
    return params(x)


def spatial_attention(x: SpikeTensor, params: SpatialAttention) -> SpikeTensor:
    return params(x)


def csgc_encode(x: SpikeTensor, steps: int, encoder: CSGCEncoder, lif: LifParams | None = None) -> SpikeTensor:
    """Gate computed once from ``x``; spikes from a LIF layer fed ``x`` each step."""
    if steps < 1:
        raise ValueError("csgc_encode: time steps must be >= 1")
    if x.ndim != 4:
        raise ShapeError(f"csgc_encode: expected [B,C,H,W], got {x.shape}")
    lif = lif or encoder.lif
    g = encoder.gate_map(x)
    spikes = lif_forward(ops.repeat_time(x, steps), lif)
    return ops.mul(g, spikes)


def direct_encode(x: SpikeTensor, steps: int) -> SpikeTensor:
    """Static input repeated unchanged at every time step."""
    if steps < 1:
        raise ValueError("direct_encode: time steps must be >= 1")
    return ops.repeat_time(x, steps)
