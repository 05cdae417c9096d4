"""Desk-scale spiking networks: encoder -> residual stages -> task head."""

from __future__ import annotations

import numpy as np

from ..blocks import BlockSpec, build_block
from ..csgc import CSGCEncoder, direct_encode
from ..neuron import LifParams, lif_forward
from ..nn import Module, PointwiseConv2d, fold_time, parameter, unfold_time
from ..tensor import SpikeTensor, ops
from .config import RunConfig


def lif_params(cfg: RunConfig) -> LifParams:
    return LifParams(tau=cfg.tau, u_th=cfg.u_th, surrogate_width=cfg.surrogate_width)


class SpikeNet(Module):
    """Shared trunk. Stage ``i`` uses ``widths[i]`` channels; stages after the first halve the resolution."""

    def __init__(
        self,
        cfg: RunConfig,
        in_channels: int,
        in_hw: tuple[int, int],
        head_channels: int,
        rng=None,
        first_stride: int = 1,
    ):
        rng = rng or np.random.default_rng(cfg.seed)
        self.cfg = cfg
        self.lif = lif_params(cfg)
        self.encoder = None
        if cfg.coding == "csgc" and (cfg.use_ca or cfg.use_sa):
            self.encoder = CSGCEncoder(in_channels, self.lif, use_ca=cfg.use_ca, use_sa=cfg.use_sa, rng=rng)
        h, w = in_hw
        c = in_channels
        self.stages = []
        for i, width in enumerate(cfg.widths):
            spec = BlockSpec(cfg.block, c, width, 3, first_stride if i == 0 else 2, h, w)
            self.stages.append(build_block(spec, self.lif, rng))
            h, w, c = spec.h_out, spec.w_out, width
        self.out_hw = (h, w)
        self.head = PointwiseConv2d(c, head_channels, rng=rng)
        self.head_bias = parameter(np.zeros(head_channels, np.float32))

    def encode(self, x: SpikeTensor, steps: int) -> SpikeTensor:
        if self.encoder is None:
            return direct_encode(x, steps)
        return self.encoder(x, steps)

    def features(self, x: SpikeTensor, steps: int) -> SpikeTensor:
        """Rate-decoded head output ``[B, head_channels, h, w]``."""
        y = self.encode(x, steps)
        for stage in self.stages:
            y = stage(y)
        spikes = lif_forward(y, self.lif)
        out = unfold_time(self.head(fold_time(spikes)), steps)
        out = ops.mean(out, axis=0)
        return ops.add(out, self.head_bias.reshape(1, -1, 1, 1))


class Classifier(SpikeNet):
    def __init__(self, cfg: RunConfig, in_channels: int = 3, rng=None):
        size = cfg.image_size
        super().__init__(cfg, in_channels, (size, size), cfg.num_classes, rng, cfg.first_stride)

    def forward(self, x: SpikeTensor, steps: int | None = None) -> SpikeTensor:
        """Logits ``[B, classes]``: spatially averaged firing-rate readout."""
        steps = steps or self.cfg.time_steps
        return ops.mean(self.features(x, steps), axis=(2, 3))


class Detector(SpikeNet):
    """Heatmap (``num_classes`` channels) plus the 8-value regression.

    The first stage always keeps full resolution, so three stages give the
    stride-4 output grid the decoder expects.
    """

    def __init__(self, cfg: RunConfig, num_classes: int = 1, in_channels: int = 3, rng=None):
        self.num_classes = num_classes
        super().__init__(cfg, in_channels, (cfg.detect_height, cfg.detect_width), num_classes + 8, rng)
        bias = np.zeros(num_classes + 8, np.float32)
        bias[:num_classes] = -2.19  # heatmap prior of about 0.1
        bias[num_classes + 7] = 1.0  # cos of the observation angle
        self.head_bias.data = bias

    def forward(self, x: SpikeTensor, steps: int | None = None) -> tuple[SpikeTensor, SpikeTensor]:
        steps = steps or self.cfg.time_steps
        out = self.features(x, steps)
        k = self.num_classes
        return out[:, :k], out[:, k:]

    @property
    def down_ratio(self) -> int:
        return self.cfg.detect_height // self.out_hw[0]


def build_model(cfg: RunConfig) -> SpikeNet:
    model = Classifier(cfg) if cfg.task == "classify" else Detector(cfg)
    model.assign_names()
    return model
