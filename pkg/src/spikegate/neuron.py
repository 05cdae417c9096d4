"""Discrete-time leaky integrate-and-fire neurons.

Per step::

    U[t] = H[t-1] + I[t]
    S[t] = 1 if U[t] >= u_th else 0
    H[t] = tau * U[t] * (1 - S[t]) + u_reset * S[t]

The spike is an exact Heaviside step in the forward pass; gradients flow
through a rectangular surrogate window of width ``surrogate_width``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nn import Module
from .tensor import ShapeError, SpikeTensor, ops
from .tensor.ops import surrogate_grad


@dataclass(frozen=True)
class LifParams:
    tau: float = 0.5
    u_th: float = 0.75
    u_reset: float = 0.0
    surrogate_width: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if not self.u_th > self.u_reset:
            raise ValueError(f"u_th ({self.u_th}) must exceed u_reset ({self.u_reset})")
        if not self.surrogate_width > 0:
            raise ValueError("surrogate_width must be positive")


class NonFiniteError(ValueError):
    """A neuron received NaN or inf input current."""


@dataclass
class LifState:
    h: SpikeTensor

    @classmethod
    def zeros(cls, shape, dtype=np.float32) -> "LifState":
        return cls(SpikeTensor(np.zeros(shape, dtype=dtype), dtype=dtype))


def lif_step(
    state: LifState, input_current: SpikeTensor, params: LifParams, smooth: bool = False
) -> tuple[SpikeTensor, LifState]:
    if input_current.shape != state.h.shape:
        raise ShapeError(f"lif_step: input shape {input_current.shape} != state shape {state.h.shape}")
    if not np.all(np.isfinite(input_current.data)):
        raise NonFiniteError("lif_step: non-finite input current")
    u = ops.add(state.h, input_current)
    s = ops.spike(ops.sub(u, params.u_th), params.surrogate_width, smooth=smooth)
    keep = ops.sub(1.0, s)
    h = ops.mul(ops.scalar_mul(u, params.tau), keep)
    if params.u_reset != 0.0:
        h = ops.add(h, ops.scalar_mul(s, params.u_reset))
    return s, LifState(h)


def lif_forward(inputs: SpikeTensor, params: LifParams, smooth: bool = False) -> SpikeTensor:
    """Run the neuron over the leading time axis from a zero membrane.

    Returns the stacked spike maps ``[T, ...]``.
    """
    if inputs.ndim < 1 or inputs.shape[0] == 0:
        raise ValueError("lif_forward: need at least one time step")
    state = LifState.zeros(inputs.shape[1:], dtype=inputs.dtype)
    spikes = []
    for t in range(inputs.shape[0]):
        s, state = lif_step(state, inputs[t], params, smooth=smooth)
        spikes.append(s)
    return ops.stack(spikes, axis=0)


def lif_trace(inputs: SpikeTensor, params: LifParams) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Forward-only run that also returns membrane potentials U and H per step."""
    state = LifState.zeros(inputs.shape[1:], dtype=inputs.dtype)
    us, ss, hs = [], [], []
    for t in range(inputs.shape[0]):
        u = state.h.data + inputs.data[t]
        s, state = lif_step(state, inputs[t], params)
        us.append(u)
        ss.append(s.data)
        hs.append(state.h.data)
    return np.stack(us), np.stack(ss), np.stack(hs)


def heaviside_surrogate_backward(u_minus_th, width: float = 1.0) -> np.ndarray:
    return surrogate_grad(np.asarray(u_minus_th), width)


class LIF(Module):
    """LIF layer over ``[T, B, ...]`` inputs."""

    kind = "lif"

    def __init__(self, params: LifParams | None = None):
        self.params = params or LifParams()

    def forward(self, x: SpikeTensor) -> SpikeTensor:
        return lif_forward(x, self.params)
