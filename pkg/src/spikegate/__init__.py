"""Spiking-network kit: LIF neurons, gated spike coding, membrane-shortcut blocks,
3D detection decoding, AP evaluation and energy accounting on a small numpy autodiff core."""

__version__ = "0.1.0"
