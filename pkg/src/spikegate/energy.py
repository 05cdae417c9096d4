"""Energy accounting: dense MACs at 4.6 pJ versus synaptic accumulates at 0.9 pJ.

During an instrumented forward pass every conv / linear / norm layer reports
its input. Layers fed binary spikes are costed by synaptic operations
(input spikes x fan-out); layers fed analog values (the CSGC gate path,
norms) are costed as dense MACs in both modes.
"""

from __future__ import annotations

import contextlib
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn

E_AC_PJ = 0.9
E_MAC_PJ = 4.6


def ec_snn(sops: float, e_ac: float = E_AC_PJ) -> float:
    if sops < 0:
        raise ValueError("synaptic operation count must be >= 0")
    return sops * e_ac


def ec_ann(flops: float, e_mac: float = E_MAC_PJ) -> float:
    if flops < 0:
        raise ValueError("FLOP count must be >= 0")
    return flops * e_mac


def reduction_ratio(ec_snn_pj: float, ec_ann_pj: float) -> float:
    """Fractional saving ``1 - EC_SNN / EC_ANN``."""
    if ec_ann_pj <= 0:
        raise ZeroDivisionError("ANN energy must be positive")
    return 1.0 - ec_snn_pj / ec_ann_pj


class SpikingPurityError(RuntimeError):
    pass


@dataclass
class LayerActivity:
    """Per-sample activity of one layer, summed over time steps."""

    layer: str
    kind: str
    spiking: bool
    input_size: int  # input elements per sample per step
    spike_count: float  # batch-averaged, summed over steps
    fan_out: float  # dense-equivalent MACs per input element
    flops_ann: int  # dense MACs per sample for one pass / one step
    steps: int  # how many steps the layer ran (1 for the per-sample gate path)

    @property
    def sops(self) -> float:
        return self.spike_count * self.flops_ann / self.input_size if self.spiking else 0.0

    @property
    def analog_flops(self) -> int:
        """MACs charged at the multiply rate in SNN mode (non-spiking layers)."""
        return 0 if self.spiking else self.flops_ann * self.steps


class ActivityRecorder:
    """Collects :class:`LayerActivity` entries for one forward pass."""

    def __init__(self, steps: int, batch: int, snn_mode: bool = True):
        self.steps = steps
        self.batch = batch
        self.snn_mode = snn_mode
        self._totals: dict[str, dict] = {}
        self.dumps: dict[str, list[np.ndarray]] = {}
        self.keep_dumps = False

    def observe(self, layer: nn.Module, x, out) -> None:
        data = x.data
        name = layer.name or f"{type(layer).__name__}@{id(layer):x}"
        kind = layer.kind
        if kind == "linear":
            per_app_input = data.shape[-1]
            apps = data.size // per_app_input
            per_app_flops = layer.dense_flops()
        else:
            per_app_input = int(np.prod(data.shape[1:]))
            apps = data.shape[0]
            per_app_flops = layer.dense_flops(out.shape[2], out.shape[3])
        spiking = layer.spiking
        if spiking and self.snn_mode and not np.all((data == 0) | (data == 1)):
            raise SpikingPurityError(f"layer {name}: non-binary input in SNN mode")
        # layers inside the time loop see T*B applications; the CSGC gate path
        # runs once per sample
        if apps % (self.steps * self.batch) == 0:
            per_step, steps_run = apps // (self.steps * self.batch), self.steps
        else:
            per_step, steps_run = max(apps // self.batch, 1), 1
        entry = self._totals.setdefault(
            name,
            {
                "kind": kind,
                "spiking": spiking,
                "input_size": per_app_input * per_step,
                "spikes": 0,
                "flops": per_app_flops * per_step,
                "steps": steps_run,
            },
        )
        if spiking:
            entry["spikes"] += int(np.count_nonzero(data))
            if self.keep_dumps:
                self.dumps.setdefault(name, []).append(data.copy())

    def activities(self) -> list[LayerActivity]:
        acts = []
        for name, e in self._totals.items():
            fan_out = e["flops"] / e["input_size"]
            acts.append(
                LayerActivity(
                    layer=name,
                    kind=e["kind"],
                    spiking=e["spiking"],
                    input_size=e["input_size"],
                    spike_count=e["spikes"] / self.batch,
                    fan_out=fan_out,
                    flops_ann=e["flops"],
                    steps=e["steps"],
                )
            )
        return acts


@contextlib.contextmanager
def recording(steps: int, batch: int, snn_mode: bool = True, keep_dumps: bool = False):
    rec = ActivityRecorder(steps, batch, snn_mode)
    rec.keep_dumps = keep_dumps
    nn._RECORDERS.append(rec)
    try:
        yield rec
    finally:
        nn._RECORDERS.remove(rec)


def measure_activity(model, inputs, steps: int, keep_dumps: bool = False) -> list[LayerActivity]:
    """Run ``model(inputs, steps)`` once under instrumentation."""
    from .tensor import no_grad

    model.assign_names()
    batch = inputs.shape[0]
    with no_grad(), recording(steps, batch, keep_dumps=keep_dumps) as rec:
        model(inputs, steps)
    return rec.activities()


@dataclass
class EnergyReport:
    layers: list[dict] = field(default_factory=list)
    ec_snn_pj: float = 0.0
    ec_ann_pj: float = 0.0
    reduction: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def energy_report(
    activities: list[LayerActivity], e_ac: float = E_AC_PJ, e_mac: float = E_MAC_PJ
) -> EnergyReport:
    """SNN energy = SOPs*e_ac + analog MACs*e_mac; ANN energy = dense MACs*e_mac (one pass)."""
    rows = []
    snn_total = ann_total = 0.0
    for a in activities:
        snn = ec_snn(a.sops, e_ac) + ec_ann(a.analog_flops, e_mac)
        ann = ec_ann(a.flops_ann, e_mac)
        snn_total += snn
        ann_total += ann
        rows.append(
            {
                "layer": a.layer,
                "kind": a.kind,
                "spiking": a.spiking,
                "spike_count": a.spike_count,
                "spike_rate": a.spike_count / (a.input_size * a.steps) if a.input_size else 0.0,
                "fan_out": a.fan_out,
                "sops": a.sops,
                "flops_ann": a.flops_ann,
                "ec_snn_pj": snn,
                "ec_ann_pj": ann,
            }
        )
    reduction = reduction_ratio(snn_total, ann_total) if ann_total > 0 else None
    return EnergyReport(rows, snn_total, ann_total, reduction)


def merge_activities(parts: list[list[LayerActivity]]) -> list[LayerActivity]:
    """Associative reduce of per-pass activity lists (spike counts averaged per sample)."""
    if not parts:
        return []
    merged: dict[str, LayerActivity] = {}
    for part in parts:
        for a in part:
            if a.layer in merged:
                m = merged[a.layer]
                merged[a.layer] = LayerActivity(**{**asdict(m), "spike_count": m.spike_count + a.spike_count})
            else:
                merged[a.layer] = a
    n = len(parts)
    return [LayerActivity(**{**asdict(a), "spike_count": a.spike_count / n}) for a in merged.values()]
