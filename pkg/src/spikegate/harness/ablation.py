"""Experiment presets: neuron threshold, attention x time steps, time steps, coding."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..energy import energy_report, measure_activity
from ..tensor import SpikeTensor
from .config import RunConfig
from .plots import bars_svg
from .train import load_data, train

ATTENTION = {
    "none": dict(coding="direct", use_ca=False, use_sa=False),
    "CA": dict(coding="csgc", use_ca=True, use_sa=False),
    "SA": dict(coding="csgc", use_ca=False, use_sa=True),
    "CA+SA": dict(coding="csgc", use_ca=True, use_sa=True),
}


def preset_grid(preset: str) -> list[tuple[str, dict]]:
    """(label, config overrides) for every run of ``preset``."""
    if preset == "thresholds":
        return [(f"u_th={v}", {"u_th": v}) for v in (0.25, 0.5, 0.75, 1.0)]
    if preset == "attention":
        return [(f"{name},T={t}", {**over, "time_steps": t}) for t in (4, 6, 8) for name, over in ATTENTION.items()]
    if preset == "timesteps":
        return [(f"T={t}", {"time_steps": t}) for t in (4, 6, 8)]
    if preset == "coding":
        return [("direct", {"coding": "direct"}), ("csgc", {"coding": "csgc", "use_ca": True, "use_sa": True})]
    raise KeyError(f"unknown preset {preset!r}; expected thresholds, attention, timesteps or coding")


PRESETS = ("thresholds", "attention", "timesteps", "coding")


@dataclass
class AblationResult:
    preset: str
    metric_name: str
    rows: list[dict] = field(default_factory=list)
    logs: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["label", "coding", "use_ca", "use_sa", "time_steps", "u_th", "final_loss", "metric", "reduction", "seconds"]
        writer = csv.DictWriter(buf, fieldnames=cols, extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows)
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps({"preset": self.preset, "metric": self.metric_name, "rows": self.rows}, indent=2)

    def to_svg(self) -> str:
        return bars_svg([r["label"] for r in self.rows], [r["metric"] for r in self.rows], f"{self.preset}: {self.metric_name}")

    def metric(self, label: str) -> float:
        for r in self.rows:
            if r["label"] == label:
                return r["metric"]
        raise KeyError(label)

    def write(self, out_dir: str | Path) -> list[Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for ext, text in (("csv", self.to_csv()), ("json", self.to_json()), ("svg", self.to_svg())):
            p = out_dir / f"ablation_{self.preset}.{ext}"
            p.write_text(text, encoding="utf-8")
            paths.append(p)
        return paths


def run_ablation(preset: str, base: RunConfig | None = None, data=None, progress=None) -> AblationResult:
    """Train every config of ``preset`` on the same data and tabulate the results.

    The metric is the last-epoch training metric (accuracy for classify);
    ``reduction`` is the measured energy reduction on one batch after training.
    """
    base = base or RunConfig()
    grid = preset_grid(preset)
    data = load_data(base) if data is None else data
    result = AblationResult(preset, "train_accuracy" if base.task == "classify" else "ap2d_r11@0.5")
    for label, over in grid:
        cfg = base.replace(**over)
        t0 = time.perf_counter()
        log, model = train(cfg, data)
        probe = data[0][: cfg.batch_size] if cfg.task == "classify" else np.stack([s.image for s in data[: cfg.batch_size]])
        rep = energy_report(measure_activity(model, SpikeTensor(probe), cfg.time_steps))
        row = {
            "label": label,
            "coding": cfg.coding,
            "use_ca": cfg.use_ca,
            "use_sa": cfg.use_sa,
            "time_steps": cfg.time_steps,
            "u_th": cfg.u_th,
            "final_loss": log.losses[-1] if log.records else float("nan"),
            "metric": log.metrics[-1] if log.records else 0.0,
            "reduction": rep.reduction,
            "seconds": round(time.perf_counter() - t0, 3),
        }
        result.rows.append(row)
        result.logs[label] = log
        if progress is not None:
            progress(row)
    return result
