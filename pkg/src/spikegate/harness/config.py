"""Run configuration and its flat ``key=value`` file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any


@dataclass
class RunConfig:
    task: str = "classify"  # classify | detect
    coding: str = "csgc"  # direct | csgc
    time_steps: int = 4
    u_th: float = 0.75
    tau: float = 0.5
    surrogate_width: float = 1.0
    epochs: int = 20
    batch_size: int = 50
    lr: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 0.0
    # empty -> scaled from the 47/90-of-172 schedule
    decay_epochs: tuple[int, ...] = ()
    seed: int = 0
    block: str = "regular"  # regular | lightweight
    use_ca: bool = True
    use_sa: bool = True
    widths: tuple[int, ...] = (8, 16, 32)
    first_stride: int = 2  # classifier only; later stages always use stride 2
    samples: int = 5000
    image_size: int = 16
    num_classes: int = 10
    data_dir: str = ""  # CIFAR-10 binary batches; empty -> synthetic task
    flip: bool = False
    detect_height: int = 64
    detect_width: int = 128

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.task not in ("classify", "detect"):
            raise ValueError(f"task must be classify or detect, got {self.task!r}")
        if self.coding not in ("direct", "csgc"):
            raise ValueError(f"coding must be direct or csgc, got {self.coding!r}")
        if self.block not in ("regular", "lightweight"):
            raise ValueError(f"block must be regular or lightweight, got {self.block!r}")
        if not 1 <= self.time_steps <= 16:
            raise ValueError(f"time_steps must lie in 1..16, got {self.time_steps}")
        if not 0 < self.u_th <= 2:
            raise ValueError(f"u_th must lie in (0, 2], got {self.u_th}")
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if self.epochs < 0 or self.batch_size < 1 or self.samples < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and samples >= 1 required")
        if self.first_stride not in (1, 2):
            raise ValueError("first_stride must be 1 or 2")
        if not self.widths:
            raise ValueError("widths must name at least one stage")

    def schedule(self) -> tuple[int, ...]:
        """Epochs at which the learning rate is divided by 10."""
        if self.decay_epochs:
            return tuple(self.decay_epochs)
        return tuple(sorted({max(1, round(self.epochs * e / 172)) for e in (47, 90)}))

    def lr_at(self, epoch: int) -> float:
        drops = sum(1 for e in self.schedule() if epoch >= e)
        return self.lr / (10**drops)

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    # key=value file -----------------------------------------------------------

    def dumps(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name}={_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str, base: "RunConfig | None" = None) -> "RunConfig":
        values = parse_kv(text)
        return (base or cls()).with_overrides(values)

    def with_overrides(self, values: dict[str, str]) -> "RunConfig":
        known = {f.name: f for f in fields(self)}
        changes: dict[str, Any] = {}
        for key, raw in values.items():
            name = key.replace("-", "_")
            if name not in known:
                raise KeyError(f"unknown config key {key!r}")
            changes[name] = _coerce(getattr(self, name), raw)
        return dataclasses.replace(self, **changes)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        return cls.loads(Path(path).read_text(encoding="utf-8"))


def parse_kv(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(current, raw: str):
    if isinstance(current, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(current, int):
        return int(raw)
    if isinstance(current, float):
        return float(raw)
    if isinstance(current, tuple):
        return tuple(int(x) for x in raw.split(",") if x.strip())
    return raw
