"""Surrogate-gradient training loop (BPTT through the T steps)."""

from __future__ import annotations

import contextlib
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..detect import Priors, build_targets, decode_maps, detection_loss
from ..energy import energy_report, measure_activity
from ..metrics import MatchConfig, ap_r11, match_and_pr
from ..neuron import NonFiniteError
from ..nn import SGD
from ..tensor import SpikeTensor, backward, no_grad, ops
from .config import RunConfig
from .data import SyntheticScene, gen_synthetic_scenes, load_cifar10, synthetic_classification
from .model import Classifier, Detector, SpikeNet, build_model

log = logging.getLogger(__name__)


class NumericError(RuntimeError):
    """Raised when the loss turns non-finite; ``dump`` names the saved batch."""

    def __init__(self, message: str, dump: str | None = None):
        super().__init__(message)
        self.dump = dump


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    metric: float
    seconds: float
    energy: dict | None = None


@dataclass
class MetricsLog:
    task: str
    metric_name: str
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord) -> None:
        if self.records and rec.epoch <= self.records[-1].epoch:
            raise ValueError("epoch indices must increase")
        self.records.append(rec)

    @property
    def losses(self) -> list[float]:
        return [r.loss for r in self.records]

    @property
    def metrics(self) -> list[float]:
        return [r.metric for r in self.records]

    def comparable(self) -> list[tuple]:
        """Everything except wall time, for run-to-run comparisons."""
        return [(r.epoch, r.loss, r.metric, r.energy) for r in self.records]

    def to_csv(self) -> str:
        lines = ["epoch,loss,metric,seconds"]
        lines += [f"{r.epoch},{r.loss!r},{r.metric!r},{r.seconds:.3f}" for r in self.records]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"task": self.task, "metric_name": self.metric_name, "records": [asdict(r) for r in self.records]}


@contextlib.contextmanager
def single_thread(enabled: bool = True):
    """Pin BLAS pools to one thread so reductions run in a fixed order."""
    if not enabled:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=1):
        yield


def load_data(cfg: RunConfig):
    """Training data for ``cfg``: (x, y) arrays for classify, scenes for detect."""
    if cfg.task == "detect":
        return gen_synthetic_scenes(cfg.samples, cfg.seed, cfg.detect_width, cfg.detect_height)
    if cfg.data_dir:
        x, y = load_cifar10(cfg.data_dir)
        return x[: cfg.samples], y[: cfg.samples]
    return synthetic_classification(cfg.samples, cfg.seed, cfg.image_size, cfg.num_classes)


def _dump_batch(path: Path, **arrays) -> str:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez(path, **arrays)
    return str(path)


def _check_finite(loss: SpikeTensor, epoch: int, step: int, dump_dir: Path | None, **batch) -> None:
    value = float(loss.data)
    if math.isfinite(value):
        return
    dump = None
    if dump_dir is not None:
        dump = _dump_batch(dump_dir / f"nan_batch_e{epoch}_s{step}.npz", **batch)
    raise NumericError(f"non-finite loss {value} at epoch {epoch}, step {step}", dump)


@contextlib.contextmanager
def _numeric_guard(epoch: int, step: int, dump_dir: Path | None, **batch):
    """Turn NaN/inf reaching a neuron into a NumericError with a batch dump."""
    try:
        yield
    except NonFiniteError as exc:
        dump = _dump_batch(dump_dir / f"nan_batch_e{epoch}_s{step}.npz", **batch) if dump_dir is not None else None
        raise NumericError(f"{exc} at epoch {epoch}, step {step}", dump) from None


def accuracy(model: Classifier, x: np.ndarray, y: np.ndarray, batch: int = 200) -> float:
    correct = 0
    with no_grad():
        for i in range(0, len(x), batch):
            logits = model(SpikeTensor(x[i : i + batch]))
            correct += int((logits.data.argmax(axis=1) == y[i : i + batch]).sum())
    return correct / len(x)


def detect_ap(model: Detector, scenes: list[SyntheticScene], batch: int = 16, iou: float = 0.5) -> float:
    """AP|R11 in 2D at ``iou`` over the given scenes (no difficulty filter)."""
    dets, gts = [], []
    with no_grad():
        for i in range(0, len(scenes), batch):
            part = scenes[i : i + batch]
            heat, reg = model(SpikeTensor(np.stack([s.image for s in part])))
            prob = 1.0 / (1.0 + np.exp(-heat.data.astype(np.float64)))
            decoded = decode_maps(prob, reg.data, part[0].calib, down_ratio=model.down_ratio)
            dets.extend(decoded)
            gts.extend(s.objects for s in part)
    return ap_r11(match_and_pr(dets, gts, MatchConfig(iou, "2d", None, 0)))


def _energy_snapshot(model: SpikeNet, sample: np.ndarray, steps: int) -> dict:
    rep = energy_report(measure_activity(model, SpikeTensor(sample), steps))
    return {"ec_snn_pj": rep.ec_snn_pj, "ec_ann_pj": rep.ec_ann_pj, "reduction": rep.reduction}


def _flip(x: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    mask = rng.random(len(x)) < 0.5
    out = x.copy()
    out[mask] = out[mask][..., ::-1]
    return out


def train(
    cfg: RunConfig,
    data=None,
    model: SpikeNet | None = None,
    dump_dir: str | Path | None = None,
    energy_every: int = 0,
    progress=None,
) -> tuple[MetricsLog, SpikeNet]:
    """Train ``cfg`` on ``data`` (loaded from ``cfg`` when omitted).

    Returns the per-epoch log and the trained model. ``energy_every`` > 0 adds
    an energy snapshot (first batch, no grad) every that many epochs.
    """
    data = load_data(cfg) if data is None else data
    model = model or build_model(cfg)
    opt = SGD(model.parameters(), cfg.lr, cfg.momentum, cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed + 1)
    dump_path = Path(dump_dir) if dump_dir is not None else None
    if cfg.task == "classify":
        log_ = MetricsLog("classify", "train_accuracy")
        step_fn = _classify_epoch
    else:
        log_ = MetricsLog("detect", "ap2d_r11@0.5")
        step_fn = _detect_epoch
    for epoch in range(1, cfg.epochs + 1):
        opt.lr = cfg.lr_at(epoch - 1)
        t0 = time.perf_counter()
        loss, metric, probe = step_fn(cfg, model, opt, data, rng, epoch, dump_path)
        energy = None
        if energy_every and epoch % energy_every == 0:
            energy = _energy_snapshot(model, probe, cfg.time_steps)
        rec = EpochRecord(epoch, loss, metric, time.perf_counter() - t0, energy)
        log_.append(rec)
        log.info("epoch %d loss %.4f %s %.4f", epoch, loss, log_.metric_name, metric)
        if progress is not None:
            progress(rec)
    return log_, model


def _classify_epoch(cfg, model, opt, data, rng, epoch, dump_dir):
    x, y = data
    order = rng.permutation(len(x))
    total, correct, seen = 0.0, 0, 0
    for step, i in enumerate(range(0, len(x), cfg.batch_size)):
        idx = order[i : i + cfg.batch_size]
        xb, yb = x[idx], y[idx]
        if cfg.flip:
            xb = _flip(xb, rng)
        opt.zero_grad()
        with _numeric_guard(epoch, step, dump_dir, x=xb, y=yb):
            logits = model(SpikeTensor(xb))
        loss = ops.cross_entropy(logits, yb)
        _check_finite(loss, epoch, step, dump_dir, x=xb, y=yb)
        backward(loss)
        opt.step()
        total += float(loss.data) * len(idx)
        correct += int((logits.data.argmax(axis=1) == yb).sum())
        seen += len(idx)
    return total / seen, correct / seen, x[: min(len(x), cfg.batch_size)]


def _detect_epoch(cfg, model, opt, scenes, rng, epoch, dump_dir):
    order = rng.permutation(len(scenes))
    total, seen = 0.0, 0
    for step, i in enumerate(range(0, len(scenes), cfg.batch_size)):
        part = [scenes[j] for j in order[i : i + cfg.batch_size]]
        xb = np.stack([s.image for s in part])
        opt.zero_grad()
        with _numeric_guard(epoch, step, dump_dir, x=xb):
            heat, reg = model(SpikeTensor(xb))
        targets = build_targets([s.objects for s in part], part[0].calib, heat.shape[2:], model.num_classes, Priors(), model.down_ratio)
        loss, _ = detection_loss(heat, reg, targets)
        _check_finite(loss, epoch, step, dump_dir, x=xb)
        backward(loss)
        opt.step()
        total += float(loss.data) * len(part)
        seen += len(part)
    probe = np.stack([s.image for s in scenes[: min(len(scenes), cfg.batch_size)]])
    return total / seen, detect_ap(model, scenes), probe


def evaluate_model(cfg: RunConfig, model: SpikeNet, data) -> float:
    if cfg.task == "classify":
        return accuracy(model, *data)
    return detect_ap(model, data)
