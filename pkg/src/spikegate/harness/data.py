"""Datasets: CIFAR-10 binary batches, a synthetic 10-class image task, synthetic driving scenes."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..detect import CameraCalib, Detection3D, Priors, project_box2d

CIFAR_RECORD = 1 + 3 * 32 * 32
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))


class DataFormatError(ValueError):
    pass


# CIFAR-10 ---------------------------------------------------------------------


def parse_cifar_batch(blob: bytes, source: str = "<bytes>") -> tuple[np.ndarray, np.ndarray]:
    """Raw ``(labels uint8 [N], pixels uint8 [N,3,32,32])`` from one binary batch."""
    if not blob:
        raise DataFormatError(f"{source}: empty file, expected records of {CIFAR_RECORD} bytes")
    if len(blob) % CIFAR_RECORD:
        offset = (len(blob) // CIFAR_RECORD) * CIFAR_RECORD
        raise DataFormatError(
            f"{source}: size {len(blob)} is not a multiple of {CIFAR_RECORD}; incomplete record at byte offset {offset}"
        )
    recs = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = recs[:, 0].copy()
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        i = int(bad[0])
        raise DataFormatError(f"{source}: corrupt record {i} at byte offset {i * CIFAR_RECORD}: label {labels[i]} > 9")
    pixels = recs[:, 1:].reshape(-1, 3, 32, 32).copy()
    return labels, pixels


def read_cifar_batch(path: str | Path) -> tuple[np.ndarray, np.ndarray]:
    return parse_cifar_batch(Path(path).read_bytes(), str(path))


def format_cifar_batch(labels: np.ndarray, pixels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype=np.uint8).reshape(-1, 1)
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(labels.shape[0], -1)
    if pixels.shape[1] != CIFAR_RECORD - 1:
        raise DataFormatError(f"pixel rows must hold {CIFAR_RECORD - 1} bytes")
    return np.concatenate([labels, pixels], axis=1).tobytes()


def write_cifar_batch(path: str | Path, labels: np.ndarray, pixels: np.ndarray) -> None:
    Path(path).write_bytes(format_cifar_batch(labels, pixels))


def load_cifar10(directory: str | Path, train: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Images scaled to [0, 1] and standardized per channel, plus int labels."""
    directory = Path(directory)
    names = CIFAR_TRAIN_FILES if train else ("test_batch.bin",)
    files = [directory / n for n in names if (directory / n).exists()]
    if not files:
        raise DataFormatError(f"no CIFAR-10 batches found in {directory}")
    labels, pixels = zip(*(read_cifar_batch(f) for f in files))
    y = np.concatenate(labels).astype(np.int64)
    x = np.concatenate(pixels).astype(np.float32) / 255.0
    return standardize(x), y


def standardize(x: np.ndarray) -> np.ndarray:
    mean = x.mean(axis=(0, 2, 3), keepdims=True)
    std = x.std(axis=(0, 2, 3), keepdims=True)
    return ((x - mean) / np.where(std > 0, std, 1.0)).astype(np.float32)


# synthetic classification -----------------------------------------------------


def synthetic_classification(
    n: int, seed: int = 0, size: int = 16, num_classes: int = 10, noise: float = 0.15
) -> tuple[np.ndarray, np.ndarray]:
    """Blob-position/colour classes with jitter and pixel noise, standardized.

    Class ``c`` places a Gaussian blob at one of ``num_classes`` anchors on a
    ring and tints it with a class colour; both are jittered per sample.
    """
    if n < 1:
        raise ValueError("need at least one sample")
    rng = np.random.default_rng(seed)
    y = rng.integers(0, num_classes, size=n)
    angles = 2 * np.pi * np.arange(num_classes) / num_classes
    radius = size * 0.3
    anchors = np.stack([size / 2 + radius * np.sin(angles), size / 2 + radius * np.cos(angles)], axis=1)
    colors = np.stack(
        [0.5 + 0.5 * np.cos(angles + k * 2 * np.pi / 3) for k in range(3)], axis=1
    ).astype(np.float32)
    rows, cols = np.mgrid[0:size, 0:size].astype(np.float32)
    centers = anchors[y] + rng.normal(0, 0.6, size=(n, 2))
    sigma = size * 0.12 * rng.uniform(0.8, 1.2, size=n)
    d2 = (rows[None] - centers[:, 0, None, None]) ** 2 + (cols[None] - centers[:, 1, None, None]) ** 2
    blob = np.exp(-d2 / (2 * sigma[:, None, None] ** 2)).astype(np.float32)
    tint = colors[y] * rng.uniform(0.8, 1.2, size=(n, 3))
    x = blob[:, None] * tint[:, :, None, None]
    x = x + rng.normal(0, noise, size=x.shape)
    return standardize(x.astype(np.float32)), y.astype(np.int64)


# synthetic driving scenes ---------------------------------------------------------


@dataclass
class SyntheticScene:
    calib: CameraCalib
    objects: list[Detection3D]
    image: np.ndarray  # [3, H, W]


def scene_calib(width: int = 128, height: int = 64) -> CameraCalib:
    """KITTI-like pinhole scaled to a ``width`` x ``height`` image."""
    scale = width / 1242.0
    f = 721.5377 * scale
    P = np.array([[f, 0.0, width / 2.0, 0.0], [0.0, f, height * 0.46, 0.0], [0.0, 0.0, 1.0, 0.0]])
    return CameraCalib(P, width, height)


def _render(calib: CameraCalib, objects: list[Detection3D]) -> np.ndarray:
    h, w = calib.height, calib.width
    img = np.zeros((3, h, w), np.float32)
    horizon = int(calib.P[1, 2])
    rows = np.arange(h, dtype=np.float32)[:, None]
    sky = np.clip(1.0 - rows / max(horizon, 1), 0, 1)
    img[2] += 0.6 * sky * np.ones((1, w))
    img[1] += np.where(rows > horizon, 0.25, 0.0) * np.ones((1, w))
    for det in sorted(objects, key=lambda d: -d.location[2]):
        left, top, right, bottom = det.box2d
        shade = float(np.clip(1.2 - det.location[2] / 60.0, 0.2, 1.0))
        r0, r1 = int(math.floor(top)), int(math.ceil(bottom)) + 1
        c0, c1 = int(math.floor(left)), int(math.ceil(right)) + 1
        img[0, r0:r1, c0:c1] = shade
        img[1, r0:r1, c0:c1] = 0.3 * shade
        img[2, r0:r1, c0:c1] = 0.1
    return img


def gen_synthetic_scenes(
    n: int,
    seed: int = 0,
    width: int = 128,
    height: int = 64,
    priors: Priors = Priors(),
    max_objects: int = 6,
) -> list[SyntheticScene]:
    """Reproducible scenes with 1..``max_objects`` cars sampled around the priors.

    Depth is a normal around the prior mean truncated symmetrically at +/-1.6
    sigma, so the sample mean stays at the prior mean.
    """
    if n < 1:
        raise ValueError("need at least one scene")
    rng = np.random.default_rng(seed)
    calib = scene_calib(width, height)
    lo = priors.depth_mean - 1.6 * priors.depth_std
    hi = priors.depth_mean + 1.6 * priors.depth_std
    scenes = []
    for _ in range(n):
        objs = []
        for _ in range(int(rng.integers(1, max_objects + 1))):
            z = float(rng.normal(priors.depth_mean, priors.depth_std))
            while not lo <= z <= hi:
                z = float(rng.normal(priors.depth_mean, priors.depth_std))
            dims = tuple(float(d * rng.uniform(0.9, 1.1)) for d in priors.dims)
            u = rng.uniform(0.1 * width, 0.9 * width)
            x = (u - calib.P[0, 2]) * z / calib.P[0, 0]
            ground_y = 1.65  # camera height above the road, meters
            yaw = float(rng.uniform(-math.pi, math.pi))
            det = Detection3D(0, 1.0, (float(x), ground_y, z), dims, yaw)
            det.alpha = yaw - math.atan2(x, z)
            det.box2d = project_box2d(det, calib)
            if det.box2d[2] - det.box2d[0] < 1 or det.box2d[3] - det.box2d[1] < 1:
                continue
            objs.append(det)
        if not objs:
            fallback = Detection3D(0, 1.0, (0.0, 1.65, priors.depth_mean), priors.dims, 0.0)
            fallback.box2d = project_box2d(fallback, calib)
            objs.append(fallback)
        scenes.append(SyntheticScene(calib, objs, _render(calib, objs)))
    return scenes


def sample_depths(n: int, seed: int = 0, priors: Priors = Priors()) -> np.ndarray:
    """All object depths from ``n`` generated scenes (for distribution checks)."""
    return np.array([d.location[2] for s in gen_synthetic_scenes(n, seed, priors=priors) for d in s.objects])


__all__ = [
    "DataFormatError",
    "SyntheticScene",
    "gen_synthetic_scenes",
    "load_cifar10",
    "read_cifar_batch",
    "synthetic_classification",
    "write_cifar_batch",
]
