"""Keypoint heatmap head decoding into metric 3D boxes.

Camera frame follows KITTI: x right, y down, z forward. ``Detection3D.location``
is the bottom-face center of the box (the KITTI label convention); the
keypoint the network regresses is the projected gravity center, which sits
``h / 2`` above it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .tensor import SpikeTensor, ops

CLASSES = ("Car", "Pedestrian", "Cyclist", "Van", "Truck", "Person_sitting", "Tram", "Misc", "DontCare")

DEFAULT_DOWN_RATIO = 4
DEFAULT_SCORE_THRESH = 0.25
DEFAULT_MAX_DETS = 50


@dataclass(frozen=True)
class Priors:
    """Car mean dimensions (h, w, l) and depth statistics, meters."""

    dims: tuple[float, float, float] = (1.63, 1.53, 3.88)
    depth_mean: float = 28.01
    depth_std: float = 16.32

    def __post_init__(self):
        if min(self.dims) <= 0 or self.depth_mean <= 0 or self.depth_std <= 0:
            raise ValueError("priors must be positive")


@dataclass(frozen=True)
class CameraCalib:
    P: np.ndarray  # 3x4
    width: int = 1242
    height: int = 375

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64).reshape(3, 4)
        object.__setattr__(self, "P", P)
        if P[0, 0] <= 0 or P[1, 1] <= 0:
            raise ValueError("focal entries of P must be positive")

    @classmethod
    def kitti_like(cls, width: int = 1242, height: int = 375, scale: float = 1.0) -> "CameraCalib":
        P = np.array(
            [
                [721.5377 * scale, 0.0, 609.5593 * scale, 44.85728 * scale],
                [0.0, 721.5377 * scale, 172.854 * scale, 0.2163791 * scale],
                [0.0, 0.0, 1.0, 0.002745884],
            ]
        )
        return cls(P, width, height)

    def project(self, points: np.ndarray) -> np.ndarray:
        """Camera-frame points [N,3] -> pixel coordinates [N,2]."""
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        hom = pts @ self.P[:, :3].T + self.P[:, 3]
        return hom[:, :2] / hom[:, 2:3]

    def unproject(self, u: float, v: float, depth: float) -> np.ndarray:
        """Pixel (u, v) -> camera-frame point whose z coordinate is ``depth``."""
        P = self.P
        r0 = P[0] - u * P[2]
        r1 = P[1] - v * P[2]
        a = np.array([[r0[0], r0[1]], [r1[0], r1[1]]])
        b = -np.array([r0[2] * depth + r0[3], r1[2] * depth + r1[3]])
        x, y = np.linalg.solve(a, b)
        return np.array([x, y, depth], dtype=np.float64)


@dataclass(frozen=True)
class RegressionTuple:
    """(a_x, a_y, a_z, a_l, a_w, a_h, sin_b, cos_b) as emitted by the head."""

    a_x: float
    a_y: float
    a_z: float
    a_l: float
    a_w: float
    a_h: float
    sin_b: float
    cos_b: float

    @classmethod
    def from_array(cls, arr: Sequence[float]) -> "RegressionTuple":
        vals = [float(v) for v in arr]
        if len(vals) != 8:
            raise ValueError(f"need 8 regression values, got {len(vals)}")
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("regression tuple must be finite")
        return cls(*vals)

    def as_array(self) -> np.ndarray:
        return np.array(
            [self.a_x, self.a_y, self.a_z, self.a_l, self.a_w, self.a_h, self.sin_b, self.cos_b], dtype=np.float64
        )


@dataclass
class Detection3D:
    category: int
    score: float
    location: tuple[float, float, float]
    dims: tuple[float, float, float]  # h, w, l
    yaw: float
    box2d: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)
    alpha: float = 0.0
    truncated: float = 0.0
    occluded: int = 0

    @property
    def name(self) -> str:
        return CLASSES[self.category]

    @property
    def center(self) -> np.ndarray:
        """Gravity center (half a height above the bottom-face location)."""
        x, y, z = self.location
        return np.array([x, y - self.dims[0] / 2.0, z])


def wrap_angle(a: float) -> float:
    """Map to [-pi, pi)."""
    return (a + math.pi) % (2 * math.pi) - math.pi


# peaks -----------------------------------------------------------------------


def _max3x3(a: np.ndarray) -> np.ndarray:
    padded = np.pad(a, ((0, 0), (0, 0), (1, 1), (1, 1)), constant_values=-np.inf)
    h, w = a.shape[2:]
    out = np.full_like(a, -np.inf)
    for di in range(3):
        for dj in range(3):
            np.maximum(out, padded[:, :, di : di + h, dj : dj + w], out=out)
    return out


def extract_peaks(heatmap, score_thresh: float = DEFAULT_SCORE_THRESH, max_dets: int = DEFAULT_MAX_DETS):
    """Local 3x3 maxima scoring above ``score_thresh``, best ``max_dets`` per image.

    Returns, per batch item, a list of ``(class, (row, col), score)``.
    """
    hm = heatmap.data if isinstance(heatmap, SpikeTensor) else np.asarray(heatmap)
    keep = (hm == _max3x3(hm)) & (hm > score_thresh)
    results = []
    for b in range(hm.shape[0]):
        ks, rs, cs = np.nonzero(keep[b])
        scores = hm[b, ks, rs, cs]
        order = np.argsort(-scores, kind="stable")[:max_dets]
        results.append([(int(ks[i]), (int(rs[i]), int(cs[i])), float(scores[i])) for i in order])
    return results


# decode ------------------------------------------------------------------------


def decode_tuple(
    t: RegressionTuple,
    cell: tuple[int, int],
    calib: CameraCalib,
    priors: Priors = Priors(),
    down_ratio: int = DEFAULT_DOWN_RATIO,
    category: int = 0,
    score: float = 1.0,
) -> Detection3D | None:
    """Turn one regression tuple at heatmap ``cell`` (row, col) into a box.

    Returns ``None`` (with a warning) when the decoded depth is not in front
    of the camera.
    """
    z = priors.depth_mean + t.a_z * priors.depth_std
    if z <= 0:
        warnings.warn(f"discarding detection with non-positive depth {z:.3f}", RuntimeWarning, stacklevel=2)
        return None
    h_bar, w_bar, l_bar = priors.dims
    h, w, l = h_bar * math.exp(t.a_h), w_bar * math.exp(t.a_w), l_bar * math.exp(t.a_l)
    row, col = cell
    u = (col + t.a_x) * down_ratio
    v = (row + t.a_y) * down_ratio
    cx, cy, cz = calib.unproject(u, v, z)
    norm = math.hypot(t.sin_b, t.cos_b)
    sin_b, cos_b = (t.sin_b / norm, t.cos_b / norm) if norm > 0 else (0.0, 1.0)
    alpha = math.atan2(sin_b, cos_b)
    yaw = wrap_angle(alpha + math.atan2(cx, cz))
    det = Detection3D(
        category=category,
        score=float(score),
        location=(float(cx), float(cy + h / 2.0), float(cz)),
        dims=(h, w, l),
        yaw=yaw,
        alpha=wrap_angle(alpha),
    )
    det.box2d = project_box2d(det, calib)
    return det


def encode_tuple(
    det: Detection3D, calib: CameraCalib, priors: Priors = Priors(), down_ratio: int = DEFAULT_DOWN_RATIO
) -> tuple[tuple[int, int], RegressionTuple]:
    """Inverse of :func:`decode_tuple`: heatmap cell and regression targets for ``det``."""
    (u, v), = calib.project(det.center)
    col_f, row_f = u / down_ratio, v / down_ratio
    col, row = int(math.floor(col_f)), int(math.floor(row_f))
    h, w, l = det.dims
    z = float(det.center[2])
    alpha = wrap_angle(det.yaw - math.atan2(det.center[0], det.center[2]))
    t = RegressionTuple(
        a_x=col_f - col,
        a_y=row_f - row,
        a_z=(z - priors.depth_mean) / priors.depth_std,
        a_l=math.log(l / priors.dims[2]),
        a_w=math.log(w / priors.dims[1]),
        a_h=math.log(h / priors.dims[0]),
        sin_b=math.sin(alpha),
        cos_b=math.cos(alpha),
    )
    return (row, col), t


def decode_maps(
    heatmap: np.ndarray,
    regression: np.ndarray,
    calib: CameraCalib,
    priors: Priors = Priors(),
    down_ratio: int = DEFAULT_DOWN_RATIO,
    score_thresh: float = DEFAULT_SCORE_THRESH,
    max_dets: int = DEFAULT_MAX_DETS,
) -> list[list[Detection3D]]:
    """Peaks of ``heatmap`` [B,K,H,W] decoded with ``regression`` [B,8,H,W]."""
    out = []
    for b, peaks in enumerate(extract_peaks(heatmap, score_thresh, max_dets)):
        dets = []
        for cls, (r, c), score in peaks:
            det = decode_tuple(RegressionTuple.from_array(regression[b, :, r, c]), (r, c), calib, priors, down_ratio, cls, score)
            if det is not None:
                dets.append(det)
        out.append(dets)
    return out


# geometry ------------------------------------------------------------------------


def box3d_corners(det: Detection3D) -> np.ndarray:
    """Eight corners [8,3]; the first four lie on the bottom face (y = location y)."""
    h, w, l = det.dims
    x = np.array([l, l, -l, -l, l, l, -l, -l]) / 2.0
    y = np.array([0.0, 0.0, 0.0, 0.0, -h, -h, -h, -h])
    z = np.array([w, -w, -w, w, w, -w, -w, w]) / 2.0
    c, s = math.cos(det.yaw), math.sin(det.yaw)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return (rot @ np.vstack([x, y, z])).T + np.asarray(det.location, dtype=np.float64)


def project_box2d(det: Detection3D, calib: CameraCalib) -> tuple[float, float, float, float]:
    uv = calib.project(box3d_corners(det))
    left = float(np.clip(uv[:, 0].min(), 0, calib.width - 1))
    right = float(np.clip(uv[:, 0].max(), 0, calib.width - 1))
    top = float(np.clip(uv[:, 1].min(), 0, calib.height - 1))
    bottom = float(np.clip(uv[:, 1].max(), 0, calib.height - 1))
    return (left, top, right, bottom)


# loss ----------------------------------------------------------------------------------


def gaussian_radius(height: float, width: float, min_overlap: float = 0.7) -> float:
    """CenterNet's radius so that a shifted box keeps ``min_overlap`` IoU."""
    a1, b1 = 1.0, height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1**2 - 4 * a1 * c1)) / 2
    a2, b2 = 4.0, 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 + math.sqrt(b2**2 - 4 * a2 * c2)) / 2
    a3, b3 = 4 * min_overlap, -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + math.sqrt(b3**2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def draw_gaussian(heat: np.ndarray, row: int, col: int, radius: int) -> None:
    d = 2 * radius + 1
    sigma = d / 6.0
    ys, xs = np.ogrid[-radius : radius + 1, -radius : radius + 1]
    g = np.exp(-(xs * xs + ys * ys) / (2 * sigma * sigma))
    h, w = heat.shape
    top, bottom = min(row, radius), min(h - row, radius + 1)
    left, right = min(col, radius), min(w - col, radius + 1)
    if bottom <= 0 or right <= 0 or top < 0 or left < 0:
        return
    patch = heat[row - top : row + bottom, col - left : col + right]
    gpatch = g[radius - top : radius + bottom, radius - left : radius + right]
    np.maximum(patch, gpatch, out=patch)


@dataclass
class DetectionTargets:
    heatmap: np.ndarray  # [B,K,H,W], 1 at object centers
    indices: np.ndarray  # [N,3] (batch, row, col)
    classes: np.ndarray  # [N]
    regression: np.ndarray  # [N,8]

    @property
    def num_objects(self) -> int:
        return int(self.indices.shape[0])


def build_targets(
    objects: Sequence[Sequence[Detection3D]],
    calib: CameraCalib,
    out_hw: tuple[int, int],
    num_classes: int = 1,
    priors: Priors = Priors(),
    down_ratio: int = DEFAULT_DOWN_RATIO,
) -> DetectionTargets:
    oh, ow = out_hw
    heat = np.zeros((len(objects), num_classes, oh, ow), np.float32)
    idx, cls, reg = [], [], []
    for b, objs in enumerate(objects):
        for det in objs:
            if det.category >= num_classes:
                continue
            (row, col), t = encode_tuple(det, calib, priors, down_ratio)
            if not (0 <= row < oh and 0 <= col < ow):
                continue
            left, top, right, bottom = det.box2d
            radius = max(0, int(gaussian_radius((bottom - top) / down_ratio, (right - left) / down_ratio)))
            draw_gaussian(heat[b, det.category], row, col, radius)
            heat[b, det.category, row, col] = 1.0
            idx.append((b, row, col))
            cls.append(det.category)
            reg.append(t.as_array())
    return DetectionTargets(
        heat,
        np.array(idx, dtype=np.int64).reshape(-1, 3),
        np.array(cls, dtype=np.int64),
        np.array(reg, dtype=np.float32).reshape(-1, 8),
    )


def focal_loss(logits: SpikeTensor, target: np.ndarray, alpha: float = 2.0, beta: float = 4.0) -> SpikeTensor:
    """Penalty-reduced pixel-wise focal loss, normalized by the object count."""
    p = ops.clip(ops.sigmoid(logits), 1e-4, 1 - 1e-4)
    pos = (target == 1).astype(logits.dtype)
    neg_w = ((1 - target) ** beta * (1 - pos)).astype(logits.dtype)
    pos_term = ops.mul(ops.mul(ops.power(ops.sub(1.0, p), alpha), ops.log(p)), pos)
    neg_term = ops.mul(ops.mul(ops.power(p, alpha), ops.log(ops.sub(1.0, p))), neg_w)
    n_pos = max(float(pos.sum()), 1.0)
    return ops.scalar_mul(ops.sum(ops.add(pos_term, neg_term)), -1.0 / n_pos)


def regression_l1(reg: SpikeTensor, targets: DetectionTargets) -> SpikeTensor:
    if targets.num_objects == 0:
        return SpikeTensor(np.zeros((), reg.dtype))
    b, r, c = targets.indices.T
    picked = ops.getitem(reg, (b, slice(None), r, c))  # [N,8]
    diff = ops.abs(ops.sub(picked, targets.regression.astype(reg.dtype)))
    return ops.scalar_mul(ops.sum(diff), 1.0 / targets.num_objects)


def detection_loss(
    heat_logits: SpikeTensor, reg: SpikeTensor, targets: DetectionTargets, reg_weight: float = 1.0
) -> tuple[SpikeTensor, dict[str, float]]:
    """Focal heatmap loss plus L1 on the 8-tuple at ground-truth centers."""
    heat = focal_loss(heat_logits, targets.heatmap)
    l1 = regression_l1(reg, targets)
    total = ops.add(heat, ops.scalar_mul(l1, reg_weight)) if targets.num_objects else heat
    return total, {"heatmap": float(heat.data), "regression": float(l1.data)}


# KITTI text formats --------------------------------------------------------------------


class KittiFormatError(ValueError):
    pass


def _fmt(v: float) -> str:
    return repr(float(v))


def parse_label_line(line: str) -> Detection3D:
    parts = line.split()
    if len(parts) not in (15, 16):
        raise KittiFormatError(f"expected 15 or 16 fields, got {len(parts)}: {line!r}")
    name = parts[0]
    if name not in CLASSES:
        raise KittiFormatError(f"unknown object type {name!r}")
    try:
        vals = [float(p) for p in parts[1:]]
    except ValueError as exc:
        raise KittiFormatError(str(exc)) from None
    return Detection3D(
        category=CLASSES.index(name),
        score=vals[14] if len(vals) == 15 else 1.0,
        location=(vals[10], vals[11], vals[12]),
        dims=(vals[7], vals[8], vals[9]),
        yaw=vals[13],
        box2d=(vals[3], vals[4], vals[5], vals[6]),
        alpha=vals[2],
        truncated=vals[0],
        occluded=int(vals[1]),
    )


def format_label_line(det: Detection3D, with_score: bool = False) -> str:
    fields = [
        det.name,
        _fmt(det.truncated),
        str(int(det.occluded)),
        _fmt(det.alpha),
        *(_fmt(v) for v in det.box2d),
        *(_fmt(v) for v in det.dims),
        *(_fmt(v) for v in det.location),
        _fmt(det.yaw),
    ]
    if with_score:
        fields.append(_fmt(det.score))
    return " ".join(fields)


def read_label_file(path: str | Path) -> list[Detection3D]:
    lines = Path(path).read_text().splitlines()
    return [parse_label_line(ln) for ln in lines if ln.strip()]


def write_label_file(path: str | Path, dets: Sequence[Detection3D], with_score: bool = False) -> None:
    text = "".join(format_label_line(d, with_score) + "\n" for d in dets)
    Path(path).write_text(text)


def read_calib_file(path: str | Path, width: int = 1242, height: int = 375) -> CameraCalib:
    for line in Path(path).read_text().splitlines():
        if line.startswith("P2:"):
            vals = [float(v) for v in line[3:].split()]
            if len(vals) != 12:
                raise KittiFormatError(f"P2 needs 12 values, got {len(vals)}")
            return CameraCalib(np.array(vals).reshape(3, 4), width, height)
    raise KittiFormatError(f"no P2: line in {path}")


def write_calib_file(path: str | Path, calib: CameraCalib) -> None:
    Path(path).write_text("P2: " + " ".join(_fmt(v) for v in calib.P.reshape(-1)) + "\n")


__all__ = [
    "CLASSES",
    "CameraCalib",
    "Detection3D",
    "DetectionTargets",
    "Priors",
    "RegressionTuple",
    "box3d_corners",
    "build_targets",
    "decode_maps",
    "decode_tuple",
    "detection_loss",
    "encode_tuple",
    "extract_peaks",
]
