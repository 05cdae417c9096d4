"""IoU in 2D / bird's-eye view / 3D, greedy matching and 11-point interpolated AP."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .detect import Detection3D

Mode = Literal["2d", "bev", "3d"]
Difficulty = Literal["easy", "moderate", "hard"]

# (min 2D box height px, max occlusion level, max truncation)
DIFFICULTY_RULES: dict[str, tuple[float, int, float]] = {
    "easy": (40.0, 0, 0.15),
    "moderate": (25.0, 1, 0.30),
    "hard": (25.0, 2, 0.50),
}

R11 = tuple(i / 10 for i in range(11))
R10 = tuple(i / 10 for i in range(1, 11))

AREA_EPS = 1e-12


# 2D -----------------------------------------------------------------------------


def iou_2d(a: Sequence[float], b: Sequence[float]) -> float:
    """IoU of axis-aligned rects given as (left, top, right, bottom)."""
    area_a = max(a[2] - a[0], 0.0) * max(a[3] - a[1], 0.0)
    area_b = max(b[2] - b[0], 0.0) * max(b[3] - b[1], 0.0)
    if area_a <= 0 or area_b <= 0:
        return 0.0
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (area_a + area_b - inter)


# BEV ----------------------------------------------------------------------------


@dataclass(frozen=True)
class RotatedRect:
    """Ground-plane rectangle: center (x, z), length along heading, width across, yaw."""

    x: float
    z: float
    length: float
    width: float
    yaw: float

    def corners(self) -> np.ndarray:
        """Counter-clockwise corners [4,2] in the (x, z) plane."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        hl, hw = self.length / 2.0, self.width / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        # yaw rotates about the downward y axis: x' = c*x + s*z, z' = -s*x + c*z
        rot = np.array([[c, s], [-s, c]])
        pts = local @ rot.T + np.array([self.x, self.z])
        if polygon_area(pts) < 0:
            pts = pts[::-1]
        return pts

    @property
    def area(self) -> float:
        return self.length * self.width

    @classmethod
    def from_detection(cls, det: Detection3D) -> "RotatedRect":
        h, w, l = det.dims
        return cls(det.location[0], det.location[2], l, w, det.yaw)


def polygon_area(pts: np.ndarray) -> float:
    """Signed shoelace area (positive for counter-clockwise)."""
    if len(pts) < 3:
        return 0.0
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_polygon(subject: np.ndarray, clipper: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: ``subject`` clipped by the convex CCW polygon ``clipper``."""
    out = [tuple(p) for p in subject]
    n = len(clipper)
    for i in range(n):
        if not out:
            break
        ax, ay = clipper[i]
        bx, by = clipper[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def inside(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax) >= 0

        def cross_point(p, q):
            px, py = p
            qx, qy = q
            dx, dy = qx - px, qy - py
            denom = ex * dy - ey * dx
            t = (ey * (px - ax) - ex * (py - ay)) / denom
            return (px + t * dx, py + t * dy)

        inp = out
        out = []
        prev = inp[-1]
        for cur in inp:
            if inside(cur):
                if not inside(prev):
                    out.append(cross_point(prev, cur))
                out.append(cur)
            elif inside(prev):
                out.append(cross_point(prev, cur))
            prev = cur
    return np.array(out, dtype=np.float64).reshape(-1, 2)


def bev_intersection(a: RotatedRect, b: RotatedRect) -> float:
    poly = clip_polygon(a.corners(), b.corners())
    area = abs(polygon_area(poly))
    return area if area >= AREA_EPS else 0.0


def iou_bev(a: RotatedRect, b: RotatedRect) -> float:
    if a.area <= 0 or b.area <= 0:
        return 0.0
    inter = bev_intersection(a, b)
    if inter == 0.0:
        return 0.0
    return inter / (a.area + b.area - inter)


def iou_3d(a: Detection3D, b: Detection3D) -> float:
    """BEV overlap area times vertical overlap over the volume union."""
    ra, rb = RotatedRect.from_detection(a), RotatedRect.from_detection(b)
    # y points down; box spans [y - h, y]
    top = max(a.location[1] - a.dims[0], b.location[1] - b.dims[0])
    bottom = min(a.location[1], b.location[1])
    overlap_h = bottom - top
    if overlap_h <= 0:
        return 0.0
    inter_area = bev_intersection(ra, rb)
    if inter_area == 0.0:
        return 0.0
    inter = inter_area * overlap_h
    vol_a = a.dims[0] * a.dims[1] * a.dims[2]
    vol_b = b.dims[0] * b.dims[1] * b.dims[2]
    return inter / (vol_a + vol_b - inter)


def pair_iou(a: Detection3D, b: Detection3D, mode: Mode) -> float:
    if mode == "2d":
        return iou_2d(a.box2d, b.box2d)
    if mode == "bev":
        return iou_bev(RotatedRect.from_detection(a), RotatedRect.from_detection(b))
    if mode == "3d":
        return iou_3d(a, b)
    raise ValueError(f"unknown IoU mode {mode!r}")


# matching / AP ----------------------------------------------------------------------


@dataclass(frozen=True)
class MatchConfig:
    iou_threshold: float = 0.7
    mode: Mode = "3d"
    difficulty: Difficulty | None = None
    category: int | None = 0

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou_threshold must lie in (0, 1]")
        if self.difficulty is not None and self.difficulty not in DIFFICULTY_RULES:
            raise ValueError(f"unknown difficulty {self.difficulty!r}")


@dataclass
class PrCurve:
    recall: np.ndarray
    precision: np.ndarray
    num_gt: int
    flags: list[str] = field(default_factory=list)

    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.recall.tolist(), self.precision.tolist()))


def passes_difficulty(gt: Detection3D, difficulty: Difficulty | None) -> bool:
    if difficulty is None:
        return True
    min_h, max_occ, max_trunc = DIFFICULTY_RULES[difficulty]
    height = gt.box2d[3] - gt.box2d[1]
    return height >= min_h and gt.occluded <= max_occ and gt.truncated <= max_trunc


def _greedy_pick(det: Detection3D, cands: Sequence[Detection3D], used: np.ndarray, cfg: MatchConfig) -> int:
    best, best_k = -1.0, -1
    for k, g in enumerate(cands):
        if used[k]:
            continue
        iou = pair_iou(det, g, cfg.mode)
        if iou >= cfg.iou_threshold and iou > best:
            best, best_k = iou, k
    return best_k


def match_and_pr(
    dets: Sequence[Sequence[Detection3D]],
    gts: Sequence[Sequence[Detection3D]],
    cfg: MatchConfig = MatchConfig(),
) -> PrCurve:
    """Greedy score-ordered matching per image; one PR point per ranked detection.

    ``dets[i]`` and ``gts[i]`` belong to image ``i``. Ground truths of the
    category that fail the difficulty filter are left out of the recall
    denominator and cannot yield true positives; a detection that lands on
    one of them (and on no counted ground truth) is ignored rather than
    scored as a false positive. Detections shorter than the difficulty's
    minimum 2D height are ignored as well.
    """
    if len(dets) != len(gts):
        raise ValueError("dets and gts must cover the same images")
    min_h = DIFFICULTY_RULES[cfg.difficulty][0] if cfg.difficulty is not None else None
    kept, ignored = [], []
    for img in gts:
        same = [g for g in img if cfg.category is None or g.category == cfg.category]
        kept.append([g for g in same if passes_difficulty(g, cfg.difficulty)])
        ignored.append([g for g in same if not passes_difficulty(g, cfg.difficulty)])
    num_gt = sum(len(g) for g in kept)
    ranked = [
        (d.score, img, j)
        for img, img_dets in enumerate(dets)
        for j, d in enumerate(img_dets)
        if cfg.category is None or d.category == cfg.category
    ]
    # stable: ties keep image / in-image order
    ranked.sort(key=lambda r: -r[0])
    used = [np.zeros(len(g), dtype=bool) for g in kept]
    used_ign = [np.zeros(len(g), dtype=bool) for g in ignored]
    outcome = []
    for _, img, j in ranked:
        det = dets[img][j]
        k = _greedy_pick(det, kept[img], used[img], cfg)
        if k >= 0:
            used[img][k] = True
            outcome.append(1.0)
            continue
        k = _greedy_pick(det, ignored[img], used_ign[img], cfg)
        if k >= 0:
            used_ign[img][k] = True
            continue
        if min_h is not None and det.box2d[3] - det.box2d[1] < min_h:
            continue
        outcome.append(0.0)
    tp = np.array(outcome)
    flags = []
    if num_gt == 0:
        flags.append("no-ground-truth")
    ctp = np.cumsum(tp)
    n = np.arange(1, len(tp) + 1)
    recall = ctp / num_gt if num_gt else np.zeros(len(tp))
    precision = ctp / n if len(tp) else np.zeros(0)
    return PrCurve(recall, precision, num_gt, flags)


def f_inter(curve: PrCurve, level: float) -> float:
    """Best precision at any recall >= ``level`` (0 if unreachable)."""
    mask = curve.recall >= level
    return float(curve.precision[mask].max()) if mask.any() else 0.0


def ap_r11(curve: PrCurve, levels: Sequence[float] = R11) -> float:
    """Mean interpolated precision over ``levels`` (default {0, 0.1, ..., 1})."""
    if curve.num_gt == 0 or len(curve.recall) == 0:
        return 0.0
    # suffix maximum of precision gives f_inter at each point
    suffix = np.maximum.accumulate(curve.precision[::-1])[::-1]
    total = 0.0
    for n in levels:
        idx = np.searchsorted(curve.recall, n, side="left")
        total += float(suffix[idx]) if idx < len(suffix) else 0.0
    return total / len(levels)


def evaluate(
    dets: Sequence[Sequence[Detection3D]],
    gts: Sequence[Sequence[Detection3D]],
    modes: Sequence[Mode] = ("2d", "bev", "3d"),
    thresholds: Sequence[float] = (0.5, 0.7),
    difficulties: Sequence[Difficulty] = ("easy", "moderate", "hard"),
    category: int | None = 0,
    levels: Sequence[float] = R11,
) -> tuple[list[dict], dict]:
    """AP table over every (mode, threshold); returns (report rows, PR curves)."""
    rows, curves = [], {}
    for mode in modes:
        for thr in thresholds:
            row = {"mode": mode, "threshold": thr, "ap": {}}
            for diff in difficulties:
                curve = match_and_pr(dets, gts, MatchConfig(thr, mode, diff, category))
                row["ap"][diff] = ap_r11(curve, levels)
                if curve.flags:
                    row.setdefault("flags", {})[diff] = curve.flags
                curves[(mode, thr, diff)] = curve
            rows.append(row)
    return rows, curves
