"""KITTI-style object evaluation: difficulty tiers, 2D/BEV/3D IoU, greedy
matching and 11-point interpolated average precision.

Difficulty criteria follow the official devkit (min box height in pixels,
max occlusion level, max truncation). The sets are cumulative: an object
that qualifies as easy is also counted for moderate and hard.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Mapping, Sequence

import numpy as np

from .geometry import Cuboid3D, bev_footprint
from .kitti_io import DONTCARE, ObjectLabel

METRICS = ("2d", "bev", "3d")
DIFFICULTIES = ("easy", "moderate", "hard")

MIN_HEIGHT = (40.0, 25.0, 25.0)
MAX_OCCLUSION = (0, 1, 2)
MAX_TRUNCATION = (0.15, 0.30, 0.50)

NEIGHBOR_CLASSES = {"Car": ("Van",), "Pedestrian": ("Person_sitting",)}

_AREA_EPS = 1e-12


class Difficulty(IntEnum):
    EASY = 0
    MODERATE = 1
    HARD = 2
    IGNORED = 3


@dataclass(frozen=True)
class DifficultyThresholds:
    min_height: tuple[float, float, float] = MIN_HEIGHT
    max_occlusion: tuple[int, int, int] = MAX_OCCLUSION
    max_truncation: tuple[float, float, float] = MAX_TRUNCATION

    def qualifies(self, label: ObjectLabel, level: int, bbox_height: float | None = None) -> bool:
        height = label.bbox_height if bbox_height is None else bbox_height
        return (
            height >= self.min_height[level]
            and label.occlusion <= self.max_occlusion[level]
            and label.truncation <= self.max_truncation[level]
        )


@dataclass(frozen=True)
class EvalConfig:
    iou_threshold: float = 0.7
    metric: str = "bev"
    class_name: str = "Car"
    ignore_neighbor_classes: bool = True
    thresholds: DifficultyThresholds = DifficultyThresholds()

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"IoU threshold must lie in (0, 1], got {self.iou_threshold}")
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")


@dataclass
class EvalReport:
    class_name: str
    iou_threshold: float
    ap: dict[str, dict[str, float]] = field(default_factory=dict)
    counts: dict[str, dict[str, dict[str, int]]] = field(default_factory=dict)
    pr_curves: dict[str, dict[str, list[tuple[float, float]]]] = field(default_factory=dict)

    SCHEMA_VERSION = 1

    def merge(self, other: "EvalReport") -> "EvalReport":
        self.ap.update(other.ap)
        self.counts.update(other.counts)
        self.pr_curves.update(other.pr_curves)
        return self

    def to_dict(self) -> dict:
        return {
            "schema_version": self.SCHEMA_VERSION,
            "class_name": self.class_name,
            "iou_threshold": self.iou_threshold,
            "ap": self.ap,
            "counts": self.counts,
            "pr_curves": {
                m: {d: [list(pt) for pt in curve] for d, curve in per.items()}
                for m, per in self.pr_curves.items()
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        if data.get("schema_version") != cls.SCHEMA_VERSION:
            raise ValueError(f"unsupported report schema {data.get('schema_version')!r}")
        return cls(
            data["class_name"],
            data["iou_threshold"],
            data["ap"],
            data["counts"],
            {m: {d: [tuple(pt) for pt in c] for d, c in per.items()}
             for m, per in data["pr_curves"].items()},
        )


def assign_difficulty(
    label: ObjectLabel,
    bbox_height: float | None = None,
    thresholds: DifficultyThresholds = DifficultyThresholds(),
) -> Difficulty:
    """Easiest tier the object qualifies for (it also counts for all harder ones)."""
    for level in (Difficulty.EASY, Difficulty.MODERATE, Difficulty.HARD):
        if thresholds.qualifies(label, level, bbox_height):
            return level
    return Difficulty.IGNORED


# -- IoU ---------------------------------------------------------------------

def iou_2d(a: Sequence[float], b: Sequence[float]) -> float:
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


def _box_area_over_first(a: Sequence[float], b: Sequence[float]) -> float:
    """Fraction of box a covered by box b."""
    iw = min(a[2], b[2]) - max(a[0], b[0])
    ih = min(a[3], b[3]) - max(a[1], b[1])
    area = (a[2] - a[0]) * (a[3] - a[1])
    if iw <= 0 or ih <= 0 or area <= 0:
        return 0.0
    return iw * ih / area


def polygon_area(poly: np.ndarray) -> float:
    """Signed shoelace area; positive for counter-clockwise vertices."""
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of a polygon by a convex CCW polygon."""
    output = [tuple(p) for p in subject]
    n = len(clip)
    for i in range(n):
        if not output:
            break
        ax, ay = clip[i]
        bx, by = clip[(i + 1) % n]
        ex, ey = bx - ax, by - ay

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        inputs, output = output, []
        prev = inputs[-1]
        s_prev = side(prev)
        for cur in inputs:
            s_cur = side(cur)
            if s_cur >= 0:
                if s_prev < 0:
                    output.append(_intersect(prev, cur, s_prev, s_cur))
                output.append(cur)
            elif s_prev >= 0:
                output.append(_intersect(prev, cur, s_prev, s_cur))
            prev, s_prev = cur, s_cur
    return np.array(output, dtype=np.float64).reshape(-1, 2)


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def _ccw(poly: np.ndarray) -> np.ndarray:
    return poly if polygon_area(poly) >= 0 else poly[::-1]


def bev_intersection_area(a: Cuboid3D, b: Cuboid3D) -> float:
    inter = clip_convex(_ccw(bev_footprint(a)), _ccw(bev_footprint(b)))
    area = abs(polygon_area(inter))
    return area if area >= _AREA_EPS else 0.0


def iou_bev(a: Cuboid3D, b: Cuboid3D) -> float:
    inter = bev_intersection_area(a, b)
    if inter == 0.0:
        return 0.0
    area_a = a.dimensions[1] * a.dimensions[2]
    area_b = b.dimensions[1] * b.dimensions[2]
    return min(inter / (area_a + area_b - inter), 1.0)


def iou_3d(a: Cuboid3D, b: Cuboid3D) -> float:
    # vertical extent of a cuboid is [Y - h, Y] (y points down)
    top = max(a.location[1] - a.dimensions[0], b.location[1] - b.dimensions[0])
    bottom = min(a.location[1], b.location[1])
    overlap_h = bottom - top
    if overlap_h <= 0:
        return 0.0
    inter = bev_intersection_area(a, b) * overlap_h
    if inter == 0.0:
        return 0.0
    return min(inter / (a.volume + b.volume - inter), 1.0)


def pairwise_iou(dets: Sequence[ObjectLabel], gts: Sequence[ObjectLabel], metric: str) -> np.ndarray:
    out = np.zeros((len(dets), len(gts)))
    if metric == "2d":
        for i, d in enumerate(dets):
            for j, g in enumerate(gts):
                out[i, j] = iou_2d(d.bbox2d, g.bbox2d)
        return out
    fn = iou_bev if metric == "bev" else iou_3d
    det_boxes = [Cuboid3D.from_label(d) for d in dets]
    gt_boxes = [Cuboid3D.from_label(g) for g in gts]
    for i, d in enumerate(det_boxes):
        for j, g in enumerate(gt_boxes):
            out[i, j] = fn(d, g)
    return out


# -- matching and AP ---------------------------------------------------------

@dataclass
class MatchResult:
    """Per-difficulty outcome for one frame.

    ``scored[level]`` lists (score, is_tp) for every counted detection;
    ignored detections are absent.
    """

    scored: dict[int, list[tuple[float, bool]]]
    num_gt: dict[int, int]
    fn: dict[int, int]


def match_detections(
    gts: Sequence[ObjectLabel], dets: Sequence[ObjectLabel], cfg: EvalConfig
) -> MatchResult:
    """Greedy score-ordered matching for one frame, for every difficulty tier.

    Each detection, highest score first, takes the unmatched candidate
    ground truth with the highest IoU at or above the threshold. Candidates
    are same-class objects plus (optionally) neighbour-class objects. A
    match to an object that is not eligible at the current tier, or to a
    neighbour class, makes the detection ignored. Unmatched detections
    mostly covering a DontCare box are ignored too; the rest are false
    positives.
    """
    neighbors = NEIGHBOR_CLASSES.get(cfg.class_name, ()) if cfg.ignore_neighbor_classes else ()
    cand = [g for g in gts if g.class_name == cfg.class_name or g.class_name in neighbors]
    dontcare = [g.bbox2d for g in gts if g.class_name == DONTCARE]
    own = [d for d in dets if d.class_name == cfg.class_name]
    order = sorted(range(len(own)), key=lambda i: -own[i].score)
    own = [own[i] for i in order]
    ious = pairwise_iou(own, cand, cfg.metric)

    scored, num_gt, fn = {}, {}, {}
    for level in range(3):
        eligible = [
            g.class_name == cfg.class_name and cfg.thresholds.qualifies(g, level)
            for g in cand
        ]
        taken = [False] * len(cand)
        stream = []
        for i, det in enumerate(own):
            best_j, best_iou = -1, -1.0
            for j in range(len(cand)):
                if not taken[j] and ious[i, j] >= cfg.iou_threshold and ious[i, j] > best_iou:
                    best_j, best_iou = j, ious[i, j]
            if best_j >= 0:
                taken[best_j] = True
                if eligible[best_j]:
                    stream.append((det.score, True))
                continue
            if any(_box_area_over_first(det.bbox2d, dc) >= cfg.iou_threshold for dc in dontcare):
                continue
            stream.append((det.score, False))
        scored[level] = stream
        num_gt[level] = sum(eligible)
        fn[level] = sum(1 for e, t in zip(eligible, taken) if e and not t)
    return MatchResult(scored, num_gt, fn)


def precision_recall(stream: Sequence[tuple[float, bool]], num_gt: int) -> list[tuple[int, int]]:
    """(tp, fp) counts after each distinct score threshold, highest first.

    Detections with equal scores enter the curve together.
    """
    ordered = sorted(stream, key=lambda st: -st[0])
    points = []
    tp = fp = 0
    for k, (score, is_tp) in enumerate(ordered):
        tp += is_tp
        fp += not is_tp
        if k + 1 == len(ordered) or ordered[k + 1][0] != score:
            points.append((tp, fp))
    return points


def average_precision_11pt(stream: Sequence[tuple[float, bool]], num_gt: int) -> float:
    """Mean over recall levels 0, 0.1, ..., 1 of the best precision at or beyond that recall.

    Zero when there are no eligible ground-truth objects.
    """
    if num_gt <= 0:
        return 0.0
    points = precision_recall(stream, num_gt)
    total = 0.0
    for k in range(11):
        # recall >= k/10  <=>  10 * tp >= k * num_gt, kept in integers
        best = 0.0
        for tp, fp in points:
            if 10 * tp >= k * num_gt and tp + fp > 0:
                best = max(best, tp / (tp + fp))
        total += best
    return total / 11.0


def evaluate(
    gt_frames: Mapping[str, Sequence[ObjectLabel]],
    det_frames: Mapping[str, Sequence[ObjectLabel]],
    cfg: EvalConfig = EvalConfig(),
) -> EvalReport:
    """AP per difficulty for ``cfg.metric`` over a set of frames.

    Both mappings must have exactly the same frame ids.
    """
    if set(gt_frames) != set(det_frames):
        missing = sorted(set(gt_frames) ^ set(det_frames))
        raise ValueError(f"frame ids differ between ground truth and detections: {missing}")

    streams = {lvl: [] for lvl in range(3)}
    num_gt = dict.fromkeys(range(3), 0)
    fn = dict.fromkeys(range(3), 0)
    for frame_id in sorted(gt_frames):
        res = match_detections(gt_frames[frame_id], det_frames[frame_id], cfg)
        for lvl in range(3):
            streams[lvl].extend(res.scored[lvl])
            num_gt[lvl] += res.num_gt[lvl]
            fn[lvl] += res.fn[lvl]

    report = EvalReport(cfg.class_name, cfg.iou_threshold)
    ap, counts, curves = {}, {}, {}
    for lvl, name in enumerate(DIFFICULTIES):
        stream = streams[lvl]
        ap[name] = average_precision_11pt(stream, num_gt[lvl])
        tp = sum(1 for _, t in stream if t)
        counts[name] = {"tp": tp, "fp": len(stream) - tp, "fn": fn[lvl], "num_gt": num_gt[lvl]}
        curves[name] = [
            (tp_k / num_gt[lvl] if num_gt[lvl] else 0.0, tp_k / (tp_k + fp_k))
            for tp_k, fp_k in precision_recall(stream, num_gt[lvl])
        ]
    report.ap[cfg.metric] = ap
    report.counts[cfg.metric] = counts
    report.pr_curves[cfg.metric] = curves
    return report


def evaluate_metrics(
    gt_frames: Mapping[str, Sequence[ObjectLabel]],
    det_frames: Mapping[str, Sequence[ObjectLabel]],
    cfg: EvalConfig = EvalConfig(),
    metrics: Sequence[str] = METRICS,
) -> EvalReport:
    report = EvalReport(cfg.class_name, cfg.iou_threshold)
    for metric in metrics:
        sub = EvalConfig(cfg.iou_threshold, metric, cfg.class_name,
                         cfg.ignore_neighbor_classes, cfg.thresholds)
        report.merge(evaluate(gt_frames, det_frames, sub))
    return report
