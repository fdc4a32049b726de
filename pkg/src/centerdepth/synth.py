"""Seeded synthetic KITTI-style scenes, prediction perturbation, and
brute-force oracles (Monte-Carlo IoU, reference AP) for cross-checking.

Random streams come from numpy's PCG64 seeded through ``SeedSequence`` with
a per-purpose key, so a (seed, frame, purpose) triple always yields the
same numbers on every platform:

    scene generation -> key (seed, frame, 0)
    perturbation     -> key (seed, frame, 1)
    Monte-Carlo      -> key (seed, 2)

The reference evaluator deliberately shares no code with
:mod:`centerdepth.evaluation`; BEV overlaps are computed with shapely.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import shapely

from .geometry import (
    Cuboid3D,
    GeometryError,
    amodal_bbox,
    bbox_center,
    cuboid_corners,
    ry_to_alpha,
    wrap_angle,
)
from .kitti_io import (
    CameraCalibration,
    ObjectLabel,
    serialize_calibration,
    write_label_file,
)

STREAM_SCENE = 0
STREAM_NOISE = 1
STREAM_MC = 2

# Real KITTI P2 (rectified, left color camera) of a typical drive.
KITTI_P2 = np.array([
    [7.215377e02, 0.0, 6.095593e02, 4.485728e01],
    [0.0, 7.215377e02, 1.728540e02, 2.163791e-01],
    [0.0, 0.0, 1.0, 2.745884e-03],
])


def default_calibration() -> CameraCalibration:
    return CameraCalibration(KITTI_P2)


def make_rng(*key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(key))))


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    n_objects: tuple[int, int] = (2, 8)
    depth_range: tuple[float, float] = (5.0, 80.0)
    lateral_range: tuple[float, float] = (-20.0, 20.0)
    height_range: tuple[float, float] = (1.5, 1.8)  # y of the bottom face (camera ~1.65 m up)
    yaw_range: tuple[float, float] = (-math.pi, math.pi)
    dim_ranges: tuple[tuple[float, float], ...] = ((1.4, 1.7), (1.55, 1.85), (3.5, 4.6))
    class_name: str = "Car"
    calib: CameraCalibration = field(default_factory=default_calibration)
    max_retries: int = 200

    def __post_init__(self):
        ranges = [self.n_objects, self.depth_range, self.lateral_range,
                  self.height_range, self.yaw_range, *self.dim_ranges]
        for lo, hi in ranges:
            if lo > hi:
                raise ValueError(f"empty sampling range ({lo}, {hi})")
        if self.depth_range[0] <= 0:
            raise ValueError("depth range must be positive")
        if self.n_objects[0] < 0:
            raise ValueError("object count must be non-negative")
        if min(lo for lo, _ in self.dim_ranges) <= 0:
            raise ValueError("dimensions must be positive")


@dataclass(frozen=True)
class NoiseModel:
    center_px_sigma: float = 0.0
    depth_rel_sigma: float = 0.0
    yaw_sigma: float = 0.0
    dim_rel_sigma: float = 0.0
    fp_rate: float = 0.0
    fn_rate: float = 0.0

    def __post_init__(self):
        for key in ("center_px_sigma", "depth_rel_sigma", "yaw_sigma", "dim_rel_sigma"):
            if getattr(self, key) < 0:
                raise ValueError(f"{key} must be >= 0")
        for key in ("fp_rate", "fn_rate"):
            if not 0.0 <= getattr(self, key) <= 1.0:
                raise ValueError(f"{key} must lie in [0, 1]")


def _occlusion_level(fraction: float) -> int:
    if fraction < 0.1:
        return 0
    if fraction < 0.4:
        return 1
    if fraction < 0.8:
        return 2
    return 3


def _covered_fraction(box, others) -> float:
    """Largest fraction of ``box`` hidden by any single box in ``others``."""
    area = (box[2] - box[0]) * (box[3] - box[1])
    best = 0.0
    for o in others:
        iw = min(box[2], o[2]) - max(box[0], o[0])
        ih = min(box[3], o[3]) - max(box[1], o[1])
        if iw > 0 and ih > 0 and area > 0:
            best = max(best, iw * ih / area)
    return best


def _footprint_polygon(cuboid: Cuboid3D) -> shapely.Polygon:
    return shapely.Polygon(cuboid_corners(cuboid)[:4, [0, 2]])


def _sample_cuboid(rng: np.random.Generator, spec: SceneSpec) -> Cuboid3D:
    Z = rng.uniform(*spec.depth_range)
    X = rng.uniform(*spec.lateral_range)
    Y = rng.uniform(*spec.height_range)
    dims = tuple(rng.uniform(lo, hi) for lo, hi in spec.dim_ranges)
    yaw = rng.uniform(*spec.yaw_range)
    return Cuboid3D((X, Y, Z), dims, yaw)


def _visible_box(calib: CameraCalibration, cuboid: Cuboid3D):
    """(clipped box, amodal box) or None when the object cannot be a valid label."""
    if np.min(cuboid_corners(cuboid)[:, 2]) <= 0.5:
        return None
    try:
        amodal = amodal_bbox(calib, cuboid)
    except GeometryError:
        return None
    clipped = amodal_bbox(calib, cuboid, clip=True)
    if clipped[2] - clipped[0] < 1.0 or clipped[3] - clipped[1] < 1.0:
        return None
    cx, cy = bbox_center(clipped)
    if not (0.0 <= cx < calib.image_width and 0.0 <= cy < calib.image_height):
        return None
    return clipped, amodal


def generate_scene(spec: SceneSpec, frame_index: int = 0) -> tuple[list[ObjectLabel], CameraCalibration]:
    """Sample one frame of non-intersecting objects, nearest first.

    Each cuboid is rejection-sampled until it is fully in front of the camera,
    its visible 2D box center lies in the image, and its footprint does not
    touch any earlier object's. ``bbox2d`` is the image-clipped amodal box,
    truncation the share of the amodal box outside the image, occlusion a
    level derived from the largest share of the box hidden by one nearer box.
    If retries run out the frame simply holds fewer objects.
    """
    rng = make_rng(spec.seed, frame_index, STREAM_SCENE)
    calib = spec.calib
    n = int(rng.integers(spec.n_objects[0], spec.n_objects[1] + 1))
    placed: list[tuple[Cuboid3D, tuple, tuple, shapely.Polygon]] = []
    for _ in range(n):
        for _attempt in range(spec.max_retries):
            cuboid = _sample_cuboid(rng, spec)
            boxes = _visible_box(calib, cuboid)
            if boxes is None:
                continue
            poly = _footprint_polygon(cuboid)
            if any(poly.intersects(p) for *_, p in placed):
                continue
            placed.append((cuboid, *boxes, poly))
            break

    placed.sort(key=lambda item: item[0].location[2])
    labels = []
    for idx, (cuboid, clipped, amodal, _) in enumerate(placed):
        amodal_area = (amodal[2] - amodal[0]) * (amodal[3] - amodal[1])
        clipped_area = (clipped[2] - clipped[0]) * (clipped[3] - clipped[1])
        truncation = min(max(1.0 - clipped_area / amodal_area, 0.0), 1.0)
        nearer = [p[1] for p in placed[:idx]]
        occlusion = _occlusion_level(_covered_fraction(clipped, nearer))
        X, _, Z = cuboid.location
        labels.append(ObjectLabel(
            class_name=spec.class_name,
            truncation=truncation,
            occlusion=occlusion,
            alpha=ry_to_alpha(cuboid.yaw, X, Z),
            bbox2d=clipped,
            dimensions=cuboid.dimensions,
            location=cuboid.location,
            rotation_y=cuboid.yaw,
        ))
    return labels, calib


def generate_dataset(spec: SceneSpec, n_frames: int) -> dict[str, tuple[list[ObjectLabel], CameraCalibration]]:
    return {f"{i:06d}": generate_scene(spec, i) for i in range(n_frames)}


def perturb(
    labels: Sequence[ObjectLabel],
    noise: NoiseModel,
    seed: int,
    calib: CameraCalibration | None = None,
    frame_index: int = 0,
) -> list[ObjectLabel]:
    """Noisy scored predictions from ground truth.

    Per kept object: the 2D box shifts by Gaussian pixel noise, depth scales
    by ``1 + N(0, depth_rel_sigma)`` along the viewing ray, yaw and dimensions
    get Gaussian noise. The score is ``exp(-e)`` with the normalised error
    ``e = |shift|/10px + |depth err|/0.05 + |yaw err|/0.5 + mean|dim err|/0.1``,
    so zero noise gives score 1. Each object is missed with probability
    ``fn_rate``; with probability ``fp_rate`` a random extra box is injected
    (needs ``calib``) with score ``exp(-U(1, 4))``.
    """
    rng = make_rng(seed, frame_index, STREAM_NOISE)
    out = []
    for label in labels:
        if label.is_dontcare:
            continue
        if rng.random() < noise.fn_rate:
            continue
        du, dv = rng.normal(0.0, noise.center_px_sigma, 2) if noise.center_px_sigma else (0.0, 0.0)
        rel_d = rng.normal(0.0, noise.depth_rel_sigma) if noise.depth_rel_sigma else 0.0
        dyaw = rng.normal(0.0, noise.yaw_sigma) if noise.yaw_sigma else 0.0
        rel_dims = rng.normal(0.0, noise.dim_rel_sigma, 3) if noise.dim_rel_sigma else np.zeros(3)

        scale = max(1.0 + rel_d, 0.05)
        X, Y, Z = label.location
        location = (X * scale, Y * scale, Z * scale)
        dims = tuple(max(d * (1.0 + r), 0.05) for d, r in zip(label.dimensions, rel_dims))
        ry = wrap_angle(label.rotation_y + dyaw)
        x1, y1, x2, y2 = label.bbox2d
        bbox = (x1 + du, y1 + dv, x2 + du, y2 + dv)
        err = (math.hypot(du, dv) / 10.0 + abs(scale - 1.0) / 0.05
               + abs(dyaw) / 0.5 + float(np.mean(np.abs(rel_dims))) / 0.1)
        out.append(replace(
            label,
            truncation=-1.0,
            occlusion=-1,
            alpha=ry_to_alpha(ry, location[0], location[2]),
            bbox2d=bbox,
            dimensions=dims,
            location=location,
            rotation_y=ry,
            score=math.exp(-err),
        ))
        if calib is not None and rng.random() < noise.fp_rate:
            fp = _random_false_positive(rng, calib, label.class_name)
            if fp is not None:
                out.append(fp)
    return out


def _random_false_positive(rng, calib, class_name) -> ObjectLabel | None:
    spec = SceneSpec(calib=calib)
    for _ in range(50):
        cuboid = _sample_cuboid(rng, spec)
        boxes = _visible_box(calib, cuboid)
        if boxes is None:
            continue
        X, _, Z = cuboid.location
        return ObjectLabel(class_name, -1.0, -1, ry_to_alpha(cuboid.yaw, X, Z), boxes[0],
                           cuboid.dimensions, cuboid.location, cuboid.yaw,
                           score=math.exp(-rng.uniform(1.0, 4.0)))
    return None


def write_dataset(
    out_dir: str | Path,
    frames: Mapping[str, tuple[Sequence[ObjectLabel], CameraCalibration]],
    label_subdir: str = "label_2",
    decimals: int = 2,
) -> None:
    """KITTI layout: ``label_2/``, ``calib/`` and a ``val.txt`` split."""
    out = Path(out_dir)
    (out / label_subdir).mkdir(parents=True, exist_ok=True)
    (out / "calib").mkdir(parents=True, exist_ok=True)
    for frame_id, (labels, calib) in frames.items():
        write_label_file(out / label_subdir / f"{frame_id}.txt", labels, decimals)
        (out / "calib" / f"{frame_id}.txt").write_text(serialize_calibration(calib))
    (out / "val.txt").write_text("".join(f"{fid}\n" for fid in sorted(frames)))


# -- Monte-Carlo IoU ----------------------------------------------------------

def _inside(points: np.ndarray, cuboid: Cuboid3D, use_height: bool) -> np.ndarray:
    """Point-in-cuboid test by moving points into the box frame."""
    X, Y, Z = cuboid.location
    h, w, l = cuboid.dimensions
    c, s = math.cos(cuboid.yaw), math.sin(cuboid.yaw)
    dx = points[:, 0] - X
    dz = points[:, -1] - Z
    # inverse of the yaw rotation restricted to the x-z plane
    local_x = c * dx - s * dz
    local_z = s * dx + c * dz
    mask = (np.abs(local_x) <= l / 2) & (np.abs(local_z) <= w / 2)
    if use_height:
        y = points[:, 1]
        mask &= (y <= Y) & (y >= Y - h)
    return mask


def mc_iou(
    a: Cuboid3D,
    b: Cuboid3D,
    n_samples: int = 1_000_000,
    seed: int = 0,
    mode: str = "bev",
    stratified: bool = True,
) -> float:
    """IoU estimated by uniform sampling over the axis-aligned box bounding both objects.

    ``mode`` is "bev" (x-z footprint) or "3d". With ``stratified`` the
    bounding box is split into equal cells with one uniform sample each
    (jittered grid), which keeps the sampling uniform but cuts the variance
    well below the plain ``sqrt(p(1-p)/n)``.
    """
    if n_samples < 1:
        raise ValueError("need at least one sample")
    use_height = mode == "3d"
    if mode not in ("bev", "3d"):
        raise ValueError(f"mode must be 'bev' or '3d', got {mode!r}")
    corners = np.vstack([cuboid_corners(a), cuboid_corners(b)])
    axes = [0, 1, 2] if use_height else [0, 2]
    lo = corners[:, axes].min(axis=0)
    hi = corners[:, axes].max(axis=0)
    dim = len(axes)
    rng = make_rng(seed, STREAM_MC)

    if stratified:
        per_axis = max(1, int(round(n_samples ** (1.0 / dim))))
        grids = np.meshgrid(*[np.arange(per_axis)] * dim, indexing="ij")
        cells = np.stack([g.ravel() for g in grids], axis=1).astype(np.float64)
        unit = (cells + rng.random(cells.shape)) / per_axis
    else:
        unit = rng.random((n_samples, dim))
    pts = lo + unit * (hi - lo)

    in_a = _inside(pts, a, use_height)
    in_b = _inside(pts, b, use_height)
    both = np.count_nonzero(in_a & in_b)
    union = np.count_nonzero(in_a | in_b)
    return both / union if union else 0.0


# -- reference evaluator -------------------------------------------------------

_REF_MIN_H = {0: 40.0, 1: 25.0, 2: 25.0}
_REF_MAX_OCC = {0: 0, 1: 1, 2: 2}
_REF_MAX_TRUNC = {0: 0.15, 1: 0.30, 2: 0.50}


def _ref_overlap(det: ObjectLabel, gt: ObjectLabel, metric: str) -> float:
    if metric == "2d":
        da = shapely.box(*det.bbox2d)
        ga = shapely.box(*gt.bbox2d)
        inter = da.intersection(ga).area
        union = da.area + ga.area - inter
        return inter / union if union > 0 else 0.0
    pd = _footprint_polygon(Cuboid3D.from_label(det))
    pg = _footprint_polygon(Cuboid3D.from_label(gt))
    # snap to a nanometre grid: GEOS can return an empty overlay for
    # polygons whose edges coincide up to rounding
    inter = shapely.intersection(pd, pg, grid_size=1e-9).area
    if inter < 1e-12:
        return 0.0
    if metric == "bev":
        return min(inter / (pd.area + pg.area - inter), 1.0)
    dh, gh = det.dimensions[0], gt.dimensions[0]
    dy, gy = det.location[1], gt.location[1]
    vert = min(dy, gy) - max(dy - dh, gy - gh)
    if vert <= 0:
        return 0.0
    vol = inter * vert
    return min(vol / (pd.area * dh + pg.area * gh - vol), 1.0)


def reference_ap(
    gts: Mapping[str, Sequence[ObjectLabel]],
    dets: Mapping[str, Sequence[ObjectLabel]],
    metric: str = "bev",
    iou_threshold: float = 0.7,
    class_name: str = "Car",
    difficulty: int = 1,
    neighbor_classes: Sequence[str] = ("Van",),
) -> float:
    """Naive re-implementation of matching plus 11-point AP, one difficulty at a time."""
    records = []  # (score, outcome) with outcome 1 = TP, 0 = FP
    n_pos = 0
    for fid in sorted(gts):
        frame_gt = list(gts[fid])
        frame_det = [d for d in dets.get(fid, ()) if d.class_name == class_name]
        frame_det.sort(key=lambda d: d.score, reverse=True)
        pool = [g for g in frame_gt if g.class_name == class_name or g.class_name in neighbor_classes]
        care = []
        for g in pool:
            ok = (
                g.class_name == class_name
                and g.bbox2d[3] - g.bbox2d[1] >= _REF_MIN_H[difficulty]
                and g.occlusion <= _REF_MAX_OCC[difficulty]
                and g.truncation <= _REF_MAX_TRUNC[difficulty]
            )
            care.append(ok)
            n_pos += ok
        dc_boxes = [shapely.box(*g.bbox2d) for g in frame_gt if g.class_name == "DontCare"]
        used = set()
        for d in frame_det:
            overlaps = [
                (_ref_overlap(d, g, metric), j) for j, g in enumerate(pool) if j not in used
            ]
            overlaps = [(o, j) for o, j in overlaps if o >= iou_threshold]
            if overlaps:
                best = max(o for o, _ in overlaps)
                j = min(j for o, j in overlaps if o == best)
                used.add(j)
                if care[j]:
                    records.append((d.score, 1))
                continue
            dbox = shapely.box(*d.bbox2d)
            if dbox.area > 0 and any(
                dbox.intersection(dc).area / dbox.area >= iou_threshold for dc in dc_boxes
            ):
                continue
            records.append((d.score, 0))

    if n_pos == 0:
        return 0.0
    scores = sorted({s for s, _ in records}, reverse=True)
    curve = []
    for s in scores:
        tp = sum(o for sc, o in records if sc >= s)
        n = sum(1 for sc, _ in records if sc >= s)
        curve.append((tp, n))
    ap = 0.0
    for k in range(11):
        candidates = [tp / n for tp, n in curve if tp * 10 >= k * n_pos]
        ap += max(candidates, default=0.0)
    return ap / 11
