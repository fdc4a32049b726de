"""Ground-truth target encoding and per-instance decoding of head outputs.

An object is anchored at the center of its (visible) 2D box, which always
lies inside the image. Its 3D properties are decoded at the projected
volumetric cuboid center, reached from the 2D center by a regressed pixel
offset. Optional reference areas (RAs) let a block of feature cells vote on
the depth and offset heads.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .depth_codec import (
    DepthCodec,
    DepthHead,
    average_heads,
    decode_instance_depth,
    depth_in_range,
    encode_instance_depth,
)
from .geometry import (
    Cuboid3D,
    GeometryError,
    alpha_to_ry,
    backproject,
    bbox_center,
    cuboid_center,
    project,
    ry_to_alpha,
)
from .kitti_io import CameraCalibration, ObjectLabel

DEFAULT_CLASSES = ("Car", "Pedestrian", "Cyclist")


@dataclass(frozen=True)
class FeatureGridMeta:
    input_width: int
    input_height: int
    stride: int = 4

    def __post_init__(self):
        if self.stride < 1 or self.input_width < 1 or self.input_height < 1:
            raise ValueError(f"invalid grid meta {self}")

    @property
    def grid_width(self) -> int:
        return -(-self.input_width // self.stride)

    @property
    def grid_height(self) -> int:
        return -(-self.input_height // self.stride)

    @classmethod
    def for_calib(cls, calib: CameraCalibration, stride: int = 4) -> "FeatureGridMeta":
        return cls(calib.image_width, calib.image_height, stride)


@dataclass(frozen=True)
class ReferenceAreaConfig:
    gamma: float = 0.4

    def __post_init__(self):
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in (0, 1], got {self.gamma}")


@dataclass(frozen=True)
class RawInstanceHeads:
    """Head outputs read for one detected instance.

    ``cell`` is the integer heatmap peak (column, row) and ``offset2d`` the
    sub-cell quantization offset, so the 2D center in pixels is
    ``(cell + offset2d) * stride``. ``rotation`` holds the 2-bin orientation
    encoding: ``[cls0, cls1, sin, cos]`` for each bin. ``ra_depth`` and
    ``ra_offset3d`` optionally carry the head values of every cell in the
    instance's reference area; when present they replace the center values.
    """

    cell: tuple[int, int]
    offset2d: tuple[float, float]
    wh: tuple[float, float]
    offset3d: tuple[float, float]
    depth: DepthHead
    dims: tuple[float, float, float]
    rotation: tuple[float, ...]
    score: float = 1.0
    class_name: str = "Car"
    ra_depth: tuple[DepthHead, ...] | None = None
    ra_offset3d: tuple[tuple[float, float], ...] | None = None


@dataclass(frozen=True)
class InstanceTarget:
    label_index: int
    class_id: int
    heads: RawInstanceHeads
    depth: float


@dataclass
class FrameTargets:
    meta: FeatureGridMeta
    classes: tuple[str, ...]
    heatmap: np.ndarray  # (C, Hg, Wg)
    instances: list[InstanceTarget] = field(default_factory=list)
    ra_owner: np.ndarray | None = None  # (Hg, Wg) instance position or -1
    drops: Counter = field(default_factory=Counter)

    @property
    def dropped(self) -> int:
        return sum(self.drops.values())

    def dense_grids(self) -> dict[str, np.ndarray]:
        """Dense regression targets plus a mask of supervised cells.

        Depth and 3D-offset targets cover each instance's owned RA cells when
        RAs are active; everything else sits on the center cell only.
        """
        Hg, Wg = self.meta.grid_height, self.meta.grid_width
        grids = {
            "offset2d": np.zeros((2, Hg, Wg)),
            "wh": np.zeros((2, Hg, Wg)),
            "offset3d": np.zeros((2, Hg, Wg)),
            "depth": np.zeros((1, Hg, Wg)),
            "dims": np.zeros((3, Hg, Wg)),
            "rotation": np.zeros((8, Hg, Wg)),
            "center_mask": np.zeros((Hg, Wg), dtype=bool),
            "ra_mask": np.zeros((Hg, Wg), dtype=bool),
        }
        for pos, inst in enumerate(self.instances):
            cx, cy = inst.heads.cell
            h = inst.heads
            grids["offset2d"][:, cy, cx] = h.offset2d
            grids["wh"][:, cy, cx] = h.wh
            grids["dims"][:, cy, cx] = h.dims
            grids["rotation"][:, cy, cx] = h.rotation
            grids["center_mask"][cy, cx] = True
            cells = [(cy, cx)]
            if self.ra_owner is not None:
                owned = np.argwhere(self.ra_owner == pos)
                if len(owned):
                    cells = [tuple(c) for c in owned]
            for r, c in cells:
                grids["offset3d"][:, r, c] = h.offset3d
                grids["depth"][0, r, c] = inst.depth
                grids["ra_mask"][r, c] = True
        return grids


# -- heatmap ----------------------------------------------------------------

def gaussian_radius(height: float, width: float, min_overlap: float = 0.7) -> float:
    """Keypoint splat radius (in cells) for a box of the given size.

    The smallest radius among the three corner-shift cases for which a box
    shifted by that radius still reaches ``min_overlap`` IoU. This is the
    formula keypoint detectors have used since CornerNet, quirks included.
    """
    a1 = 1.0
    b1 = height + width
    c1 = width * height * (1 - min_overlap) / (1 + min_overlap)
    r1 = (b1 + math.sqrt(b1 ** 2 - 4 * a1 * c1)) / 2

    a2 = 4.0
    b2 = 2 * (height + width)
    c2 = (1 - min_overlap) * width * height
    r2 = (b2 + math.sqrt(b2 ** 2 - 4 * a2 * c2)) / 2

    a3 = 4 * min_overlap
    b3 = -2 * min_overlap * (height + width)
    c3 = (min_overlap - 1) * width * height
    r3 = (b3 + math.sqrt(b3 ** 2 - 4 * a3 * c3)) / 2
    return min(r1, r2, r3)


def splat_sigma(radius: int) -> float:
    return (2 * radius + 1) / 6.0


def gaussian_kernel(radius: int) -> np.ndarray:
    sigma = splat_sigma(radius)
    y, x = np.ogrid[-radius:radius + 1, -radius:radius + 1]
    kernel = np.exp(-(x * x + y * y) / (2 * sigma * sigma))
    kernel[kernel < np.finfo(kernel.dtype).eps * kernel.max()] = 0
    return kernel


def center_cell(center, meta: FeatureGridMeta) -> tuple[int, int]:
    """Grid cell of a pixel position; the far image edge clamps to the last cell."""
    cx = int(math.floor(center[0] / meta.stride))
    cy = int(math.floor(center[1] / meta.stride))
    return (min(max(cx, 0), meta.grid_width - 1), min(max(cy, 0), meta.grid_height - 1))


def draw_gaussian(heatmap: np.ndarray, cell: tuple[int, int], radius: int) -> None:
    """Max-merge a Gaussian splat into a 2D heatmap in place."""
    kernel = gaussian_kernel(radius)
    x, y = cell
    height, width = heatmap.shape
    left, right = min(x, radius), min(width - x, radius + 1)
    top, bottom = min(y, radius), min(height - y, radius + 1)
    region = heatmap[y - top:y + bottom, x - left:x + right]
    patch = kernel[radius - top:radius + bottom, radius - left:radius + right]
    np.maximum(region, patch, out=region)


def gaussian_heatmap(
    centers: Sequence[tuple[float, float]],
    sizes: Sequence[tuple[float, float]],
    class_ids: Sequence[int],
    meta: FeatureGridMeta,
    num_classes: int,
) -> np.ndarray:
    """Per-class heatmaps (C, Hg, Wg) with one splat per instance.

    ``centers`` and ``sizes`` (w, h) are in input pixels; the splat radius is
    computed from the size on the feature grid.
    """
    heatmap = np.zeros((num_classes, meta.grid_height, meta.grid_width))
    for center, (w, h), cls in zip(centers, sizes, class_ids):
        radius = max(0, int(gaussian_radius(math.ceil(h / meta.stride), math.ceil(w / meta.stride))))
        draw_gaussian(heatmap[cls], center_cell(center, meta), radius)
    return heatmap


def quantization_offset(center, meta: FeatureGridMeta) -> tuple[float, float]:
    """Sub-cell position of a pixel; ``(cell + offset) * stride`` restores it."""
    cx, cy = center_cell(center, meta)
    return (center[0] / meta.stride - cx, center[1] / meta.stride - cy)


# -- reference areas --------------------------------------------------------

def reference_area(bbox2d: Sequence[float], cfg: ReferenceAreaConfig) -> tuple[float, float, float, float]:
    cx, cy = bbox_center(bbox2d)
    half_w = cfg.gamma * (bbox2d[2] - bbox2d[0]) / 2.0
    half_h = cfg.gamma * (bbox2d[3] - bbox2d[1]) / 2.0
    return (cx - half_w, cy - half_h, cx + half_w, cy + half_h)


def _ra_cells(rect, meta: FeatureGridMeta) -> tuple[int, int, int, int]:
    c0 = center_cell((rect[0], rect[1]), meta)
    c1 = center_cell((rect[2], rect[3]), meta)
    return c0[0], c0[1], c1[0], c1[1]


def rasterize_reference_areas(
    bboxes: Sequence[Sequence[float]],
    depths: Sequence[float],
    meta: FeatureGridMeta,
    cfg: ReferenceAreaConfig,
) -> np.ndarray:
    """Owner grid: each covered cell holds the index of the nearest covering instance.

    A cell is covered when it lies between the cells of the RA's top-left
    and bottom-right corners (inclusive), so a vanishing RA still covers its
    center cell. Equal depths go to the lower index. Uncovered cells are -1.
    """
    owner = np.full((meta.grid_height, meta.grid_width), -1, dtype=np.int64)
    best = np.full(owner.shape, np.inf)
    for idx, (bbox, depth) in enumerate(zip(bboxes, depths)):
        x0, y0, x1, y1 = _ra_cells(reference_area(bbox, cfg), meta)
        sub_best = best[y0:y1 + 1, x0:x1 + 1]
        closer = depth < sub_best  # strict: earlier index keeps ties
        owner[y0:y1 + 1, x0:x1 + 1][closer] = idx
        sub_best[closer] = depth
    return owner


def ra_aggregate(values: Sequence[float]) -> float:
    """Equal-weight mean of per-cell predictions."""
    if len(values) == 0:
        raise ValueError("reference area has no cells")
    return float(np.mean(values))


# -- orientation ------------------------------------------------------------

def encode_orientation(alpha: float) -> tuple[float, ...]:
    """2-bin orientation target: bin 1 is centred on -pi/2, bin 2 on +pi/2."""
    ret = [0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]
    if alpha < math.pi / 6 or alpha > 5 * math.pi / 6:
        r = alpha + 0.5 * math.pi
        ret[1] = 1.0
        ret[2], ret[3] = math.sin(r), math.cos(r)
    if alpha > -math.pi / 6 or alpha < -5 * math.pi / 6:
        r = alpha - 0.5 * math.pi
        ret[5] = 1.0
        ret[6], ret[7] = math.sin(r), math.cos(r)
    return tuple(ret)


def decode_orientation(rot: Sequence[float]) -> float:
    if len(rot) != 8:
        raise ValueError(f"orientation head needs 8 values, got {len(rot)}")
    if rot[1] > rot[5]:
        return math.atan2(rot[2], rot[3]) - 0.5 * math.pi
    return math.atan2(rot[6], rot[7]) + 0.5 * math.pi


# -- encode / decode --------------------------------------------------------

def encode_targets(
    labels: Sequence[ObjectLabel],
    calib: CameraCalibration,
    meta: FeatureGridMeta,
    codec: DepthCodec,
    ra: ReferenceAreaConfig | None = None,
    classes: Sequence[str] = DEFAULT_CLASSES,
) -> FrameTargets:
    """Build training targets for one frame.

    Labels of classes outside ``classes`` (DontCare included) are skipped.
    Instances are dropped, and counted in ``drops`` by reason, when the 2D
    box center leaves the image or the depth falls outside the codec range.
    """
    classes = tuple(classes)
    targets = FrameTargets(meta, classes, np.zeros((len(classes), meta.grid_height, meta.grid_width)))
    centers, sizes, class_ids, bboxes, depths = [], [], [], [], []

    for idx, label in enumerate(labels):
        if label.class_name not in classes:
            continue
        c2d = bbox_center(label.bbox2d)
        if not (0.0 <= c2d[0] <= meta.input_width and 0.0 <= c2d[1] <= meta.input_height):
            targets.drops["center_outside_image"] += 1
            continue
        cuboid = Cuboid3D.from_label(label)
        depth = cuboid.location[2]
        if not depth_in_range(depth, codec):
            targets.drops["depth_out_of_range"] += 1
            continue
        try:
            c3d = project(calib, cuboid_center(cuboid))
        except GeometryError:
            targets.drops["degenerate_projection"] += 1
            continue

        X, _, Z = cuboid.location
        alpha = ry_to_alpha(cuboid.yaw, X, Z)
        wh = (label.bbox2d[2] - label.bbox2d[0], label.bbox2d[3] - label.bbox2d[1])
        heads = RawInstanceHeads(
            cell=center_cell(c2d, meta),
            offset2d=quantization_offset(c2d, meta),
            wh=wh,
            offset3d=(c3d[0] - c2d[0], c3d[1] - c2d[1]),
            depth=encode_instance_depth(depth, codec),
            dims=cuboid.dimensions,
            rotation=encode_orientation(alpha),
            score=1.0,
            class_name=label.class_name,
        )
        class_id = classes.index(label.class_name)
        targets.instances.append(InstanceTarget(idx, class_id, heads, depth))
        centers.append(c2d)
        sizes.append(wh)
        class_ids.append(class_id)
        bboxes.append(label.bbox2d)
        depths.append(depth)

    targets.heatmap = gaussian_heatmap(centers, sizes, class_ids, meta, len(classes))
    if ra is not None:
        targets.ra_owner = rasterize_reference_areas(bboxes, depths, meta, ra)
    return targets


def raw_heads_from_targets(targets: FrameTargets) -> list[RawInstanceHeads]:
    """Ideal head outputs for every encoded instance.

    With RAs active, every owned cell carries the instance's own depth and
    offset targets, mirroring how the RA is supervised.
    """
    out = []
    for pos, inst in enumerate(targets.instances):
        heads = inst.heads
        if targets.ra_owner is not None:
            n_cells = int(np.count_nonzero(targets.ra_owner == pos))
            if n_cells:
                heads = replace(
                    heads,
                    ra_depth=(heads.depth,) * n_cells,
                    ra_offset3d=(heads.offset3d,) * n_cells,
                )
        out.append(heads)
    return out


def decode_objects(
    raw: Sequence[RawInstanceHeads],
    calib: CameraCalibration,
    meta: FeatureGridMeta,
    codec: DepthCodec,
    use_offset3d: bool = True,
) -> list[tuple[ObjectLabel, Cuboid3D]]:
    """Turn per-instance head outputs into scored KITTI labels and cuboids.

    With ``use_offset3d=False`` the 3D center is read at the 2D center, which
    is how a plain center-point detector decodes.
    """
    results = []
    for heads in raw:
        c2d = (
            (heads.cell[0] + heads.offset2d[0]) * meta.stride,
            (heads.cell[1] + heads.offset2d[1]) * meta.stride,
        )
        if heads.ra_offset3d:
            offset = (
                ra_aggregate([o[0] for o in heads.ra_offset3d]),
                ra_aggregate([o[1] for o in heads.ra_offset3d]),
            )
        else:
            offset = tuple(heads.offset3d)
        c3d = (c2d[0] + offset[0], c2d[1] + offset[1]) if use_offset3d else c2d

        depth_head = average_heads(list(heads.ra_depth)) if heads.ra_depth else heads.depth
        depth = decode_instance_depth(depth_head, codec)

        h, w, l = heads.dims
        X, Yc, Z = backproject(calib, c3d, depth)
        location = (X, Yc + h / 2.0, Z)
        alpha = decode_orientation(heads.rotation)
        ry = alpha_to_ry(alpha, X, Z)
        cuboid = Cuboid3D(location, (h, w, l), ry)

        bw, bh = heads.wh
        bbox = (c2d[0] - bw / 2.0, c2d[1] - bh / 2.0, c2d[0] + bw / 2.0, c2d[1] + bh / 2.0)
        label = ObjectLabel(
            class_name=heads.class_name,
            truncation=-1.0,
            occlusion=-1,
            alpha=ry_to_alpha(cuboid.yaw, X, Z),
            bbox2d=bbox,
            dimensions=cuboid.dimensions,
            location=cuboid.location,
            rotation_y=cuboid.yaw,
            score=float(heads.score),
        )
        results.append((label, cuboid))
    return results
