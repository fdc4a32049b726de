"""Readers and writers for KITTI object labels, calibration files and split lists.

Label line layout (devkit ``readme.txt``)::

    type truncated occluded alpha x1 y1 x2 y2 h w l X Y Z rotation_y [score]

``DontCare`` rows carry ``-1`` sentinels for the fields that are meaningless
for an ignore region, and prediction rows may carry ``-1`` for truncation and
occlusion. Everything else is validated strictly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

DEFAULT_IMAGE_WIDTH = 1242
DEFAULT_IMAGE_HEIGHT = 375

DONTCARE = "DontCare"

_FIELD_NAMES = (
    "type", "truncated", "occluded", "alpha",
    "bbox_left", "bbox_top", "bbox_right", "bbox_bottom",
    "height", "width", "length",
    "x", "y", "z", "rotation_y", "score",
)


class KittiFormatError(ValueError):
    """Malformed KITTI file content."""


@dataclass(frozen=True)
class ObjectLabel:
    class_name: str
    truncation: float
    occlusion: int
    alpha: float
    bbox2d: tuple[float, float, float, float]
    dimensions: tuple[float, float, float]  # h, w, l
    location: tuple[float, float, float]  # bottom-face center, camera frame
    rotation_y: float
    score: float | None = None

    @property
    def is_dontcare(self) -> bool:
        return self.class_name == DONTCARE

    @property
    def bbox_height(self) -> float:
        return self.bbox2d[3] - self.bbox2d[1]

    @property
    def depth(self) -> float:
        return self.location[2]


@dataclass(frozen=True, eq=False)
class CameraCalibration:
    P: np.ndarray
    image_width: int = DEFAULT_IMAGE_WIDTH
    image_height: int = DEFAULT_IMAGE_HEIGHT

    def __post_init__(self):
        P = np.asarray(self.P, dtype=np.float64).reshape(3, 4).copy()
        if not np.all(np.isfinite(P[2])):
            raise KittiFormatError("third row of P must be finite")
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    def __eq__(self, other):
        if not isinstance(other, CameraCalibration):
            return NotImplemented
        return (
            np.array_equal(self.P, other.P)
            and self.image_width == other.image_width
            and self.image_height == other.image_height
        )

    __hash__ = None

    @property
    def focal(self) -> float:
        return float(self.P[0, 0])

    def with_image_size(self, width: int, height: int) -> "CameraCalibration":
        return CameraCalibration(self.P, width, height)


@dataclass(frozen=True)
class Frame:
    frame_id: str
    labels: tuple[ObjectLabel, ...]
    calib: CameraCalibration


def _parse_float(token: str, index: int) -> float:
    # float() accepts "nan", "inf", "1_000" and surrounding junk we do not want.
    try:
        value = float(token)
    except ValueError:
        raise KittiFormatError(
            f"field {index} ({_FIELD_NAMES[index - 1]}): not a number: {token!r}"
        ) from None
    if "_" in token or not math.isfinite(value):
        raise KittiFormatError(
            f"field {index} ({_FIELD_NAMES[index - 1]}): not a finite decimal: {token!r}"
        )
    return value


def parse_label_line(line: str) -> ObjectLabel:
    """Parse one 15-field (ground truth) or 16-field (prediction) label line.

    Errors name the offending field by its 1-based index.
    """
    tokens = line.split()
    if len(tokens) not in (15, 16):
        raise KittiFormatError(
            f"field-count mismatch: expected 15 or 16 fields, got {len(tokens)}"
        )
    class_name = tokens[0]
    values = [_parse_float(tok, i) for i, tok in enumerate(tokens[1:], start=2)]
    truncation, occ_raw, alpha = values[0:3]
    x1, y1, x2, y2 = values[3:7]
    h, w, l = values[7:10]
    location = tuple(values[10:13])
    rotation_y = values[13]
    score = values[14] if len(tokens) == 16 else None

    dontcare = class_name == DONTCARE
    # -1 sentinels are legal on ignore regions and on predictions only.
    sentinel_ok = dontcare or score is not None

    if occ_raw != int(occ_raw):
        raise KittiFormatError(f"field 3 (occluded): not an integer: {tokens[2]!r}")
    occlusion = int(occ_raw)
    if not (0 <= occlusion <= 3 or (sentinel_ok and occlusion == -1)):
        raise KittiFormatError(f"field 3 (occluded): {occlusion} outside 0..3")
    if not (0.0 <= truncation <= 1.0 or (sentinel_ok and truncation == -1.0)):
        raise KittiFormatError(f"field 2 (truncated): {truncation} outside [0, 1]")
    if x1 > x2:
        raise KittiFormatError(f"field 7 (bbox_right): x2={x2} < x1={x1}")
    if y1 > y2:
        raise KittiFormatError(f"field 8 (bbox_bottom): y2={y2} < y1={y1}")
    if not dontcare:
        for idx, val in ((9, h), (10, w), (11, l)):
            if val <= 0:
                raise KittiFormatError(
                    f"field {idx} ({_FIELD_NAMES[idx - 1]}): dimension must be > 0, got {val}"
                )

    return ObjectLabel(
        class_name=class_name,
        truncation=truncation,
        occlusion=occlusion,
        alpha=alpha,
        bbox2d=(x1, y1, x2, y2),
        dimensions=(h, w, l),
        location=location,
        rotation_y=rotation_y,
        score=score,
    )


def _fmt(value: float, decimals: int) -> str:
    text = f"{value:.{decimals}f}"
    # avoid "-0.00", which is legal but makes diffs noisy
    if float(text) == 0.0:
        text = f"{0.0:.{decimals}f}"
    return text


def serialize_label(label: ObjectLabel, decimals: int = 2) -> str:
    """Format a label as a KITTI line; the score column is written when present."""
    parts = [
        label.class_name,
        _fmt(label.truncation, decimals),
        str(label.occlusion),
        _fmt(label.alpha, decimals),
        *(_fmt(v, decimals) for v in label.bbox2d),
        *(_fmt(v, decimals) for v in label.dimensions),
        *(_fmt(v, decimals) for v in label.location),
        _fmt(label.rotation_y, decimals),
    ]
    if label.score is not None:
        parts.append(_fmt(label.score, decimals))
    return " ".join(parts)


def serialize_prediction(label: ObjectLabel, decimals: int = 2) -> str:
    if label.score is None:
        raise KittiFormatError("prediction lines require a score")
    return serialize_label(label, decimals)


def parse_label_file(text: str) -> list[ObjectLabel]:
    labels = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            labels.append(parse_label_line(line))
        except KittiFormatError as exc:
            raise KittiFormatError(f"line {lineno}: {exc}") from None
    return labels


def read_label_file(path: str | Path) -> list[ObjectLabel]:
    path = Path(path)
    try:
        return parse_label_file(path.read_text())
    except KittiFormatError as exc:
        raise KittiFormatError(f"{path}: {exc}") from None


def parse_calibration(
    text: str,
    key: str = "P2",
    image_size: tuple[int, int] | None = None,
) -> CameraCalibration:
    """Read the ``key`` projection matrix from a calibration file body."""
    prefix = key + ":"
    for line in text.splitlines():
        if line.startswith(prefix):
            tokens = line[len(prefix):].split()
            if len(tokens) != 12:
                raise KittiFormatError(
                    f"{key}: expected 12 values, got {len(tokens)}"
                )
            try:
                values = [float(t) for t in tokens]
            except ValueError as exc:
                raise KittiFormatError(f"{key}: {exc}") from None
            width, height = image_size or (DEFAULT_IMAGE_WIDTH, DEFAULT_IMAGE_HEIGHT)
            return CameraCalibration(np.array(values).reshape(3, 4), width, height)
    raise KittiFormatError(f"missing {prefix} line")


def read_calibration(
    path: str | Path, key: str = "P2", image_size: tuple[int, int] | None = None
) -> CameraCalibration:
    path = Path(path)
    try:
        return parse_calibration(path.read_text(), key, image_size)
    except KittiFormatError as exc:
        raise KittiFormatError(f"{path}: {exc}") from None


def serialize_calibration(calib: CameraCalibration) -> str:
    """Write a devkit-shaped calibration file (every P_k set to P2)."""
    row = " ".join(f"{v:.12e}" for v in calib.P.ravel())
    eye3 = " ".join(f"{v:.12e}" for v in np.eye(3).ravel())
    eye34 = " ".join(f"{v:.12e}" for v in np.eye(3, 4).ravel())
    lines = [f"P{k}: {row}" for k in range(4)]
    lines += [f"R0_rect: {eye3}", f"Tr_velo_to_cam: {eye34}", f"Tr_imu_to_velo: {eye34}"]
    return "\n".join(lines) + "\n"


def parse_split(text: str) -> list[str]:
    """Frame ids, one per line; returned sorted ascending. Duplicates are an error."""
    ids = [line.strip() for line in text.splitlines() if line.strip()]
    for frame_id in ids:
        if not frame_id.isdigit():
            raise KittiFormatError(f"split entry is not a frame id: {frame_id!r}")
    seen = set()
    for frame_id in ids:
        if frame_id in seen:
            raise KittiFormatError(f"duplicate frame id in split: {frame_id}")
        seen.add(frame_id)
    return sorted(ids, key=lambda s: (int(s), s))


def read_split(path: str | Path) -> list[str]:
    return parse_split(Path(path).read_text())


def load_dataset(
    label_dir: str | Path,
    calib_dir: str | Path,
    split: Sequence[str],
    image_sizes: Mapping[str, tuple[int, int]] | None = None,
) -> list[Frame]:
    """Load labels and calibration for every id in ``split``, in split order.

    A missing file for any id aborts the load; nothing is skipped silently.
    """
    label_dir, calib_dir = Path(label_dir), Path(calib_dir)
    missing = []
    for frame_id in split:
        for path in (label_dir / f"{frame_id}.txt", calib_dir / f"{frame_id}.txt"):
            if not path.is_file():
                missing.append(f"{frame_id} ({path})")
    if missing:
        raise FileNotFoundError("missing files for frame ids: " + ", ".join(missing))

    frames = []
    for frame_id in split:
        size = image_sizes.get(frame_id) if image_sizes else None
        calib = read_calibration(calib_dir / f"{frame_id}.txt", image_size=size)
        labels = read_label_file(label_dir / f"{frame_id}.txt")
        frames.append(Frame(frame_id, tuple(labels), calib))
    return frames


def list_frame_ids(directory: str | Path) -> list[str]:
    """Sorted ids of the ``*.txt`` files in a label/prediction directory."""
    return parse_split("\n".join(p.stem for p in Path(directory).glob("*.txt")))


def write_label_file(path: str | Path, labels: Sequence[ObjectLabel], decimals: int = 2):
    text = "".join(serialize_label(lab, decimals) + "\n" for lab in labels)
    Path(path).write_text(text)


__all__ = [
    "CameraCalibration",
    "DEFAULT_IMAGE_HEIGHT",
    "DEFAULT_IMAGE_WIDTH",
    "DONTCARE",
    "Frame",
    "KittiFormatError",
    "ObjectLabel",
    "list_frame_ids",
    "load_dataset",
    "parse_calibration",
    "parse_label_file",
    "parse_label_line",
    "parse_split",
    "read_calibration",
    "read_label_file",
    "read_split",
    "serialize_calibration",
    "serialize_label",
    "serialize_prediction",
    "write_label_file",
]
