"""JSON interchange for per-instance head outputs.

One document per frame::

    {
      "schema_version": 1,
      "frame_id": "000042",
      "stride": 4,                       # output stride R
      "input_size": [1242, 375],         # W, H in pixels
      "instances": [
        {
          "class": "Car",
          "score": 0.93,
          "cell": [152, 45],             # heatmap peak (column, row)
          "offset2d": [0.25, 0.5],       # sub-cell offset, cells
          "wh": [88.1, 61.7],            # 2D box size, pixels
          "offset3d": [3.2, -7.9],       # 3D-center minus 2D-center, pixels
          "depth": {...},                # one of the depth forms below
          "dims": [1.52, 1.63, 3.88],    # h, w, l in meters
          "rotation": [8 numbers],       # 2 bins x (cls0, cls1, sin, cos)
          "ra_depth": [{...}, ...],      # optional, per reference-area cell
          "ra_offset3d": [[dx, dy], ...] # optional, per reference-area cell
        }
      ]
    }

Depth forms: ``{"feature": f}`` (eigen), ``{"probs": [...], "residual": r}``
(sid / lid), ``{"p1", "p2", "raw1", "raw2"}`` (depjoint).
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

import jsonschema

from .depth_codec import (
    DepJointConfig,
    DepJointPrediction,
    DepthCodec,
    DepthHead,
    DiscretizationConfig,
    EigenConfig,
    OrdinalPrediction,
)
from .targets import FeatureGridMeta, RawInstanceHeads

SCHEMA_VERSION = 1

_NUM = {"type": "number"}


def _pair(kind=_NUM):
    return {"type": "array", "items": kind, "minItems": 2, "maxItems": 2}


def _depth_schema(codec: DepthCodec) -> dict:
    if isinstance(codec, EigenConfig):
        return {"type": "object", "required": ["feature"], "properties": {"feature": _NUM}}
    if isinstance(codec, DiscretizationConfig):
        n = codec.n_bins
        return {
            "type": "object",
            "required": ["probs", "residual"],
            "properties": {
                "probs": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1},
                          "minItems": n, "maxItems": n},
                "residual": _NUM,
            },
        }
    prob = {"type": "number", "minimum": 0, "maximum": 1}
    return {
        "type": "object",
        "required": ["p1", "p2", "raw1", "raw2"],
        "properties": {"p1": prob, "p2": prob, "raw1": _NUM, "raw2": _NUM},
    }


def frame_schema(codec: DepthCodec) -> dict:
    depth = _depth_schema(codec)
    instance = {
        "type": "object",
        "required": ["class", "score", "cell", "offset2d", "wh", "offset3d", "depth", "dims", "rotation"],
        "properties": {
            "class": {"type": "string", "minLength": 1},
            "score": _NUM,
            "cell": _pair({"type": "integer", "minimum": 0}),
            "offset2d": _pair(),
            "wh": _pair({"type": "number", "minimum": 0}),
            "offset3d": _pair(),
            "depth": depth,
            "dims": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                     "minItems": 3, "maxItems": 3},
            "rotation": {"type": "array", "items": _NUM, "minItems": 8, "maxItems": 8},
            "ra_depth": {"type": "array", "items": depth, "minItems": 1},
            "ra_offset3d": {"type": "array", "items": _pair(), "minItems": 1},
        },
    }
    return {
        "type": "object",
        "required": ["schema_version", "frame_id", "stride", "input_size", "instances"],
        "properties": {
            "schema_version": {"const": SCHEMA_VERSION},
            "frame_id": {"type": "string", "pattern": "^[0-9]+$"},
            "stride": {"type": "integer", "minimum": 1},
            "input_size": _pair({"type": "integer", "minimum": 1}),
            "instances": {"type": "array", "items": instance},
        },
    }


class HeadsSchemaError(ValueError):
    """Schema violation; ``pointer`` is the JSON pointer of the offending value."""

    def __init__(self, pointer: str, message: str, source: str = ""):
        self.pointer = pointer
        prefix = f"{source}: " if source else ""
        super().__init__(f"{prefix}{pointer or '/'}: {message}")


def _depth_to_json(head: DepthHead) -> dict:
    if isinstance(head, OrdinalPrediction):
        return {"probs": list(head.probs), "residual": head.residual}
    if isinstance(head, DepJointPrediction):
        return {"p1": head.p1, "p2": head.p2, "raw1": head.raw1, "raw2": head.raw2}
    return {"feature": float(head)}


def _depth_from_json(obj: dict, codec: DepthCodec) -> DepthHead:
    if isinstance(codec, EigenConfig):
        return float(obj["feature"])
    if isinstance(codec, DiscretizationConfig):
        return OrdinalPrediction(tuple(obj["probs"]), float(obj["residual"]))
    if isinstance(codec, DepJointConfig):
        return DepJointPrediction(float(obj["p1"]), float(obj["p2"]),
                                  float(obj["raw1"]), float(obj["raw2"]))
    raise TypeError(f"unknown depth codec {codec!r}")


def heads_to_document(frame_id: str, meta: FeatureGridMeta, heads: Sequence[RawInstanceHeads]) -> dict:
    instances = []
    for h in heads:
        inst = {
            "class": h.class_name,
            "score": h.score,
            "cell": [int(h.cell[0]), int(h.cell[1])],
            "offset2d": list(h.offset2d),
            "wh": list(h.wh),
            "offset3d": list(h.offset3d),
            "depth": _depth_to_json(h.depth),
            "dims": list(h.dims),
            "rotation": list(h.rotation),
        }
        if h.ra_depth:
            inst["ra_depth"] = [_depth_to_json(d) for d in h.ra_depth]
        if h.ra_offset3d:
            inst["ra_offset3d"] = [list(o) for o in h.ra_offset3d]
        instances.append(inst)
    return {
        "schema_version": SCHEMA_VERSION,
        "frame_id": frame_id,
        "stride": meta.stride,
        "input_size": [meta.input_width, meta.input_height],
        "instances": instances,
    }


def document_to_heads(doc, codec: DepthCodec, source: str = "") -> tuple[str, FeatureGridMeta, list[RawInstanceHeads]]:
    """Validate a frame document and convert it; raises :class:`HeadsSchemaError`."""
    validator = jsonschema.Draft202012Validator(frame_schema(codec))
    error = jsonschema.exceptions.best_match(validator.iter_errors(doc))
    if error is not None:
        pointer = "".join(f"/{p}" for p in error.absolute_path)
        raise HeadsSchemaError(pointer, error.message, source)

    meta = FeatureGridMeta(doc["input_size"][0], doc["input_size"][1], doc["stride"])
    heads = []
    for inst in doc["instances"]:
        ra_depth = inst.get("ra_depth")
        ra_off = inst.get("ra_offset3d")
        heads.append(RawInstanceHeads(
            cell=tuple(inst["cell"]),
            offset2d=tuple(inst["offset2d"]),
            wh=tuple(inst["wh"]),
            offset3d=tuple(inst["offset3d"]),
            depth=_depth_from_json(inst["depth"], codec),
            dims=tuple(inst["dims"]),
            rotation=tuple(inst["rotation"]),
            score=float(inst["score"]),
            class_name=inst["class"],
            ra_depth=tuple(_depth_from_json(d, codec) for d in ra_depth) if ra_depth else None,
            ra_offset3d=tuple(tuple(o) for o in ra_off) if ra_off else None,
        ))
    return doc["frame_id"], meta, heads


def read_heads(path: str | Path, codec: DepthCodec):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise HeadsSchemaError("", f"invalid JSON: {exc}", str(path)) from None
    return document_to_heads(doc, codec, str(path))


def write_heads(path: str | Path, frame_id: str, meta: FeatureGridMeta, heads: Sequence[RawInstanceHeads]):
    Path(path).write_text(json.dumps(heads_to_document(frame_id, meta, heads), indent=1))
