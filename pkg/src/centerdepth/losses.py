"""Closed-form losses and their analytic gradients.

Every function returns a :class:`LossResult` whose ``gradient`` is laid out
in the same order as the inputs being differentiated (documented per
function). Probabilities are clamped to ``[EPS, 1 - EPS]`` before any log;
gradients are evaluated at the clamped values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .depth_codec import (
    DepJointConfig,
    DepJointPrediction,
    DepthRangeError,
    DiscretizationConfig,
    OrdinalPrediction,
    depjoint_membership,
    eigen_transform,
    encode_depth,
)

EPS = 1e-7


@dataclass(frozen=True)
class LossResult:
    value: float
    gradient: np.ndarray


@dataclass(frozen=True)
class LossWeights:
    lambda_dep: float = 1.0
    lambda_off: float = 1.0

    def __post_init__(self):
        for key in ("lambda_dep", "lambda_off"):
            val = getattr(self, key)
            if not (math.isfinite(val) and val >= 0):
                raise ValueError(f"{key} must be finite and >= 0, got {val}")


def _clamp(p):
    return np.clip(np.asarray(p, dtype=np.float64), EPS, 1.0 - EPS)


def ordinal_loss(probs, gt_bin: int) -> LossResult:
    """Binary ordinal loss: bins below ``gt_bin`` should fire, the rest should not.

    Gradient is w.r.t. each ``probs[n]``.
    """
    p = _clamp(probs)
    N = len(p)
    if int(gt_bin) != gt_bin or not 0 <= gt_bin <= N:
        raise ValueError(f"ground-truth bin {gt_bin} outside [0, {N}]")
    below = np.arange(N) < gt_bin
    value = -(np.sum(np.log(p[below])) + np.sum(np.log1p(-p[~below])))
    grad = np.where(below, -1.0 / p, 1.0 / (1.0 - p))
    return LossResult(float(value), grad)


def smooth_l1(x: float, y: float) -> LossResult:
    """Huber loss with knee at 1; gradient is (d/dx, d/dy)."""
    diff = x - y
    if abs(diff) < 1.0:
        value, g = 0.5 * diff * diff, diff
    else:
        value, g = abs(diff) - 0.5, math.copysign(1.0, diff)
    return LossResult(value, np.array([g, -g]))


def l1(x: float, y: float) -> LossResult:
    """Absolute difference; the subgradient at x == y is taken as 0."""
    diff = x - y
    g = 0.0 if diff == 0 else math.copysign(1.0, diff)
    return LossResult(abs(diff), np.array([g, -g]))


def binary_cross_entropy(p: float, target: float) -> LossResult:
    """Gradient w.r.t. ``p`` only (length 1)."""
    pc = float(_clamp(p))
    value = -(target * math.log(pc) + (1.0 - target) * math.log1p(-pc))
    grad = -target / pc + (1.0 - target) / (1.0 - pc)
    return LossResult(value, np.array([grad]))


def lid_loss(pred: OrdinalPrediction, gt_depth: float, cfg: DiscretizationConfig) -> LossResult:
    """Ordinal loss plus smooth-L1 on the fractional residual for one instance.

    Gradient layout: N partials for the probabilities, then the residual.
    """
    enc = encode_depth(gt_depth, cfg)
    # l_int == N only at d_max; the loss then wants every bin active
    ordinal = ordinal_loss(pred.probs, min(enc.l_int, cfg.n_bins))
    res = smooth_l1(pred.residual, enc.l_res)
    return LossResult(ordinal.value + res.value, np.append(ordinal.gradient, res.gradient[0]))


def depjoint_loss(pred: DepJointPrediction, gt_depth: float, cfg: DepJointConfig) -> LossResult:
    """Two-bin classification (BCE) plus L1 regression in exponential space.

    Gradient layout: (p1, p2, raw1, raw2). Regressors of inactive bins get 0.
    """
    if not cfg.d_min <= gt_depth <= cfg.d_max:
        raise DepthRangeError(f"depth {gt_depth} outside [{cfg.d_min}, {cfg.d_max}]")
    in1, in2 = depjoint_membership(gt_depth, cfg)
    bce1 = binary_cross_entropy(pred.p1, in1)
    bce2 = binary_cross_entropy(pred.p2, in2)
    value = bce1.value + bce2.value
    grad = np.array([bce1.gradient[0], bce2.gradient[0], 0.0, 0.0])

    if in1:
        phi1 = eigen_transform(pred.raw1)
        reg = l1(phi1, gt_depth)
        value += reg.value
        grad[2] = reg.gradient[0] * -phi1  # d(exp(-r))/dr = -exp(-r)
    if in2:
        phi2 = eigen_transform(pred.raw2)
        reg = l1(phi2, cfg.d_max - gt_depth)
        value += reg.value
        grad[3] = reg.gradient[0] * -phi2
    return LossResult(value, grad)


def total_depth_loss(results: Iterable[LossResult], weights: LossWeights = LossWeights()) -> float:
    return weights.lambda_dep * sum(r.value for r in results)


def offset3d_loss(pred_offset, gt_offset, weights: LossWeights = LossWeights()) -> LossResult:
    """lambda_off-weighted L1 on the 2D-to-3D center offset; gradient w.r.t. pred (dx, dy)."""
    parts = [l1(p, g) for p, g in zip(pred_offset, gt_offset)]
    value = weights.lambda_off * sum(r.value for r in parts)
    grad = weights.lambda_off * np.array([r.gradient[0] for r in parts])
    return LossResult(value, grad)


def focal_loss(heatmap_pred, heatmap_gt, alpha: float = 2.0, beta: float = 4.0) -> LossResult:
    """Penalty-reduced pixel-wise focal loss for keypoint heatmaps.

    Positives are cells where the target equals 1. Negatives are weighted by
    ``(1 - gt)**beta`` so cells near a peak are penalised less. The sum is
    normalised by the number of positives (or left as is when there are none).
    Gradient has the heatmap's shape.
    """
    pred = np.asarray(heatmap_pred, dtype=np.float64)
    gt = np.asarray(heatmap_gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    p = np.clip(pred, EPS, 1.0 - EPS)
    pos = gt == 1.0
    neg_w = np.where(pos, 0.0, (1.0 - gt) ** beta)

    log_p, log_q = np.log(p), np.log1p(-p)
    pos_terms = np.where(pos, (1.0 - p) ** alpha * log_p, 0.0)
    neg_terms = neg_w * p ** alpha * log_q
    num_pos = int(pos.sum())
    norm = float(max(num_pos, 1))
    value = -(pos_terms.sum() + neg_terms.sum()) / norm

    d_pos = -alpha * (1.0 - p) ** (alpha - 1) * log_p + (1.0 - p) ** alpha / p
    d_neg = neg_w * (alpha * p ** (alpha - 1) * log_q - p ** alpha / (1.0 - p))
    grad = -(np.where(pos, d_pos, 0.0) + d_neg) / norm
    return LossResult(float(value), grad)
