"""Instance depth encodings.

Four codecs share one contract (encode a metric depth into head values,
decode head values back to meters):

* ``EigenConfig``  -- a single feature ``f`` with depth ``exp(-f)``.
* ``DiscretizationConfig`` with strategy ``"sid"`` or ``"lid"`` -- ordinal
  bins plus a regressed fractional residual.
* ``DepJointConfig`` -- two (possibly overlapping) depth bins, each with a
  confidence and an exponential-output regressor; decoded as a weighted mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

SID = "sid"
LID = "lid"

# exp(-700) ~ 1e-304: stands in for a zero regression target, keeps JSON finite.
_MAX_FEATURE = 700.0


class DepthRangeError(ValueError):
    pass


@dataclass(frozen=True)
class EigenConfig:
    name = "eigen"


@dataclass(frozen=True)
class DiscretizationConfig:
    """Ordinal bin layout over [d_min, d_max].

    ``d_min_star``/``d_max_star`` are the raw depth extrema; ``shift`` is added
    to both (and to every depth before encoding) so that the working range is
    ``[d_min_star + shift, d_max_star + shift]``.
    """

    d_min_star: float = 1.0
    d_max_star: float = 91.0
    n_bins: int = 80
    strategy: str = LID
    shift: float = 0.0

    def __post_init__(self):
        if self.strategy not in (SID, LID):
            raise ValueError(f"unknown discretization strategy {self.strategy!r}")
        if int(self.n_bins) != self.n_bins or self.n_bins < 1:
            raise ValueError(f"n_bins must be a positive integer, got {self.n_bins}")
        if not self.d_min < self.d_max:
            raise ValueError(f"need d_min < d_max, got {self.d_min}, {self.d_max}")
        if self.strategy == SID and self.d_min <= 0:
            raise ValueError("SID needs a positive d_min; use normalized()")

    @classmethod
    def normalized(cls, d_min_star: float, d_max_star: float, n_bins: int = 80,
                   strategy: str = LID) -> "DiscretizationConfig":
        """Shift the raw range so that the working d_min is exactly 1.0."""
        return cls(d_min_star, d_max_star, n_bins, strategy, shift=1.0 - d_min_star)

    @property
    def name(self) -> str:
        return self.strategy

    @property
    def d_min(self) -> float:
        return self.d_min_star + self.shift

    @property
    def d_max(self) -> float:
        return self.d_max_star + self.shift


@dataclass(frozen=True)
class DepthEncoding:
    l_int: int
    l_res: float

    @property
    def value(self) -> float:
        return self.l_int + self.l_res


@dataclass(frozen=True)
class OrdinalPrediction:
    """``probs[n]`` is P(object lies beyond bin n); ``residual`` the fractional part."""

    probs: tuple[float, ...]
    residual: float

    def __post_init__(self):
        probs = tuple(float(p) for p in self.probs)
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ValueError("ordinal probabilities must lie in [0, 1]")
        object.__setattr__(self, "probs", probs)


@dataclass(frozen=True)
class DepJointConfig:
    alpha: float = 0.7
    beta: float = 0.3
    d_min: float = 0.0
    d_max: float = 60.0
    name = "depjoint"

    def __post_init__(self):
        for key in ("alpha", "beta"):
            val = getattr(self, key)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{key} must lie in [0, 1], got {val}")
        if not self.d_min < self.d_max:
            raise ValueError(f"need d_min < d_max, got {self.d_min}, {self.d_max}")
        if self.alpha < self.beta:
            raise ValueError(
                f"bins leave a gap: alpha={self.alpha} < beta={self.beta}"
            )
        depjoint_bins(self)  # rejects alpha = 0 or beta = 1 (empty bin)


@dataclass(frozen=True)
class DepJointPrediction:
    p1: float
    p2: float
    raw1: float
    raw2: float


DepthCodec = Union[EigenConfig, DiscretizationConfig, DepJointConfig]
DepthHead = Union[float, OrdinalPrediction, DepJointPrediction]


# -- ordinal discretization -------------------------------------------------

def lid_bin_width(cfg: DiscretizationConfig) -> float:
    """Width of the first LID bin; every following bin is wider by the same amount."""
    if cfg.strategy != LID:
        raise ValueError("lid_bin_width needs an LID config")
    N = cfg.n_bins
    return 2.0 * (cfg.d_max - cfg.d_min) / (N * (1 + N))


def continuous_bin(d: float, cfg: DiscretizationConfig) -> float:
    """Continuous ordinal coordinate l in [0, N] of a raw depth."""
    if not cfg.d_min_star <= d <= cfg.d_max_star:
        raise DepthRangeError(
            f"depth {d} outside [{cfg.d_min_star}, {cfg.d_max_star}]"
        )
    ds = d + cfg.shift
    N = cfg.n_bins
    if cfg.strategy == LID:
        y = 8.0 * (ds - cfg.d_min) / lid_bin_width(cfg)
        # -0.5 + 0.5*sqrt(1 + y), rearranged to avoid cancellation near d_min
        l = 0.5 * y / (1.0 + math.sqrt(1.0 + y))
    else:
        l = N * (math.log(ds) - math.log(cfg.d_min)) / (math.log(cfg.d_max) - math.log(cfg.d_min))
    return min(max(l, 0.0), float(N))


def encode_depth(d: float, cfg: DiscretizationConfig) -> DepthEncoding:
    l = continuous_bin(d, cfg)
    l_int = int(math.floor(l))
    return DepthEncoding(l_int, l - l_int)


def decode_depth(l: float, cfg: DiscretizationConfig) -> float:
    """Inverse of :func:`continuous_bin`; returns a raw (unshifted) depth."""
    N = cfg.n_bins
    if not 0.0 <= l <= N:
        raise DepthRangeError(f"ordinal coordinate {l} outside [0, {N}]")
    if cfg.strategy == LID:
        ds = cfg.d_min + lid_bin_width(cfg) * l * (l + 1.0) / 2.0
    else:
        ds = cfg.d_min * math.exp(l / N * math.log(cfg.d_max / cfg.d_min))
    return ds - cfg.shift


def bin_edges(cfg: DiscretizationConfig) -> np.ndarray:
    """N + 1 raw-depth thresholds; bin k spans [edges[k], edges[k + 1]]."""
    edges = np.array([decode_depth(float(k), cfg) for k in range(cfg.n_bins + 1)])
    # pin the outer edges so the table spans the range exactly
    edges[0], edges[-1] = cfg.d_min - cfg.shift, cfg.d_max - cfg.shift
    return edges


def bin_table(cfg: DiscretizationConfig) -> list[tuple[int, float, float, float]]:
    edges = bin_edges(cfg)
    e = edges.tolist()
    return [(k, e[k], e[k + 1], e[k + 1] - e[k]) for k in range(cfg.n_bins)]


def count_complete_bins_below(d: float, cfg: DiscretizationConfig) -> int:
    return int(math.floor(continuous_bin(d, cfg)))


def median_decode(l_int: int, cfg: DiscretizationConfig) -> float:
    """Midpoint of bin ``l_int`` (classification-only decoding, no residual).

    ``l_int == N`` happens only at d_max itself and maps to the last bin.
    """
    k = min(max(int(l_int), 0), cfg.n_bins - 1)
    return 0.5 * (decode_depth(float(k), cfg) + decode_depth(float(k + 1), cfg))


def ordinal_encode(d: float, cfg: DiscretizationConfig) -> OrdinalPrediction:
    """Ideal head output for depth d: step probabilities plus the true residual."""
    enc = encode_depth(d, cfg)
    probs = tuple(1.0 if n < enc.l_int else 0.0 for n in range(cfg.n_bins))
    return OrdinalPrediction(probs, enc.l_res)


def ordinal_decode(pred: OrdinalPrediction, cfg: DiscretizationConfig) -> float:
    """Count bins with probability above 0.5, add the residual, invert.

    The count is the size of the >0.5 set even for non-monotone probabilities.
    The resulting coordinate is clamped to [0, N].
    """
    if len(pred.probs) != cfg.n_bins:
        raise ValueError(f"expected {cfg.n_bins} probabilities, got {len(pred.probs)}")
    l_int = sum(1 for p in pred.probs if p > 0.5)
    l = min(max(l_int + pred.residual, 0.0), float(cfg.n_bins))
    return decode_depth(l, cfg)


# -- exponential output transform -------------------------------------------

def eigen_transform(feature: float) -> float:
    return math.exp(-feature)


def eigen_inverse(d: float) -> float:
    if d <= 0:
        raise DepthRangeError(f"exponential transform needs a positive depth, got {d}")
    return -math.log(d)


def _safe_inverse(target: float) -> float:
    return eigen_inverse(target) if target > math.exp(-_MAX_FEATURE) else _MAX_FEATURE


# -- two-bin joint head -----------------------------------------------------

def depjoint_bins(cfg: DepJointConfig) -> tuple[tuple[float, float], tuple[float, float]]:
    lo1 = cfg.d_min
    hi1 = (1.0 - cfg.alpha) * cfg.d_min + cfg.alpha * cfg.d_max
    lo2 = (1.0 - cfg.beta) * cfg.d_min + cfg.beta * cfg.d_max
    hi2 = cfg.d_max
    if not (hi1 > lo1 and hi2 > lo2):
        raise ValueError(f"empty depth bin: alpha={cfg.alpha}, beta={cfg.beta}")
    return (lo1, hi1), (lo2, hi2)


def depjoint_membership(d: float, cfg: DepJointConfig) -> tuple[int, int]:
    (lo1, hi1), (lo2, hi2) = depjoint_bins(cfg)
    return (int(lo1 <= d <= hi1), int(lo2 <= d <= hi2))


def depjoint_encode(d: float, cfg: DepJointConfig) -> DepJointPrediction:
    """Ideal head output: hard memberships and exact regressor features.

    Bin 1 regresses d itself, bin 2 the complement ``d_max - d``.
    """
    if not cfg.d_min <= d <= cfg.d_max:
        raise DepthRangeError(f"depth {d} outside [{cfg.d_min}, {cfg.d_max}]")
    in1, in2 = depjoint_membership(d, cfg)
    raw1 = _safe_inverse(d) if in1 else 0.0
    raw2 = _safe_inverse(cfg.d_max - d) if in2 else 0.0
    return DepJointPrediction(float(in1), float(in2), raw1, raw2)


def depjoint_decode(pred: DepJointPrediction, cfg: DepJointConfig) -> float:
    total = pred.p1 + pred.p2
    if not total > 0:
        raise ValueError("bin confidences sum to zero")
    w1, w2 = pred.p1 / total, pred.p2 / total
    d = 0.0
    # skip zero-weight terms so an unused regressor cannot inject inf/nan
    if w1 > 0:
        d += w1 * eigen_transform(pred.raw1)
    if w2 > 0:
        d += w2 * (cfg.d_max - eigen_transform(pred.raw2))
    return min(max(d, cfg.d_min), cfg.d_max)


# -- codec dispatch ---------------------------------------------------------

def encode_instance_depth(d: float, codec: DepthCodec) -> DepthHead:
    if isinstance(codec, EigenConfig):
        return eigen_inverse(d)
    if isinstance(codec, DiscretizationConfig):
        return ordinal_encode(d, codec)
    if isinstance(codec, DepJointConfig):
        return depjoint_encode(d, codec)
    raise TypeError(f"unknown depth codec {codec!r}")


def decode_instance_depth(head: DepthHead, codec: DepthCodec) -> float:
    if isinstance(codec, EigenConfig):
        return eigen_transform(float(head))
    if isinstance(codec, DiscretizationConfig):
        return ordinal_decode(head, codec)
    if isinstance(codec, DepJointConfig):
        return depjoint_decode(head, codec)
    raise TypeError(f"unknown depth codec {codec!r}")


def depth_in_range(d: float, codec: DepthCodec) -> bool:
    if isinstance(codec, EigenConfig):
        return d > 0
    if isinstance(codec, DiscretizationConfig):
        return codec.d_min_star <= d <= codec.d_max_star
    return codec.d_min <= d <= codec.d_max


def average_heads(heads: Sequence[DepthHead]) -> DepthHead:
    """Channel-wise arithmetic mean of several heads of the same kind."""
    if not heads:
        raise ValueError("cannot average an empty set of depth heads")
    first = heads[0]
    n = len(heads)
    if isinstance(first, OrdinalPrediction):
        probs = np.mean([h.probs for h in heads], axis=0)
        return OrdinalPrediction(tuple(probs), sum(h.residual for h in heads) / n)
    if isinstance(first, DepJointPrediction):
        return DepJointPrediction(
            sum(h.p1 for h in heads) / n,
            sum(h.p2 for h in heads) / n,
            sum(h.raw1 for h in heads) / n,
            sum(h.raw2 for h in heads) / n,
        )
    return sum(float(h) for h in heads) / n
