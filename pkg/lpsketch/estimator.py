"""
Multi-scale distance estimator.

One boosted sketch per scale r = 2^w, w in W = ⌊-log2 c⌋..⌈log2(dΔ/c)⌉, each
with distortion c/64 - 1 and failure probability 1/(dΔ). The estimate is
2^(w*-2) for the largest scale w* decoding FAR, or 0.
"""

import hashlib
import math
import struct
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from .boosted import BoostedSketch, build_boosted, decode_boosted
from .errors import LineageMismatchError, ParameterError, SerializationError
from .metric import IntVector, ceil_tol, check_dimensions, floor_tol
from .randomness import SharedSeed
from .single_scale import (
    DELTA1,
    DELTA2,
    Outcome,
    SketchOverrides,
    SketchParams,
    derive_params,
)

logger = logging.getLogger(__name__)

MAGIC = b"LPMS"
VERSION = 1
SCALE_LABEL = "SCALE"
GLOBAL_RESCALE = 64

_HEADER = struct.Struct("<4sBddIqiH8s")


def scale_set(c: float, d: int, delta: int) -> List[int]:
    """W = {⌊-log2 c⌋, ..., ⌈log2(dΔ/c)⌉}"""
    if not c > 1:
        raise ParameterError(f"c must be > 1, got {c}")
    if d < 1 or delta < 1:
        raise ParameterError(f"d and delta must be >= 1, got d={d}, delta={delta}")
    lo = floor_tol(-math.log2(c))
    hi = ceil_tol(math.log2(d * delta / c))
    if hi < lo:
        raise ParameterError(f"Empty scale range for c={c}, d={d}, delta={delta}")
    return list(range(lo, hi + 1))


def effective_distortion(c: float) -> float:
    """Per-scale distortion parameter c/64 - 1"""
    return c / GLOBAL_RESCALE - 1


def default_delta0(d: int, delta: int) -> float:
    return 1.0 / (d * delta)


def median_fingerprint(median: IntVector) -> bytes:
    return hashlib.blake2b(median.to_bytes(), digest_size=8).digest()


def scale_seed(seed: SharedSeed, w: int) -> SharedSeed:
    return seed.derive(SCALE_LABEL, w)


def scale_params(c: float, p: float, w: int,
                 overrides: Optional[SketchOverrides] = None) -> SketchParams:
    """Single-scale parameters used at r = 2^w"""
    return derive_params(effective_distortion(c), p, DELTA1, DELTA2,
                         overrides=overrides, r=2.0 ** w)


@dataclass(frozen=True)
class MultiScaleSketch:
    c: float
    p: float
    d: int
    delta: int
    scales: Tuple[int, ...]
    median_fingerprint: bytes
    per_scale: Tuple[BoostedSketch, ...] = field(repr=False)

    def to_bytes(self) -> bytes:
        header = _HEADER.pack(MAGIC, VERSION, self.c, self.p, self.d, self.delta,
                              self.scales[0], len(self.scales), self.median_fingerprint)
        return header + b"".join(b.to_bytes() for b in self.per_scale)

    @classmethod
    def from_bytes(cls, data: bytes) -> "MultiScaleSketch":
        try:
            magic, version, c, p, d, delta, lo, count, median_fp = _HEADER.unpack_from(data, 0)
        except struct.error as e:
            raise SerializationError(f"Truncated multi-scale header: {e}")
        if magic != MAGIC:
            raise SerializationError("Bad multi-scale sketch magic")
        if version != VERSION:
            raise SerializationError(f"Unsupported multi-scale sketch version {version}")
        offset = _HEADER.size
        per_scale = []
        for _ in range(count):
            boosted, offset = BoostedSketch.read_from(data, offset)
            per_scale.append(boosted)
        if offset != len(data):
            raise SerializationError(f"{len(data) - offset} trailing bytes after multi-scale sketch")
        return cls(c=c, p=p, d=d, delta=delta, scales=tuple(range(lo, lo + count)),
                   median_fingerprint=median_fp, per_scale=tuple(per_scale))


def build_multiscale(x: IntVector, median: IntVector, c: float, p: float,
                     d: int, delta: int, seed: SharedSeed,
                     overrides: Optional[SketchOverrides] = None,
                     delta0: Optional[float] = None,
                     T: Optional[int] = None) -> MultiScaleSketch:
    """
    Sketch x at every scale of W.

    Args:
        x: Vector to sketch, dimension d
        median: Centering vector shared by every party
        c: User-facing approximation; each scale uses c/64 - 1
        p: Norm exponent
        d: Dimension
        delta: Coordinate range Δ
        seed: Master seed; scale w uses seed.derive("SCALE", w)
        overrides: Single-scale engineering overrides (L, K, k, U)
        delta0: Per-scale failure probability (default 1/(dΔ))
        T: Repetition count override

    Raises:
        ParameterError: as derive_params, or an empty scale range
    """
    check_dimensions(x, median)
    if x.dimension != d:
        raise ParameterError(f"Vector has dimension {x.dimension}, expected d={d}")
    scales = scale_set(c, d, delta)
    failure = delta0 if delta0 is not None else default_delta0(d, delta)
    per_scale = []
    for w in scales:
        params = scale_params(c, p, w, overrides)
        per_scale.append(build_boosted(x, median, params, failure, scale_seed(seed, w), T=T))
    return MultiScaleSketch(c=float(c), p=float(p), d=int(d), delta=int(delta),
                            scales=tuple(scales), median_fingerprint=median_fingerprint(median),
                            per_scale=tuple(per_scale))


def _check_lineage(a: MultiScaleSketch, b: MultiScaleSketch) -> None:
    if (a.c, a.p, a.d, a.delta, a.scales) != (b.c, b.p, b.d, b.delta, b.scales):
        raise LineageMismatchError("Multi-scale sketches have different ambient parameters")
    if a.median_fingerprint != b.median_fingerprint:
        raise LineageMismatchError("Multi-scale sketches were centered by different medians")


def far_scale(a: MultiScaleSketch, b: MultiScaleSketch,
              overrides: Optional[SketchOverrides] = None,
              workers: Optional[int] = None) -> Optional[int]:
    """Largest w in W whose boosted decode is FAR, or None"""
    _check_lineage(a, b)
    for w, sa, sb in zip(reversed(a.scales), reversed(a.per_scale), reversed(b.per_scale)):
        params = scale_params(a.c, a.p, w, overrides)
        if decode_boosted(sa, sb, params, workers=workers) is Outcome.FAR:
            return w
    return None


def estimate_distance(a: MultiScaleSketch, b: MultiScaleSketch,
                      overrides: Optional[SketchOverrides] = None,
                      workers: Optional[int] = None) -> float:
    """
    2^(w*-2) for the largest FAR scale w*, or 0 when every scale decodes CLOSE.

    The overrides must be those the sketches were built with.

    Raises:
        LineageMismatchError: the sketches or overrides do not belong together
    """
    w = far_scale(a, b, overrides, workers=workers)
    if w is None:
        return 0.0
    logger.debug("Largest FAR scale w*=%d", w)
    return 2.0 ** (w - 2)
