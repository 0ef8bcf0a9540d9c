"""
Repetition-and-vote amplification of the single-scale sketch.

T independent single-scale sketches, one per sub-seed derived from the
master seed and the repetition index. Two boosted sketches decode FAR when
at least T/16 of the repetitions do.
"""

import math
import struct
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Tuple

from .errors import LineageMismatchError, ParameterError, SerializationError
from .metric import IntVector, ceil_tol
from .randomness import SharedSeed
from .single_scale import (
    Outcome,
    SingleScaleSketch,
    SketchParams,
    build_single_scale,
    decode_single_scale,
)

logger = logging.getLogger(__name__)

MAGIC = b"LPBS"
VERSION = 1
REPETITION_LABEL = "REP"
VOTE_DIVISOR = 16
MAX_T = 2 ** 24

FLAG_T_OVERRIDDEN = 0x01

_HEADER = struct.Struct("<4sBIdB8s8s")


def repetitions_for(delta0: float) -> int:
    """T = ⌈512·ln(1/δ0)⌉"""
    if not 0 < delta0 < 1:
        raise ParameterError(f"delta0 must lie in (0, 1), got {delta0}")
    T = ceil_tol(512 * math.log(1 / delta0))
    if T > MAX_T:
        raise ParameterError(f"delta0 = {delta0} needs T = {T} repetitions, above {MAX_T}")
    return max(1, T)


def repetition_seed(seed: SharedSeed, t: int) -> SharedSeed:
    return seed.derive(REPETITION_LABEL, t)


@dataclass(frozen=True)
class BoostedSketch:
    T: int
    delta0: float
    overridden: bool
    seed_fingerprint: bytes
    params_fingerprint: bytes
    reps: Tuple[SingleScaleSketch, ...] = field(repr=False)

    def to_bytes(self) -> bytes:
        flags = FLAG_T_OVERRIDDEN if self.overridden else 0
        header = _HEADER.pack(MAGIC, VERSION, self.T, self.delta0, flags,
                              self.seed_fingerprint, self.params_fingerprint)
        return header + b"".join(rep.to_bytes() for rep in self.reps)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BoostedSketch":
        sketch, offset = cls.read_from(data, 0)
        if offset != len(data):
            raise SerializationError(f"{len(data) - offset} trailing bytes after boosted sketch")
        return sketch

    @classmethod
    def read_from(cls, data: bytes, offset: int) -> Tuple["BoostedSketch", int]:
        try:
            magic, version, T, delta0, flags, seed_fp, params_fp = _HEADER.unpack_from(data, offset)
        except struct.error as e:
            raise SerializationError(f"Truncated boosted sketch header: {e}")
        if magic != MAGIC:
            raise SerializationError("Bad boosted sketch magic")
        if version != VERSION:
            raise SerializationError(f"Unsupported boosted sketch version {version}")
        offset += _HEADER.size
        reps = []
        for _ in range(T):
            rep, offset = SingleScaleSketch.read_from(data, offset)
            reps.append(rep)
        return cls(T=T, delta0=delta0, overridden=bool(flags & FLAG_T_OVERRIDDEN),
                   seed_fingerprint=seed_fp, params_fingerprint=params_fp,
                   reps=tuple(reps)), offset


def build_boosted(x: IntVector, median: IntVector, params: SketchParams,
                  delta0: float, seed: SharedSeed, T: Optional[int] = None) -> BoostedSketch:
    """
    Concatenate T single-scale sketches of x - median.

    Args:
        x: Vector to sketch
        median: Centering vector
        params: Single-scale parameters shared by every repetition
        delta0: Target non-expansion failure probability
        seed: Master seed; repetition t uses seed.derive("REP", t)
        T: Explicit repetition count replacing ⌈512·ln(1/δ0)⌉ (flagged)
    """
    derived = repetitions_for(delta0)
    if T is None:
        count, overridden = derived, False
    else:
        if T < 1 or T > MAX_T:
            raise ParameterError(f"T must lie in [1, {MAX_T}], got {T}")
        count, overridden = int(T), True
    reps = tuple(build_single_scale(x, median, params, repetition_seed(seed, t))
                 for t in range(count))
    return BoostedSketch(T=count, delta0=float(delta0), overridden=overridden,
                         seed_fingerprint=seed.fingerprint(),
                         params_fingerprint=params.fingerprint(), reps=reps)


def _check_lineage(a: BoostedSketch, b: BoostedSketch, params: SketchParams) -> None:
    if a.T != b.T or len(a.reps) != len(b.reps):
        raise LineageMismatchError(f"Repetition counts differ: {a.T} vs {b.T}")
    if a.seed_fingerprint != b.seed_fingerprint:
        raise LineageMismatchError("Boosted sketches come from different seeds")
    expected = params.fingerprint()
    if a.params_fingerprint != expected or b.params_fingerprint != expected:
        raise LineageMismatchError("Boosted sketch was built with different parameters")


def far_votes(a: BoostedSketch, b: BoostedSketch, params: SketchParams,
              workers: Optional[int] = None) -> int:
    """Number of repetitions whose single-scale decode is FAR"""
    _check_lineage(a, b, params)
    if workers and workers > 1 and a.T > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda pair: decode_single_scale(pair[0], pair[1], params),
                                     zip(a.reps, b.reps)))
    else:
        outcomes = [decode_single_scale(ra, rb, params) for ra, rb in zip(a.reps, b.reps)]
    return sum(1 for outcome in outcomes if outcome is Outcome.FAR)


def decode_boosted(a: BoostedSketch, b: BoostedSketch, params: SketchParams,
                   workers: Optional[int] = None) -> Outcome:
    """
    FAR iff at least T/16 repetitions decode FAR (16·count >= T).

    Raises:
        LineageMismatchError: T, seed or parameters differ
    """
    votes = far_votes(a, b, params, workers=workers)
    logger.debug("Boosted decode: %d/%d FAR votes", votes, a.T)
    return Outcome.FAR if VOTE_DIVISOR * votes >= a.T else Outcome.CLOSE
