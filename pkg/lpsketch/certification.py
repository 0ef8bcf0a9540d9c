"""
Hard distribution over {0..c}^(2^(p-1)) and certificates of farness.

A sample is the sum of c nested indicator vectors: J_0 is a uniformly
random subset of size 2^(p-2) and every J_i is a uniform subset of J_{i-1}
shrunk by 2^((p-2)/(c-1)). A certificate (i, ℓ) with x_i < ℓ < y_i proves
‖x - y‖_p >= 2. The certifying decoder runs the single-scale search on
unhashed sketches and turns its witness coordinate into such a pair.
"""

import math
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import ParameterError
from .metric import IntVector, check_dimensions
from .randomness import SharedSeed, exp_variate
from .single_scale import (
    SingleScaleSketch,
    SketchOverrides,
    SketchParams,
    check_lineage,
    derive_params,
    far_witness,
)

logger = logging.getLogger(__name__)

HARD_LABEL = "HARD"
DEFAULT_R = 1.9
DEFAULT_MULTIPLIER = 1.0
POSITIVE = 1


@dataclass(frozen=True)
class HardDistributionSpec:
    p: int
    c: int

    def __post_init__(self):
        if self.p < 2 or self.c < 2:
            raise ParameterError(f"Hard distribution needs p >= 2 and c >= 2, got p={self.p}, c={self.c}")
        if (self.p - 2) % (self.c - 1):
            raise ParameterError(
                f"(p-2)/(c-1) = ({self.p}-2)/({self.c}-1) must be an integer")

    @property
    def dimension(self) -> int:
        return 2 ** (self.p - 1)

    @property
    def shrink_exponent(self) -> int:
        """Each level keeps a 2^-e fraction of the previous one"""
        return (self.p - 2) // (self.c - 1)

    @property
    def level_sizes(self) -> Tuple[int, ...]:
        n0 = 2 ** (self.p - 2)
        return tuple(n0 >> (self.shrink_exponent * i) for i in range(self.c))

    def value_counts(self) -> Tuple[int, ...]:
        """counts[v] = number of coordinates equal to v, for v = 0..c"""
        sizes = self.level_sizes + (0,)
        counts = [self.dimension - sizes[0]]
        counts.extend(sizes[v - 1] - sizes[v] for v in range(1, self.c + 1))
        return tuple(counts)


def sample_hard_tuple(spec: HardDistributionSpec, seed: SharedSeed,
                      index: int = 0) -> Tuple[IntVector, ...]:
    """Nested indicator vectors x^(0)..x^(c-1)"""
    rng = seed.generator(HARD_LABEL, index)
    d = spec.dimension
    support = np.arange(d)
    vectors = []
    for size in spec.level_sizes:
        support = np.sort(rng.choice(support, size=size, replace=False))
        indicator = np.zeros(d, dtype=np.int64)
        indicator[support] = 1
        vectors.append(IntVector(indicator))
    return tuple(vectors)


def sample_hard_point(spec: HardDistributionSpec, seed: SharedSeed, index: int = 0) -> IntVector:
    """One draw from μ: the sum of a fresh nested tuple"""
    levels = sample_hard_tuple(spec, seed, index)
    return IntVector(np.sum([v.coords for v in levels], axis=0))


def hard_norm(spec: HardDistributionSpec, p: float) -> float:
    """The lp norm shared by every sample of μ"""
    counts = spec.value_counts()
    return math.fsum(counts[v] * float(v) ** p for v in range(1, spec.c + 1)) ** (1.0 / p)


@dataclass(frozen=True)
class Certificate:
    index: int
    level: int
    low: int = 0  # which argument holds the small coordinate


def is_valid_certificate(x: IntVector, y: IntVector, cert: Certificate) -> bool:
    """x_i < ℓ < y_i, with x and y swapped when cert.low == 1"""
    check_dimensions(x, y)
    if not 0 <= cert.index < x.dimension:
        raise ParameterError(f"Certificate index {cert.index} outside [0, {x.dimension})")
    lo, hi = (x, y) if cert.low == 0 else (y, x)
    return lo[cert.index] < cert.level < hi[cert.index]


def certification_params(spec: HardDistributionSpec, r: float = DEFAULT_R,
                         multiplier: float = DEFAULT_MULTIPLIER,
                         overrides: Optional[SketchOverrides] = None) -> SketchParams:
    """Unhashed single-scale parameters at r' = multiplier·r"""
    if not 2 ** (1 - 1 / spec.p) < r < 2:
        logger.warning("r = %s lies outside (2^(1-1/p), 2)", r)
    if not multiplier > 0:
        raise ParameterError(f"multiplier must be positive, got {multiplier}")
    return derive_params(spec.c, spec.p, overrides=overrides, r=multiplier * r, raw_indices=True)


def certify_decode(a: SingleScaleSketch, b: SingleScaleSketch,
                   params: SketchParams, seed: SharedSeed) -> Optional[Certificate]:
    """
    Turn a positive-sign Step 2 witness into a certificate.

    The sketches must be unhashed and centered at 0. On a witness at
    threshold t with first high-side coordinate i and u_i > 2^-(p+2), the
    level is ⌊t·u_i^(1/p) - (r/2)·(u_i/δ1)^(1/p)⌋. Levels outside [1, c-1] cannot
    separate two points of the grid {0..c} and are never emitted.

    Raises:
        ParameterError: the sketches store hashed coordinates
        LineageMismatchError: a sketch was built with other parameters
    """
    if not params.raw_indices:
        raise ParameterError("Certification needs sketches that store raw coordinate indices")
    check_lineage(a, b, params)
    if a == b:
        return None
    floor_u = 2.0 ** -(params.p + 2)
    for hi, lo, low in ((a, b, 1), (b, a, 0)):
        witness = far_witness(hi, lo, params, sigma=POSITIVE)
        if witness is None:
            continue
        record, _ = witness
        i = record.first[0]
        u = exp_variate(seed, i)
        if not u > floor_u:
            continue
        t = params.grid * record.m
        level = math.floor(t * u ** (1.0 / params.p) - (params.r / 2) * (u / params.delta1) ** (1.0 / params.p))
        if not 1 <= level <= int(params.c) - 1:
            continue
        return Certificate(index=int(i), level=int(level), low=low)
    return None
