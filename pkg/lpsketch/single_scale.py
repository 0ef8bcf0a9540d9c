"""
Single-scale CLOSE/FAR sketch for lp.

A vector is centered by the dataset median and embedded coordinate-wise as
x_i / u_i^(1/p) with u_i ~ Exp(1). For L+1 consecutive thresholds and both
signs the sketch keeps the size of the set G of coordinates reaching the
threshold and the hashes of its first k coordinates in the shared random
order. Two sketches decode FAR when their rounded norms are two steps apart
or when one sketch's first coordinate at some threshold is provably absent
from the other's set one threshold lower.
"""

import hashlib
import math
import struct
import logging
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from functools import cached_property, lru_cache
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import LineageMismatchError, ParameterError, SerializationError
from .metric import IntVector, ceil_tol, check_dimensions, floor_tol, lp_norm
from .randomness import (
    SharedSeed,
    coord_hashes,
    exp_variates,
    hash_norm,
    perm_order,
)

logger = logging.getLogger(__name__)

DELTA1 = 1.0 / 64
DELTA2 = 1.0 / 8

TOO_LARGE = -1
SIGNS = (-1, 1)

MAGIC = b"LPSK"
VERSION = 1
MAX_K = 2 ** 62
MAX_U = 2 ** 31 - 1


class Outcome(str, Enum):
    CLOSE = "close"
    FAR = "far"


@dataclass(frozen=True)
class SketchOverrides:
    """Explicit desk-scale values replacing the theory-derived constants"""

    L: Optional[int] = None
    K: Optional[int] = None
    k: Optional[int] = None
    U: Optional[int] = None

    def is_empty(self) -> bool:
        return all(v is None for v in (self.L, self.K, self.k, self.U))


@dataclass(frozen=True)
class TheoryParams:
    """Constants exactly as the analysis derives them; k/U are None on overflow"""

    c: float
    p: float
    delta1: float
    delta2: float
    D1: float
    D2: float
    L: int
    K: int
    k: Optional[int]
    U: Optional[int]
    theory_valid: bool


@dataclass(frozen=True)
class SketchParams:
    p: float
    c: float
    r: float
    delta1: float
    delta2: float
    D1: float
    D2: float
    L: int
    K: int
    k: int
    U: int
    theory_valid: bool
    overridden: bool = False
    raw_indices: bool = False

    @property
    def delta1_root(self) -> float:
        return self.delta1 ** (1.0 / self.p)

    @property
    def grid(self) -> float:
        """Spacing r / δ1^(1/p) between consecutive thresholds"""
        return self.r / self.delta1_root

    def with_scale(self, r: float) -> "SketchParams":
        if not r > 0:
            raise ParameterError(f"Scale r must be positive, got {r}")
        return replace(self, r=float(r))

    def fingerprint(self) -> bytes:
        return _params_fingerprint(self)

    def as_dict(self) -> Dict:
        return asdict(self)


@lru_cache(maxsize=256)
def _params_fingerprint(params: SketchParams) -> bytes:
    fields = (
        float(params.p).hex(), float(params.c).hex(), float(params.r).hex(),
        float(params.delta1).hex(), float(params.delta2).hex(),
        params.L, params.K, params.k, params.U, params.raw_indices,
    )
    return hashlib.blake2b(repr(fields).encode("ascii"), digest_size=8).digest()


def _check_constants(p: float, delta1: float, delta2: float) -> None:
    if not p >= 1:
        raise ParameterError(f"p must be >= 1, got {p}")
    for name, value in (("delta1", delta1), ("delta2", delta2)):
        if not 0 < value < 1:
            raise ParameterError(f"{name} must lie in (0, 1), got {value}")


def validity_floor(p: float, delta1: float = DELTA1, delta2: float = DELTA2) -> float:
    """Smallest c for which the single-scale guarantee is proven"""
    return 16 * (math.log(2 / delta2) / delta1) ** (1.0 / p)


def theory_params(c: float, p: float,
                  delta1: float = DELTA1, delta2: float = DELTA2) -> TheoryParams:
    """Derive L, K, k, U from (c, p, δ1, δ2); never raises on overflow"""
    _check_constants(p, delta1, delta2)
    D1 = math.log(2 / delta2) ** (1.0 / p)
    D2 = 2 * D1
    L = floor_tol(c * delta1 ** (1.0 / p) / (4 * D1) - 2)
    K = ceil_tol(2 * D2 ** p / delta2)
    k: Optional[int] = None
    U: Optional[int] = None
    if L >= 2:
        exponent = 8 / (delta2 * (L - 1))
        log_bulk = exponent * math.log(K) + math.log(16 / delta2)
        if log_bulk < math.log(MAX_K) - 1:
            k = ceil_tol(16 * K ** exponent / delta2 + 2 * math.log(4 * L / delta1))
            U = ceil_tol(16 * k / delta2)
    valid = c >= validity_floor(p, delta1, delta2) * (1 - 1e-12)
    return TheoryParams(c=c, p=p, delta1=delta1, delta2=delta2, D1=D1, D2=D2,
                        L=L, K=K, k=k, U=U, theory_valid=valid)


def derive_params(c: float, p: float,
                  delta1: float = DELTA1, delta2: float = DELTA2,
                  overrides: Optional[SketchOverrides] = None,
                  r: float = 1.0,
                  raw_indices: bool = False) -> SketchParams:
    """
    Build the parameter block for scale r.

    Without overrides the theory values must be usable (L >= 2, k finite).
    Overrides replace any of L/K/k/U; U defaults to ⌈16k/δ2⌉ for the final k.

    Raises:
        ParameterError: invalid inputs, L < 2, or k overflow without overrides
    """
    if not r > 0:
        raise ParameterError(f"Scale r must be positive, got {r}")
    theory = theory_params(c, p, delta1, delta2)
    if overrides is None or overrides.is_empty():
        if not c > 1:
            raise ParameterError(f"c must be > 1, got {c}")
        if theory.L < 2:
            raise ParameterError(
                f"Derived L = {theory.L} < 2 for c={c}, p={p}; "
                f"c must be at least {validity_floor(p, delta1, delta2):.2f} or supply overrides")
        if theory.k is None:
            raise ParameterError(
                f"Derived k overflows 2^62 for c={c}, p={p}; supply engineering overrides (L, K, k, U)")
        L, K, k, U = theory.L, theory.K, theory.k, theory.U
        overridden = False
    else:
        # nominal c may fall below 1 here; it only feeds the theory L
        if not math.isfinite(c):
            raise ParameterError(f"c must be finite, got {c}")
        L = overrides.L if overrides.L is not None else theory.L
        K = overrides.K if overrides.K is not None else theory.K
        k = overrides.k if overrides.k is not None else theory.k
        if k is None:
            raise ParameterError("Theory k is unusable here; override k explicitly")
        U = overrides.U if overrides.U is not None else ceil_tol(16 * k / delta2)
        overridden = True
    for name, value in (("L", L), ("K", K), ("k", k), ("U", U)):
        if value < 1:
            raise ParameterError(f"{name} must be >= 1, got {value}")
    if U > MAX_U:
        raise ParameterError(f"U = {U} does not fit the 32-bit hash slots")
    return SketchParams(
        p=float(p), c=float(c), r=float(r), delta1=delta1, delta2=delta2,
        D1=theory.D1, D2=theory.D2, L=int(L), K=int(K), k=int(k), U=int(U),
        theory_valid=theory.theory_valid and not overridden,
        overridden=overridden, raw_indices=raw_indices,
    )


def threshold_index(nu: float, j: int, params: SketchParams) -> Tuple[int, float]:
    """m = ⌈ν·δ1^(1/p)/(D2·r) + j⌉ and τ = m·r/δ1^(1/p)"""
    m = ceil_tol(nu * params.delta1_root / (params.D2 * params.r) + j)
    return m, params.grid * m


@dataclass(frozen=True)
class SketchRecord:
    sigma: int
    j: int
    m: int
    size: int
    first: Tuple[int, ...] = ()

    @property
    def too_large(self) -> bool:
        return self.size == TOO_LARGE


@dataclass(frozen=True)
class SingleScaleSketch:
    params_fingerprint: bytes
    norm_hashes: Tuple[int, int]
    records: Tuple[SketchRecord, ...] = field(repr=False)

    @cached_property
    def _by_m(self) -> Dict[int, Dict[int, SketchRecord]]:
        table: Dict[int, Dict[int, SketchRecord]] = {s: {} for s in SIGNS}
        for rec in self.records:
            table[rec.sigma][rec.m] = rec
        return table

    def level(self, sigma: int, m: int) -> Optional[SketchRecord]:
        """The record whose threshold index is m, if this sketch stores it"""
        return self._by_m[sigma].get(m)

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<B", VERSION), self.params_fingerprint,
               struct.pack("<qqH", self.norm_hashes[0], self.norm_hashes[1], len(self.records))]
        for rec in self.records:
            if len(rec.first) > 32767:
                raise SerializationError("More than 32767 stored coordinates in one record")
            out.append(struct.pack("<qih", rec.m, rec.size, len(rec.first)))
            if rec.first:
                out.append(struct.pack(f"<{len(rec.first)}i", *rec.first))
        return b"".join(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "SingleScaleSketch":
        sketch, offset = cls.read_from(data, 0)
        if offset != len(data):
            raise SerializationError(f"{len(data) - offset} trailing bytes after sketch")
        return sketch

    @classmethod
    def read_from(cls, data: bytes, offset: int) -> Tuple["SingleScaleSketch", int]:
        try:
            if data[offset:offset + 4] != MAGIC:
                raise SerializationError("Bad sketch magic")
            (version,) = struct.unpack_from("<B", data, offset + 4)
            if version != VERSION:
                raise SerializationError(f"Unsupported sketch version {version}")
            fingerprint = bytes(data[offset + 5:offset + 13])
            h0, h1, count = struct.unpack_from("<qqH", data, offset + 13)
            offset += 13 + 18
            if count % 2:
                raise SerializationError("Record count must be even")
            per_sign = count // 2
            records = []
            for pos in range(count):
                m, size, n = struct.unpack_from("<qih", data, offset)
                offset += 14
                first = struct.unpack_from(f"<{n}i", data, offset) if n else ()
                offset += 4 * n
                records.append(SketchRecord(sigma=SIGNS[pos // per_sign], j=pos % per_sign,
                                            m=m, size=size, first=tuple(first)))
        except struct.error as e:
            raise SerializationError(f"Truncated sketch: {e}")
        return cls(fingerprint, (h0, h1), tuple(records)), offset


@dataclass(frozen=True)
class _Level:
    sigma: int
    j: int
    m: int
    mask: np.ndarray  # membership in π order

    @property
    def size(self) -> int:
        return int(np.count_nonzero(self.mask))


@dataclass(frozen=True)
class _Expansion:
    """Full-information view of one centered vector under one seed"""

    norm: float
    nu: int
    order: np.ndarray
    levels: Tuple[_Level, ...]

    def first_indices(self, level: _Level, limit: Optional[int]) -> np.ndarray:
        positions = np.flatnonzero(level.mask)
        if limit is not None:
            positions = positions[:limit]
        return self.order[positions]


@lru_cache(maxsize=2048)
def _embedding(master: bytes, d: int, p: float) -> Tuple[np.ndarray, np.ndarray]:
    seed = SharedSeed(master)
    order = perm_order(seed, d)
    u_root = exp_variates(seed, d) ** (1.0 / p)
    scaled = u_root[order]
    scaled.setflags(write=False)
    return order, scaled


def _expand(xt: np.ndarray, params: SketchParams, seed: SharedSeed) -> _Expansion:
    d = xt.shape[0]
    norm = lp_norm(xt, params.p)
    nu = ceil_tol(norm / params.r)
    order, u_root = _embedding(seed.master, d, params.p)
    ordered = xt[order].astype(np.float64)
    levels = []
    for sigma in SIGNS:
        signed = ordered * sigma
        for j in range(params.L + 1):
            m, tau = threshold_index(norm, j, params)
            levels.append(_Level(sigma=sigma, j=j, m=m, mask=signed >= tau * u_root))
    return _Expansion(norm=norm, nu=nu, order=order, levels=tuple(levels))


def _raw_records(exp: _Expansion, params: SketchParams) -> Tuple[SketchRecord, ...]:
    records = []
    for level in exp.levels:
        size = level.size
        if size > params.K:
            records.append(SketchRecord(level.sigma, level.j, level.m, TOO_LARGE))
        else:
            first = tuple(int(i) for i in exp.first_indices(level, params.k))
            records.append(SketchRecord(level.sigma, level.j, level.m, size, first))
    return tuple(records)


def _center(x: IntVector, median: IntVector) -> np.ndarray:
    check_dimensions(x, median)
    return x.coords - median.coords


def build_single_scale(x: IntVector, median: IntVector,
                       params: SketchParams, seed: SharedSeed) -> SingleScaleSketch:
    """Sketch x - median at scale params.r with the shared randomness of seed"""
    exp = _expand(_center(x, median), params, seed)
    records = _raw_records(exp, params)
    if not params.raw_indices:
        labels = coord_hashes(seed, x.dimension, params.U)
        records = tuple(replace(rec, first=tuple(int(labels[i]) for i in rec.first))
                        for rec in records)
    norm_hashes = (hash_norm(seed, exp.nu, params.U), hash_norm(seed, exp.nu + 1, params.U))
    return SingleScaleSketch(params.fingerprint(), norm_hashes, records)


def check_lineage(a: SingleScaleSketch, b: SingleScaleSketch, params: SketchParams) -> None:
    expected = params.fingerprint()
    if a.params_fingerprint != expected or b.params_fingerprint != expected:
        raise LineageMismatchError("Sketch was built with different parameters")


def _size_gate(a: SketchRecord, b: SketchRecord, params: SketchParams) -> bool:
    """|G_b| <= (k/4)|G_a| <= (k/4)K on stored sizes, with a first element to test"""
    if a.too_large or b.too_large or a.size == 0:
        return False
    return 4 * b.size <= params.k * a.size


def far_witness(x: SingleScaleSketch, y: SingleScaleSketch, params: SketchParams,
                sigma: Optional[int] = None) -> Optional[Tuple[SketchRecord, SketchRecord]]:
    """
    First (A, B) pair proving FAR with x in the high role: A is x's record at
    threshold index m (level j >= 1), B is y's record at index m - 1.
    Restricted to one sign when sigma is given.
    """
    for a in x.records:
        if a.j == 0 or (sigma is not None and a.sigma != sigma):
            continue
        b = y.level(a.sigma, a.m - 1)
        if b is None or not _size_gate(a, b, params):
            continue
        if a.first[0] not in b.first:
            return a, b
    return None


def decode_single_scale(a: SingleScaleSketch, b: SingleScaleSketch,
                        params: SketchParams) -> Outcome:
    """
    CLOSE/FAR decision from two sketches.

    Raises:
        LineageMismatchError: a sketch was built with other parameters
    """
    check_lineage(a, b, params)
    if a == b:
        return Outcome.CLOSE
    if not set(a.norm_hashes) & set(b.norm_hashes):
        return Outcome.FAR
    if far_witness(a, b, params) or far_witness(b, a, params):
        return Outcome.FAR
    return Outcome.CLOSE


def _reference_step2(hi: _Expansion, lo: _Expansion,
                     hi_records: Sequence[SketchRecord], lo_records: Sequence[SketchRecord],
                     params: SketchParams, truncated: bool) -> bool:
    lo_by_m = {(rec.sigma, rec.m): (rec, level) for rec, level in zip(lo_records, lo.levels)}
    for rec, level in zip(hi_records, hi.levels):
        if rec.j == 0:
            continue
        match = lo_by_m.get((rec.sigma, rec.m - 1))
        if match is None:
            continue
        lo_rec, lo_level = match
        if not _size_gate(rec, lo_rec, params):
            continue
        first = rec.first[0]
        if truncated:
            present = first in lo_rec.first
        else:
            present = bool(lo_level.mask[_rank(lo.order, first)])
        if not present:
            return True
    return False


def _rank(order: np.ndarray, i: int) -> int:
    return int(np.flatnonzero(order == i)[0])


def reference_decode(x: IntVector, y: IntVector, median: IntVector,
                     params: SketchParams, seed: SharedSeed,
                     truncated: bool = False) -> Outcome:
    """
    Decoder with complete information: no hashing, and membership is tested
    against the whole G set unless `truncated` restricts it to the first k.
    """
    check_dimensions(x, y)
    ex = _expand(_center(x, median), params, seed)
    ey = _expand(_center(y, median), params, seed)
    rx, ry = _raw_records(ex, params), _raw_records(ey, params)
    if ex.nu == ey.nu and rx == ry:
        return Outcome.CLOSE
    if not {ex.nu, ex.nu + 1} & {ey.nu, ey.nu + 1}:
        return Outcome.FAR
    if (_reference_step2(ex, ey, rx, ry, params, truncated)
            or _reference_step2(ey, ex, ry, rx, params, truncated)):
        return Outcome.FAR
    return Outcome.CLOSE


@dataclass(frozen=True)
class Collisions:
    h1: bool
    h2: bool

    @property
    def any(self) -> bool:
        return self.h1 or self.h2


def find_collisions(x: IntVector, y: IntVector, median: IntVector,
                    params: SketchParams, seed: SharedSeed) -> Collisions:
    """
    Hash collisions that can make the hashed decoder differ from the truncated
    reference decoder on this pair.
    """
    check_dimensions(x, y)
    ex = _expand(_center(x, median), params, seed)
    ey = _expand(_center(y, median), params, seed)
    nus = sorted({ex.nu, ex.nu + 1, ey.nu, ey.nu + 1})
    norm_hashes = [hash_norm(seed, nu, params.U) for nu in nus]
    h2 = len(set(norm_hashes)) < len(norm_hashes)

    labels = coord_hashes(seed, x.dimension, params.U)
    rx, ry = _raw_records(ex, params), _raw_records(ey, params)
    h1 = False
    for hi, lo in ((rx, ry), (ry, rx)):
        lo_by_m = {(rec.sigma, rec.m): rec for rec in lo}
        for rec in hi:
            if rec.j == 0:
                continue
            lo_rec = lo_by_m.get((rec.sigma, rec.m - 1))
            if lo_rec is None or not _size_gate(rec, lo_rec, params):
                continue
            first = rec.first[0]
            if first not in lo_rec.first and labels[first] in {labels[i] for i in lo_rec.first}:
                h1 = True
    for a, b in zip(rx, ry):
        if a.first != b.first and len(a.first) == len(b.first):
            if all(labels[i] == labels[j] for i, j in zip(a.first, b.first)):
                h1 = True
    return Collisions(h1=h1, h2=h2)


def sketch_size_bytes(sketch: SingleScaleSketch) -> int:
    return len(sketch.to_bytes())
