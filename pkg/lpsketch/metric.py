"""
Integer vectors, lp norms and distances, coordinate-wise medians,
discretization and the CSV dataset format
"""

import math
import os
import logging
from typing import Iterable, Iterator, List, Optional, Sequence, Union

import numpy as np

from .errors import (
    DatasetFormatError,
    DimensionMismatchError,
    EmptyDatasetError,
    ParameterError,
)

logger = logging.getLogger(__name__)

# Relative tolerance for float comparisons whose operands are not on a
# common integer grid.
REL_TOL = 1e-12


def ceil_tol(x: float) -> int:
    """Ceiling that ignores float noise of relative size REL_TOL"""
    return int(math.ceil(x - REL_TOL * max(1.0, abs(x))))


def floor_tol(x: float) -> int:
    """Floor that ignores float noise of relative size REL_TOL"""
    return int(math.floor(x + REL_TOL * max(1.0, abs(x))))


class IntVector:
    """
    Immutable integer coordinate vector.

    Coordinates are held in a read-only int64 numpy array; the dimension is
    the length of the vector.
    """

    __slots__ = ("_coords",)

    def __init__(self, coords: Union[Sequence[int], np.ndarray, "IntVector"]):
        if isinstance(coords, IntVector):
            self._coords = coords._coords
            return
        arr = np.asarray(coords)
        if arr.ndim != 1:
            raise ParameterError(f"IntVector must be one-dimensional, got shape {arr.shape}")
        if arr.dtype.kind == "f":
            if not np.all(np.isfinite(arr)) or not np.all(arr == np.round(arr)):
                raise ParameterError("IntVector coordinates must be integers")
        elif arr.size and arr.dtype.kind not in "iub":
            raise ParameterError(f"IntVector coordinates must be integers, got {arr.dtype}")
        arr = np.array(arr, dtype=np.int64)
        arr.setflags(write=False)
        self._coords = arr

    @classmethod
    def zeros(cls, d: int) -> "IntVector":
        return cls(np.zeros(d, dtype=np.int64))

    @property
    def coords(self) -> np.ndarray:
        return self._coords

    @property
    def dimension(self) -> int:
        return int(self._coords.shape[0])

    def __len__(self) -> int:
        return self.dimension

    def __iter__(self) -> Iterator[int]:
        return (int(v) for v in self._coords)

    def __getitem__(self, i: int) -> int:
        return int(self._coords[i])

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, IntVector):
            return NotImplemented
        return bool(np.array_equal(self._coords, other._coords))

    def __hash__(self) -> int:
        return hash(self._coords.tobytes())

    def __sub__(self, other: "IntVector") -> "IntVector":
        check_dimensions(self, other)
        return IntVector(self._coords - other._coords)

    def __add__(self, other: "IntVector") -> "IntVector":
        check_dimensions(self, other)
        return IntVector(self._coords + other._coords)

    def max_abs(self) -> int:
        return int(np.max(np.abs(self._coords))) if self.dimension else 0

    def tolist(self) -> List[int]:
        return [int(v) for v in self._coords]

    def to_bytes(self) -> bytes:
        return self._coords.astype("<i8").tobytes()

    @classmethod
    def from_bytes(cls, data: bytes) -> "IntVector":
        return cls(np.frombuffer(data, dtype="<i8"))

    def __reduce__(self):
        return (IntVector, (self._coords,))

    def __repr__(self) -> str:
        if self.dimension <= 8:
            return f"IntVector({self.tolist()})"
        head = ", ".join(str(v) for v in self.tolist()[:6])
        return f"IntVector([{head}, ...], d={self.dimension})"


def check_dimensions(x: IntVector, y: IntVector) -> None:
    if x.dimension != y.dimension:
        raise DimensionMismatchError(x.dimension, y.dimension)


class Dataset:
    """
    An immutable list of IntVectors sharing dimension d and range Δ.

    The uniform distribution over the points is the distribution μ the
    sketches are tailored to.
    """

    def __init__(self,
                 points: Iterable[Union[IntVector, Sequence[int]]],
                 dimension: Optional[int] = None,
                 delta: Optional[int] = None):
        pts = tuple(IntVector(p) for p in points)
        if not pts and dimension is None:
            raise EmptyDatasetError("Cannot infer the dimension of an empty dataset")
        d = dimension if dimension is not None else pts[0].dimension
        for p in pts:
            if p.dimension != d:
                raise DimensionMismatchError(d, p.dimension)
        if pts:
            matrix = np.vstack([p.coords for p in pts])
        else:
            matrix = np.zeros((0, d), dtype=np.int64)
        observed = int(np.max(np.abs(matrix))) if matrix.size else 0
        if delta is None:
            delta = max(1, observed)
        elif observed > delta:
            raise ParameterError(f"Coordinate magnitude {observed} exceeds declared range {delta}")
        matrix.setflags(write=False)
        self._points = pts
        self._matrix = matrix
        self.dimension = int(d)
        self.delta = int(delta)

    @property
    def points(self) -> tuple:
        return self._points

    @property
    def matrix(self) -> np.ndarray:
        """n × d int64 view of the points"""
        return self._matrix

    def __len__(self) -> int:
        return len(self._points)

    def __iter__(self) -> Iterator[IntVector]:
        return iter(self._points)

    def __getitem__(self, i: int) -> IntVector:
        return self._points[i]

    def subset(self, ids: Sequence[int]) -> "Dataset":
        return Dataset([self._points[i] for i in ids], dimension=self.dimension, delta=self.delta)

    def require_nonempty(self) -> None:
        if not self._points:
            raise EmptyDatasetError("Dataset is empty")

    def __repr__(self) -> str:
        return f"Dataset(n={len(self)}, d={self.dimension}, delta={self.delta})"


def _check_p(p: float) -> None:
    if not p >= 1:
        raise ParameterError(f"p must be >= 1, got {p}")


def lp_norm(v: Union[IntVector, np.ndarray], p: float) -> float:
    """(Σ|v_i|^p)^(1/p) in double precision"""
    _check_p(p)
    a = np.abs(np.asarray(v.coords if isinstance(v, IntVector) else v, dtype=np.float64))
    if a.size == 0:
        return 0.0
    top = float(np.max(a))
    if top == 0.0:
        return 0.0
    # scaled by the largest magnitude so large p cannot overflow
    return top * float(np.sum((a / top) ** p)) ** (1.0 / p)


def lp_norms(matrix: np.ndarray, p: float) -> np.ndarray:
    """Row-wise lp norms of a 2-D array"""
    _check_p(p)
    a = np.abs(np.asarray(matrix, dtype=np.float64))
    if a.shape[1] == 0:
        return np.zeros(a.shape[0])
    top = np.max(a, axis=1)
    safe = np.where(top > 0, top, 1.0)
    return top * np.sum((a / safe[:, None]) ** p, axis=1) ** (1.0 / p)


def lp_distance(x: IntVector, y: IntVector, p: float) -> float:
    check_dimensions(x, y)
    return lp_norm(x.coords - y.coords, p)


def default_median_samples(d: int) -> int:
    """⌈8·log2 d⌉ draws, at least one"""
    return max(1, int(math.ceil(8 * math.log2(max(d, 1)))))


def coordinate_median(data: Dataset,
                      sample_count: Optional[int] = None,
                      sampled: bool = False,
                      rng: Optional[np.random.Generator] = None) -> IntVector:
    """
    Coordinate-wise lower median of the dataset.

    Args:
        data: Nonempty dataset
        sample_count: If given, the median is taken over that many points
            drawn uniformly (with replacement) from the dataset
        sampled: Use sampled mode with the default ⌈8·log2 d⌉ draws
        rng: Generator for sampled mode (default: fresh unseeded generator)
    """
    data.require_nonempty()
    matrix = data.matrix
    if sample_count is not None or sampled:
        count = sample_count if sample_count is not None else default_median_samples(data.dimension)
        if count < 1:
            raise ParameterError(f"sample_count must be >= 1, got {count}")
        rng = rng if rng is not None else np.random.default_rng()
        rows = rng.integers(0, len(data), size=count)
        matrix = matrix[rows]
    ordered = np.sort(matrix, axis=0)
    return IntVector(ordered[(ordered.shape[0] - 1) // 2])


def discretize(v: Sequence[float], r: float, eps: float, delta: int) -> IntVector:
    """
    Round each coordinate to the nearest multiple of eps·r/d and express it in
    grid units, clamped to [-delta, delta].
    """
    if not r > 0 or not eps > 0:
        raise ParameterError(f"r and eps must be positive, got r={r}, eps={eps}")
    arr = np.asarray(v, dtype=np.float64)
    d = arr.shape[0]
    if d == 0:
        return IntVector([])
    grid = eps * r / d
    units = np.rint(arr / grid)
    return IntVector(np.clip(units, -delta, delta).astype(np.int64))


def undiscretize(v: IntVector, r: float, eps: float) -> np.ndarray:
    """Map grid units back to real coordinates"""
    d = v.dimension
    if d == 0:
        return np.zeros(0)
    return v.coords.astype(np.float64) * (eps * r / d)


def load_dataset(path: str) -> Dataset:
    """
    Read a dataset file: one comma-separated integer vector per line, with an
    optional leading `# d=<d> delta=<Δ>` header.
    """
    declared_d: Optional[int] = None
    declared_delta: Optional[int] = None
    rows: List[List[int]] = []
    with open(path, "r", encoding="utf-8") as f:
        for line_number, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                if rows:
                    raise DatasetFormatError("header must precede all vectors", line_number)
                declared_d, declared_delta = _parse_header(line, line_number)
                continue
            try:
                row = [int(tok) for tok in line.split(",")]
            except ValueError:
                raise DatasetFormatError(f"not a comma-separated integer vector: {line!r}",
                                         line_number)
            expected = declared_d if declared_d is not None else (len(rows[0]) if rows else None)
            if expected is not None and len(row) != expected:
                raise DatasetFormatError(f"expected {expected} coordinates, got {len(row)}",
                                         line_number)
            if declared_delta is not None and any(abs(c) > declared_delta for c in row):
                raise DatasetFormatError(f"coordinate outside [-{declared_delta}, {declared_delta}]",
                                         line_number)
            rows.append(row)
    if not rows:
        raise EmptyDatasetError(f"Dataset file {path} contains no vectors")
    logger.debug("Loaded %d vectors from %s", len(rows), path)
    return Dataset(np.array(rows, dtype=np.int64), dimension=declared_d, delta=declared_delta)


def _parse_header(line: str, line_number: int):
    fields = {}
    for tok in line.lstrip("#").split():
        if "=" not in tok:
            raise DatasetFormatError(f"malformed header token {tok!r}", line_number)
        key, value = tok.split("=", 1)
        try:
            fields[key.strip()] = int(value)
        except ValueError:
            raise DatasetFormatError(f"header value for {key!r} is not an integer", line_number)
    unknown = set(fields) - {"d", "delta"}
    if unknown:
        raise DatasetFormatError(f"unknown header fields {sorted(unknown)}", line_number)
    return fields.get("d"), fields.get("delta")


def save_dataset(data: Dataset, path: str) -> None:
    """Write a dataset in the format read by load_dataset"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"# d={data.dimension} delta={data.delta}\n")
        for point in data:
            f.write(",".join(str(c) for c in point.tolist()))
            f.write("\n")
