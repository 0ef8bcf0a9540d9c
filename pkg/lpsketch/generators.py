"""
Built-in synthetic datasets: discretized Gaussians, the hard distribution
and planted near-neighbor instances
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from .certification import HardDistributionSpec, sample_hard_point
from .errors import ParameterError
from .metric import Dataset, IntVector, floor_tol, lp_norms
from .randomness import SharedSeed

logger = logging.getLogger(__name__)

MAX_PLANT_ATTEMPTS = 100


def gaussian_grid(n: int, d: int, sigma: float, delta: int, seed: SharedSeed) -> Dataset:
    """n rounded N(0, σ²I_d) vectors clamped to [-Δ, Δ]^d"""
    if n < 1 or d < 1:
        raise ParameterError(f"n and d must be >= 1, got n={n}, d={d}")
    if not sigma > 0 or delta < 1:
        raise ParameterError(f"sigma must be positive and delta >= 1, got {sigma}, {delta}")
    rng = seed.generator("GAUSSIAN")
    points = np.clip(np.rint(rng.normal(0.0, sigma, size=(n, d))), -delta, delta)
    return Dataset(points.astype(np.int64), dimension=d, delta=delta)


def hard_dataset(n: int, p: int, c: int, seed: SharedSeed) -> Dataset:
    """n independent draws from the hard distribution at (p, c)"""
    spec = HardDistributionSpec(p=p, c=c)
    return Dataset([sample_hard_point(spec, seed, i) for i in range(n)],
                   dimension=spec.dimension, delta=c)


def perturb(x: IntVector, radius: float, p: float, delta: int,
            rng: np.random.Generator) -> IntVector:
    """
    x moved by ±1 on as many random coordinates as fit in lp radius `radius`
    (at least one), staying inside [-Δ, Δ].
    """
    d = x.dimension
    count = min(d, max(1, floor_tol(radius ** p)))
    chosen = rng.choice(d, size=count, replace=False)
    signs = rng.choice((-1, 1), size=count)
    coords = x.coords.copy()
    moved = coords[chosen] + signs
    # bounce off the box
    moved = np.where(np.abs(moved) > delta, coords[chosen] - signs, moved)
    coords[chosen] = moved
    return IntVector(coords)


@dataclass(frozen=True)
class PlantedInstance:
    dataset: Dataset
    queries: Tuple[IntVector, ...]
    targets: Tuple[int, ...]
    r: float
    c: float
    p: float


def planted(n: int, d: int, r: float, c: float, delta: int, queries: int,
            p: float, seed: SharedSeed) -> PlantedInstance:
    """
    Near-neighbor instance: each query lies within r of its target point
    and at least cr from every other point.

    Raises:
        ParameterError: no separated instance found (Δ too small for cr)
    """
    if n < 1 or queries < 1:
        raise ParameterError(f"n and queries must be >= 1, got n={n}, queries={queries}")
    rng = seed.generator("PLANTED")
    points = rng.integers(-delta, delta + 1, size=(n, d), dtype=np.int64)
    data = Dataset(points, dimension=d, delta=delta)
    out_queries = []
    targets = []
    for _ in range(queries):
        for _attempt in range(MAX_PLANT_ATTEMPTS):
            target = int(rng.integers(0, n))
            q = perturb(data[target], r, p, delta, rng)
            dists = lp_norms(data.matrix - q.coords, p)
            others = np.delete(dists, target)
            if dists[target] <= r and (others.size == 0 or others.min() >= c * r):
                out_queries.append(q)
                targets.append(target)
                break
        else:
            raise ParameterError(
                f"Could not plant a query with every other point at least cr = {c * r} away")
    logger.debug("Planted %d queries over %d points", queries, n)
    return PlantedInstance(data, tuple(out_queries), tuple(targets), float(r), float(c), float(p))
