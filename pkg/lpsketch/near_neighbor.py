"""
(c, r)-approximate near neighbor search over sketch recursion trees.

Each internal node holds the coordinate-wise median m of its points, a
witness point within (c+1)r/2 of m when one exists, and a boosted sketch
seed. A query either lies within (c-1)r/2 of m and is answered by the
witness, or descends into the child for its own sketch value
σ = sk(q - m), which holds every node point x with decode(sk(x - m), σ) =
CLOSE. Leaves are scanned in insertion order. Children are built the
first time a query asks for them and memoized; `eager=True` builds the
children of every realized sketch value up front. Several independent trees
are queried in turn.
"""

import hashlib
import json
import math
import os
import struct
import threading
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .boosted import BoostedSketch, build_boosted, decode_boosted
from .errors import (
    DimensionMismatchError,
    EmptyDatasetError,
    ParameterError,
    SerializationError,
)
from .metric import (
    Dataset,
    IntVector,
    ceil_tol,
    coordinate_median,
    load_dataset,
    lp_distance,
    lp_norms,
    save_dataset,
)
from .randomness import SharedSeed
from .single_scale import Outcome, SketchOverrides, SketchParams, derive_params

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
DATA_FILE = "data.csv"
FORMAT_NAME = "lpsketch-ann"
FORMAT_VERSION = 1

DEFAULT_REPETITION_CONSTANT = 3.0
SHRINK_BASE = 4.0 / 3.0

_LEAF = 0
_INTERNAL = 1
_NODE_HEADER = struct.Struct("<BHI32s")
_CHILD_ENTRY = struct.Struct("<IB")


def depth_for(n: int) -> int:
    """k = ⌈log_{4/3} n⌉, at least 1"""
    if n < 1:
        raise EmptyDatasetError("Cannot size a tree for an empty dataset")
    return max(1, ceil_tol(math.log(n) / math.log(SHRINK_BASE)))


def trees_for(n: int, eps: float, a: float = DEFAULT_REPETITION_CONSTANT) -> int:
    """R = ⌈a·n^ε⌉, at least 1"""
    if not 0 < eps < 1:
        raise ParameterError(f"eps must lie in (0, 1), got {eps}")
    return max(1, ceil_tol(a * n ** eps))


@dataclass(frozen=True)
class AnnConfig:
    r: float
    c: float
    p: float
    eps: float
    depth: int
    repetitions: int
    overrides: SketchOverrides = field(default_factory=SketchOverrides)
    T: Optional[int] = None
    a: float = DEFAULT_REPETITION_CONSTANT
    eager: bool = False

    def __post_init__(self):
        if not self.r > 0:
            raise ParameterError(f"r must be positive, got {self.r}")
        if not self.c > 1:
            raise ParameterError(f"c must be > 1, got {self.c}")
        if not 0 < self.eps < 1:
            raise ParameterError(f"eps must lie in (0, 1), got {self.eps}")
        if self.depth < 0 or self.repetitions < 1:
            raise ParameterError("depth must be >= 0 and repetitions >= 1")

    @property
    def sketch_params(self) -> SketchParams:
        return derive_params(self.c, self.p, overrides=self.overrides, r=self.r)

    @property
    def near_radius(self) -> float:
        """Queries within (c-1)r/2 of a node median take the witness"""
        return (self.c - 1) * self.r / 2

    @property
    def witness_radius(self) -> float:
        return (self.c + 1) * self.r / 2

    @property
    def answer_radius(self) -> float:
        return self.c * self.r

    def as_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "AnnConfig":
        data = dict(data)
        data["overrides"] = SketchOverrides(**(data.get("overrides") or {}))
        return cls(**data)


class _Tree:
    """State shared by every node of one tree"""

    def __init__(self, dataset: Dataset, config: AnnConfig):
        self.dataset = dataset
        self.config = config
        self.params = config.sketch_params


class AnnNode:
    """
    One node of a recursion tree.

    `depth` is the remaining recursion budget; a node with depth 0 is a
    leaf. Internal nodes memoize their children by the serialized sketch
    value σ; a memoized None marks an empty X_σ.
    """

    def __init__(self, tree: _Tree, members: Sequence[int], depth: int, seed: SharedSeed,
                 median: Optional[IntVector] = None, close: Optional[int] = None):
        self._tree = tree
        self.members = tuple(int(i) for i in members)
        self.depth = depth
        self.seed = seed
        self.children: Dict[bytes, Optional["AnnNode"]] = {}
        self._member_sketches: Optional[Tuple[BoostedSketch, ...]] = None
        self._lock = threading.Lock()
        self.median: Optional[IntVector] = None
        self.close: Optional[int] = None
        if not self.is_leaf:
            if median is None:
                self.median, self.close = self._center()
            else:
                self.median, self.close = median, close

    @property
    def is_leaf(self) -> bool:
        return self.depth == 0

    def _center(self) -> Tuple[IntVector, Optional[int]]:
        subset = self._tree.dataset.subset(self.members)
        median = coordinate_median(subset)
        dists = lp_norms(subset.matrix - median.coords, self._tree.config.p)
        inside = np.flatnonzero(dists <= self._tree.config.witness_radius)
        close = self.members[int(inside[0])] if inside.size else None
        return median, close

    def sketch(self, x: IntVector) -> BoostedSketch:
        config = self._tree.config
        return build_boosted(x, self.median, self._tree.params, config.eps, self.seed, T=config.T)

    def member_sketches(self) -> Tuple[BoostedSketch, ...]:
        if self._member_sketches is None:
            data = self._tree.dataset
            self._member_sketches = tuple(self.sketch(data[i]) for i in self.members)
        return self._member_sketches

    def compatible(self, sigma: BoostedSketch) -> List[int]:
        """X_σ: node points whose sketch decodes CLOSE against σ"""
        params = self._tree.params
        return [i for i, s in zip(self.members, self.member_sketches())
                if decode_boosted(s, sigma, params) is Outcome.CLOSE]

    def child(self, sigma: BoostedSketch) -> Optional["AnnNode"]:
        """The memoized child for σ, building it on first use; None if X_σ is empty"""
        key = sigma.to_bytes()
        with self._lock:
            if key in self.children:
                return self.children[key]
            members = self.compatible(sigma)
            node = None
            if members:
                node = AnnNode(self._tree, members, self.depth - 1, _child_seed(self.seed, key))
            self.children[key] = node
            return node

    def expand(self) -> None:
        """Build children for every realized sketch value, recursively"""
        if self.is_leaf:
            return
        for sigma in self.member_sketches():
            node = self.child(sigma)
            if node is not None and not node.children:
                node.expand()

    def node_count(self) -> int:
        return 1 + sum(c.node_count() for c in self.children.values() if c is not None)

    def height(self) -> int:
        below = [c.height() for c in self.children.values() if c is not None]
        return 1 + max(below, default=0)


def _child_seed(seed: SharedSeed, key: bytes) -> SharedSeed:
    index = int.from_bytes(hashlib.blake2b(key, digest_size=8).digest(), "little")
    return seed.derive("CHILD", index)


def _tree_seed(seed: SharedSeed, t: int) -> SharedSeed:
    return seed.derive("TREE", t)


def core_preprocess(data: Dataset, depth: int, config: AnnConfig, seed: SharedSeed) -> AnnNode:
    """
    Root of one recursion tree over all of X.

    Raises:
        EmptyDatasetError: X is empty
    """
    data.require_nonempty()
    if depth < 0:
        raise ParameterError(f"depth must be >= 0, got {depth}")
    root = AnnNode(_Tree(data, config), range(len(data)), depth, seed)
    if config.eager:
        root.expand()
    return root


def core_query(q: IntVector, node: AnnNode,
               shrink: Optional[List[float]] = None) -> Optional[int]:
    """
    Walk one root-to-leaf path. Returns a point identifier within cr of q,
    or None (FAIL).

    Args:
        q: Query vector
        node: Tree root
        shrink: If given, |X_σ|/|X| is appended for every descent
    """
    tree = node._tree
    if q.dimension != tree.dataset.dimension:
        raise DimensionMismatchError(tree.dataset.dimension, q.dimension)
    config = tree.config
    while True:
        if node.is_leaf:
            for i in node.members:
                if lp_distance(q, tree.dataset[i], config.p) <= config.answer_radius:
                    return i
            return None
        if lp_distance(q, node.median, config.p) <= config.near_radius:
            w = node.close
            if w is not None and lp_distance(q, tree.dataset[w], config.p) <= config.answer_radius:
                return w
            return None
        child = node.child(node.sketch(q))
        if shrink is not None:
            size = len(child.members) if child is not None else 0
            shrink.append(size / len(node.members))
        if child is None:
            return None
        node = child


class AnnIndex:
    """R independent recursion trees over one dataset"""

    def __init__(self, dataset: Dataset, config: AnnConfig, seed: SharedSeed,
                 roots: Sequence[AnnNode]):
        self.dataset = dataset
        self.config = config
        self.seed = seed
        self.roots = tuple(roots)

    def __repr__(self) -> str:
        return (f"AnnIndex(n={len(self.dataset)}, trees={len(self.roots)}, "
                f"depth={self.config.depth})")


def build_index(data: Dataset, r: float, c: float, eps: float, seed: SharedSeed,
                p: float = 2.0,
                overrides: Optional[SketchOverrides] = None,
                T: Optional[int] = None,
                depth: Optional[int] = None,
                repetitions: Optional[int] = None,
                a: float = DEFAULT_REPETITION_CONSTANT,
                eager: bool = False) -> AnnIndex:
    """
    Build R = ⌈a·n^ε⌉ trees of depth ⌈log_{4/3} n⌉ (either may be overridden).

    Raises:
        EmptyDatasetError: X is empty
        ParameterError: invalid (r, c, ε) or sketch parameters
    """
    data.require_nonempty()
    n = len(data)
    config = AnnConfig(
        r=float(r), c=float(c), p=float(p), eps=float(eps),
        depth=depth if depth is not None else depth_for(n),
        repetitions=repetitions if repetitions is not None else trees_for(n, eps, a),
        overrides=overrides or SketchOverrides(), T=T, a=a, eager=eager,
    )
    roots = [core_preprocess(data, config.depth, config, _tree_seed(seed, t))
             for t in range(config.repetitions)]
    logger.info("Built %d trees of depth %d over %d points", len(roots), config.depth, n)
    return AnnIndex(data, config, seed, roots)


def query_index(index: AnnIndex, q: IntVector,
                shrink: Optional[List[float]] = None) -> Optional[int]:
    """First non-FAIL answer over the trees in order, or None"""
    for root in index.roots:
        answer = core_query(q, root, shrink)
        if answer is not None:
            return answer
    return None


def brute_force_near(data: Dataset, q: IntVector, p: float) -> Tuple[int, float]:
    """Exact nearest neighbor by linear scan; ties go to the smallest identifier"""
    data.require_nonempty()
    if q.dimension != data.dimension:
        raise DimensionMismatchError(data.dimension, q.dimension)
    dists = lp_norms(data.matrix - q.coords, p)
    best = int(np.argmin(dists))
    return best, float(dists[best])


def _encode_node(node: AnnNode, out: List[bytes]) -> None:
    body = [_NODE_HEADER.pack(_LEAF if node.is_leaf else _INTERNAL, node.depth,
                              len(node.members), node.seed.master)]
    body.append(struct.pack(f"<{len(node.members)}I", *node.members))
    children: List[Tuple[bytes, Optional[AnnNode]]] = []
    if not node.is_leaf:
        body.append(node.median.to_bytes())
        body.append(struct.pack("<iI", -1 if node.close is None else node.close,
                                len(node.children)))
        children = list(node.children.items())
        for key, child in children:
            body.append(_CHILD_ENTRY.pack(len(key), 0 if child is None else 1))
            body.append(key)
    record = b"".join(body)
    out.append(struct.pack("<I", len(record)))
    out.append(record)
    for _, child in children:
        if child is not None:
            _encode_node(child, out)


def _decode_node(tree: _Tree, data: bytes, offset: int) -> Tuple[AnnNode, int]:
    try:
        (length,) = struct.unpack_from("<I", data, offset)
        offset += 4
        end = offset + length
        if end > len(data):
            raise SerializationError("Truncated index node")
        kind, depth, count, master = _NODE_HEADER.unpack_from(data, offset)
        pos = offset + _NODE_HEADER.size
        members = struct.unpack_from(f"<{count}I", data, pos)
        pos += 4 * count
        if kind == _LEAF:
            node = AnnNode(tree, members, depth, SharedSeed(master))
            if pos != end:
                raise SerializationError("Leaf record has trailing bytes")
            return node, end
        d = tree.dataset.dimension
        median = IntVector.from_bytes(data[pos:pos + 8 * d])
        pos += 8 * d
        close, n_children = struct.unpack_from("<iI", data, pos)
        pos += 8
        entries = []
        for _ in range(n_children):
            key_len, present = _CHILD_ENTRY.unpack_from(data, pos)
            pos += _CHILD_ENTRY.size
            entries.append((bytes(data[pos:pos + key_len]), bool(present)))
            pos += key_len
        if pos != end:
            raise SerializationError("Node record length does not match its contents")
    except struct.error as e:
        raise SerializationError(f"Truncated index node: {e}")
    node = AnnNode(tree, members, depth, SharedSeed(master), median=median,
                   close=None if close < 0 else close)
    offset = end
    for key, present in entries:
        child = None
        if present:
            child, offset = _decode_node(tree, data, offset)
        node.children[key] = child
    return node, offset


def save_index(index: AnnIndex, directory: str) -> None:
    """Write the manifest, the dataset and one node stream per tree"""
    os.makedirs(directory, exist_ok=True)
    save_dataset(index.dataset, os.path.join(directory, DATA_FILE))
    manifest = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": index.config.as_dict(),
        "seed": index.seed.hex(),
        "n": len(index.dataset),
        "d": index.dataset.dimension,
        "delta": index.dataset.delta,
        "trees": [f"tree_{t:04d}.bin" for t in range(len(index.roots))],
    }
    for name, root in zip(manifest["trees"], index.roots):
        chunks: List[bytes] = []
        _encode_node(root, chunks)
        with open(os.path.join(directory, name), "wb") as f:
            f.write(b"".join(chunks))
    with open(os.path.join(directory, MANIFEST), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    logger.info("Saved index with %d trees to %s", len(index.roots), directory)


def load_index(directory: str) -> AnnIndex:
    """
    Read an index written by save_index. Children that were never built
    are built again on demand.

    Raises:
        SerializationError: missing or inconsistent files
    """
    manifest_path = os.path.join(directory, MANIFEST)
    try:
        with open(manifest_path, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise SerializationError(f"Cannot read index manifest {manifest_path}: {e}")
    if manifest.get("format") != FORMAT_NAME or manifest.get("version") != FORMAT_VERSION:
        raise SerializationError(f"{manifest_path} is not a version {FORMAT_VERSION} index")
    dataset = load_dataset(os.path.join(directory, DATA_FILE))
    if (len(dataset), dataset.dimension) != (manifest["n"], manifest["d"]):
        raise SerializationError("Index dataset does not match its manifest")
    config = AnnConfig.from_dict(manifest["config"])
    tree = _Tree(dataset, config)
    roots = []
    for name in manifest["trees"]:
        with open(os.path.join(directory, name), "rb") as f:
            data = f.read()
        root, offset = _decode_node(tree, data, 0)
        if offset != len(data):
            raise SerializationError(f"{name}: trailing bytes after the root subtree")
        roots.append(root)
    return AnnIndex(dataset, config, SharedSeed.from_hex(manifest["seed"]), roots)
