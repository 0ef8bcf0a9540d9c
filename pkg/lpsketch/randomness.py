"""
Seed-addressed public randomness shared by sketches built independently.

Every role (exponential variates, coordinate order, coordinate hashes,
norm hashes) draws from its own labelled stream so two parties holding the
same master seed agree on all of it without communicating. Streams are
numpy Philox counter generators keyed through keyed BLAKE2b; word i of a
stream is the value for coordinate i regardless of how many words are
requested.
"""

import hashlib
import secrets
import threading
from functools import lru_cache
from typing import Optional

import numpy as np

from .errors import ParameterError

EXP = "EXP"
PERM = "PERM"
H1 = "H1"
H2 = "H2"

SEED_BYTES = 32

_TWO_POW_MINUS_53 = 2.0 ** -53
MIN_BLOCK = 64


class SharedSeed:
    """A 256-bit master seed; immutable and safe to share across threads"""

    __slots__ = ("_master",)

    def __init__(self, master: bytes):
        if not isinstance(master, (bytes, bytearray)) or len(master) != SEED_BYTES:
            raise ParameterError(f"SharedSeed needs exactly {SEED_BYTES} bytes")
        self._master = bytes(master)

    @classmethod
    def generate(cls) -> "SharedSeed":
        return cls(secrets.token_bytes(SEED_BYTES))

    @classmethod
    def from_hex(cls, text: str) -> "SharedSeed":
        text = text.strip()
        if len(text) != 2 * SEED_BYTES or text != text.lower():
            raise ParameterError("Seed must be 64 lowercase hex characters")
        try:
            return cls(bytes.fromhex(text))
        except ValueError:
            raise ParameterError(f"Seed is not valid hex: {text!r}")

    @classmethod
    def from_int(cls, value: int) -> "SharedSeed":
        """Convenience for tests and examples: a seed derived from a small integer"""
        return cls(hashlib.blake2b(str(value).encode(), digest_size=SEED_BYTES).digest())

    @property
    def master(self) -> bytes:
        return self._master

    def hex(self) -> str:
        return self._master.hex()

    def digest(self, label: str, index: Optional[int] = None, size: int = SEED_BYTES) -> bytes:
        """Keyed BLAKE2b of (label, index) under the master seed"""
        h = hashlib.blake2b(digest_size=size, key=self._master)
        h.update(label.encode("ascii"))
        h.update(b"\x00")
        if index is not None:
            h.update(str(index).encode("ascii"))
        return h.digest()

    def derive(self, label: str, index: Optional[int] = None) -> "SharedSeed":
        """Independent sub-seed, e.g. one per boosting repetition"""
        return SharedSeed(self.digest("derive:" + label, index))

    def fingerprint(self) -> bytes:
        """8-byte identifier of the seed lineage"""
        return self.digest("fingerprint", size=8)

    def stream(self, label: str, count: int) -> np.ndarray:
        """The first `count` 64-bit words of the labelled stream (read-only)"""
        return _stream(self._master, label, int(count))

    def generator(self, label: str, index: Optional[int] = None) -> np.random.Generator:
        """A numpy Generator for sampling tasks tied to this seed"""
        key = int.from_bytes(self.digest("gen:" + label, index, size=16), "little")
        return np.random.Generator(np.random.Philox(key=key))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, SharedSeed):
            return NotImplemented
        return self._master == other._master

    def __hash__(self) -> int:
        return hash(self._master)

    def __reduce__(self):
        return (SharedSeed, (self._master,))

    def __repr__(self) -> str:
        return f"SharedSeed({self.hex()[:12]}...)"


_stream_lock = threading.Lock()


@lru_cache(maxsize=8192)
def _stream(master: bytes, label: str, count: int) -> np.ndarray:
    key = int.from_bytes(SharedSeed(master).digest("stream:" + label, size=16), "little")
    with _stream_lock:
        words = np.random.Philox(key=key).random_raw(count)
    words = np.asarray(words, dtype=np.uint64)
    words.setflags(write=False)
    return words


def _check_index(i: int) -> None:
    if i < 0:
        raise ParameterError(f"Coordinate index must be non-negative, got {i}")


def _check_universe(U: int) -> None:
    if U < 1:
        raise ParameterError(f"Hash universe size must be >= 1, got {U}")


def _block(i: int) -> int:
    """Power-of-two stream length covering index i, so lookups share cached blocks"""
    return max(MIN_BLOCK, 1 << int(i).bit_length())


def _uniform_open(words: np.ndarray) -> np.ndarray:
    # top 53 bits, shifted half a step so 0 and 1 are both excluded
    return ((words >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_POW_MINUS_53


def exp_variates(seed: SharedSeed, d: int) -> np.ndarray:
    """u_0..u_{d-1} ~ Exp(1) via the inverse CDF"""
    return _exp_variates(seed.master, int(d))


@lru_cache(maxsize=2048)
def _exp_variates(master: bytes, d: int) -> np.ndarray:
    v = _uniform_open(_stream(master, EXP, d))
    u = -np.log1p(-v)
    u.setflags(write=False)
    return u


def exp_variate(seed: SharedSeed, i: int) -> float:
    _check_index(i)
    return float(_exp_variates(seed.master, _block(i))[i])


def perm_priority(seed: SharedSeed, i: int) -> int:
    _check_index(i)
    return int(seed.stream(PERM, _block(i))[i])


def perm_order(seed: SharedSeed, d: int) -> np.ndarray:
    """Coordinates 0..d-1 sorted by (priority, index): the permutation π"""
    return _perm_order(seed.master, int(d))


@lru_cache(maxsize=2048)
def _perm_order(master: bytes, d: int) -> np.ndarray:
    keys = _stream(master, PERM, d)
    order = np.lexsort((np.arange(d), keys))
    order.setflags(write=False)
    return order


def perm_ranks(seed: SharedSeed, d: int) -> np.ndarray:
    """rank[i] = position of coordinate i under π"""
    return _perm_ranks(seed.master, int(d))


@lru_cache(maxsize=2048)
def _perm_ranks(master: bytes, d: int) -> np.ndarray:
    order = _perm_order(master, d)
    ranks = np.empty(d, dtype=np.int64)
    ranks[order] = np.arange(d)
    ranks.setflags(write=False)
    return ranks


def hash_coord(seed: SharedSeed, i: int, U: int) -> int:
    """h1: [d] -> [U]"""
    _check_index(i)
    _check_universe(U)
    return int(seed.stream(H1, _block(i))[i] % np.uint64(U))


def coord_hashes(seed: SharedSeed, d: int, U: int) -> np.ndarray:
    """h1 for every coordinate 0..d-1"""
    _check_universe(U)
    return (seed.stream(H1, d) % np.uint64(U)).astype(np.int64)


def hash_norm(seed: SharedSeed, nu: int, U: int) -> int:
    """h2: Z -> [U]"""
    _check_universe(U)
    word = int.from_bytes(seed.digest(H2, int(nu), size=8), "little")
    return word % U
