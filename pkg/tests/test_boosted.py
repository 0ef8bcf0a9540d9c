#!/usr/bin/env python3
"""
Tests for boosted sketches and vote decoding
"""

import math
from unittest.mock import patch

import numpy as np
import pytest

from lpsketch.boosted import (
    MAX_T,
    BoostedSketch,
    build_boosted,
    decode_boosted,
    far_votes,
    repetitions_for,
)
from lpsketch.errors import LineageMismatchError, ParameterError, SerializationError
from lpsketch.metric import IntVector
from lpsketch.randomness import SharedSeed
from lpsketch.single_scale import Outcome, SketchOverrides, derive_params


def small_params(r=4.0):
    return derive_params(16, 4, overrides=SketchOverrides(L=3, K=16, k=8), r=r)


def stub(T):
    return BoostedSketch(T=T, delta0=0.01, overridden=False, seed_fingerprint=b"s" * 8,
                         params_fingerprint=small_params().fingerprint(), reps=())


class TestRepetitions:
    """Test cases for the repetition count"""

    def test_known_values(self):
        """Test T = ⌈512·ln(1/δ0)⌉"""
        assert repetitions_for(0.01) == 2358
        assert repetitions_for(math.exp(-1 / 512)) == 1
        assert repetitions_for(0.5) == math.ceil(512 * math.log(2))

    def test_invalid_delta0(self):
        """Test δ0 outside (0, 1)"""
        for bad in (0.0, 1.0, -0.1, 2.0):
            with pytest.raises(ParameterError):
                repetitions_for(bad)


class TestBoostedSketch:
    """Test cases for building boosted sketches"""

    def setup_method(self):
        """Set up parameters, seed and vectors"""
        self.params = small_params()
        self.seed = SharedSeed.from_int(3)
        self.median = IntVector.zeros(16)
        rng = np.random.default_rng(2)
        self.x = IntVector(rng.integers(-10, 11, size=16))
        self.y = IntVector(rng.integers(-10, 11, size=16))

    def test_override_is_flagged(self):
        """Test an explicit T is recorded as overridden"""
        sketch = build_boosted(self.x, self.median, self.params, 0.01, self.seed, T=8)
        assert sketch.T == 8
        assert len(sketch.reps) == 8
        assert sketch.overridden

    def test_derived_t(self):
        """Test T derives from δ0 when not given"""
        sketch = build_boosted(self.x, self.median, self.params, math.exp(-3 / 512), self.seed)
        assert sketch.T == 3
        assert not sketch.overridden

    def test_override_out_of_range(self):
        """Test T below 1 or above the cap"""
        with pytest.raises(ParameterError):
            build_boosted(self.x, self.median, self.params, 0.01, self.seed, T=0)
        with pytest.raises(ParameterError):
            build_boosted(self.x, self.median, self.params, 0.01, self.seed, T=MAX_T + 1)

    def test_repetitions_use_distinct_seeds(self):
        """Test repetitions are not copies of each other"""
        sketch = build_boosted(self.x, self.median, self.params, 0.01, self.seed, T=8)
        assert len({rep.to_bytes() for rep in sketch.reps}) > 1

    def test_bytes(self):
        """Test deterministic bytes that parse back"""
        a = build_boosted(self.x, self.median, self.params, 0.01, self.seed, T=4)
        b = build_boosted(self.x, self.median, self.params, 0.01, self.seed, T=4)
        assert a.to_bytes() == b.to_bytes()
        assert BoostedSketch.from_bytes(a.to_bytes()) == a
        with pytest.raises(SerializationError):
            BoostedSketch.from_bytes(a.to_bytes()[:20])
        with pytest.raises(SerializationError):
            BoostedSketch.from_bytes(a.to_bytes() + b"\x01")


class TestDecodeBoosted:
    """Test cases for vote decoding"""

    def setup_method(self):
        """Set up parameters, seed and vectors"""
        self.params = small_params()
        self.seed = SharedSeed.from_int(4)
        self.median = IntVector.zeros(16)
        rng = np.random.default_rng(5)
        self.x = IntVector(rng.integers(-10, 11, size=16))
        self.y = IntVector(rng.integers(-10, 11, size=16))

    def build(self, v, T=16, seed=None, params=None):
        return build_boosted(v, self.median, params or self.params, 0.01, seed or self.seed, T=T)

    def test_identity(self):
        """Test decode(s, s) is CLOSE with no votes"""
        a = self.build(self.x)
        assert far_votes(a, a, self.params) == 0
        assert decode_boosted(a, a, self.params) is Outcome.CLOSE

    def test_vote_threshold(self):
        """Test FAR iff 16·votes >= T at T = 2358"""
        a = stub(2358)
        with patch("lpsketch.boosted.far_votes", return_value=148):
            assert decode_boosted(a, a, small_params()) is Outcome.FAR
        with patch("lpsketch.boosted.far_votes", return_value=147):
            assert decode_boosted(a, a, small_params()) is Outcome.CLOSE

    def test_votes_match_single_scale(self):
        """Test votes count the FAR repetitions"""
        from lpsketch.single_scale import decode_single_scale

        a, b = self.build(self.x), self.build(self.y)
        expected = sum(decode_single_scale(ra, rb, self.params) is Outcome.FAR
                       for ra, rb in zip(a.reps, b.reps))
        assert far_votes(a, b, self.params) == expected
        assert far_votes(a, b, self.params, workers=4) == expected

    def test_symmetric(self):
        """Test both argument orders agree"""
        a, b = self.build(self.x), self.build(self.y)
        assert decode_boosted(a, b, self.params) == decode_boosted(b, a, self.params)

    def test_lineage(self):
        """Test T, seed and parameter mismatches"""
        a = self.build(self.x)
        with pytest.raises(LineageMismatchError):
            decode_boosted(a, self.build(self.y, T=8), self.params)
        with pytest.raises(LineageMismatchError):
            decode_boosted(a, self.build(self.y, seed=SharedSeed.from_int(99)), self.params)
        with pytest.raises(LineageMismatchError):
            decode_boosted(a, self.build(self.y, params=small_params(r=8.0)), self.params)
