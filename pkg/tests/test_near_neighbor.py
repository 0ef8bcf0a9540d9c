#!/usr/bin/env python3
"""
Tests for the approximate near neighbor index
"""

import os
import json
import shutil
import tempfile

import numpy as np
import pytest

from lpsketch.errors import (
    DimensionMismatchError,
    EmptyDatasetError,
    ParameterError,
    SerializationError,
)
from lpsketch.metric import Dataset, IntVector, lp_distance
from lpsketch.near_neighbor import (
    MANIFEST,
    AnnConfig,
    brute_force_near,
    build_index,
    core_preprocess,
    core_query,
    depth_for,
    load_index,
    query_index,
    save_index,
    trees_for,
)
from lpsketch.randomness import SharedSeed
from lpsketch.single_scale import SketchOverrides

OVERRIDES = SketchOverrides(L=3, K=16, k=8)


def small_dataset(n=24, d=8, delta=10, seed=0):
    rng = np.random.default_rng(seed)
    return Dataset(rng.integers(-delta, delta + 1, size=(n, d)), delta=delta)


def small_index(data, eager=False, seed=1):
    return build_index(data, r=2.0, c=3.0, eps=0.5, seed=SharedSeed.from_int(seed), p=2.0,
                       overrides=OVERRIDES, T=4, depth=3, repetitions=2, eager=eager)


class TestSizing:
    """Test cases for tree depth and count"""

    def test_depth(self):
        """Test ⌈log_{4/3} n⌉ with a floor of one"""
        assert depth_for(1000) == 25
        assert depth_for(1) == 1
        assert depth_for(2) == 3
        with pytest.raises(EmptyDatasetError):
            depth_for(0)

    def test_trees(self):
        """Test ⌈3·n^ε⌉"""
        assert trees_for(1000, 0.5) == 95
        assert trees_for(1, 0.5) == 3
        with pytest.raises(ParameterError):
            trees_for(100, 1.0)

    def test_config_validation(self):
        """Test invalid r, c and ε"""
        with pytest.raises(ParameterError):
            AnnConfig(r=0, c=2, p=2, eps=0.5, depth=1, repetitions=1)
        with pytest.raises(ParameterError):
            AnnConfig(r=1, c=1, p=2, eps=0.5, depth=1, repetitions=1)
        with pytest.raises(ParameterError):
            AnnConfig(r=1, c=2, p=2, eps=0, depth=1, repetitions=1)
        config = AnnConfig(r=2, c=3, p=2, eps=0.5, depth=1, repetitions=1)
        assert config.near_radius == 2.0
        assert config.witness_radius == 4.0
        assert config.answer_radius == 6.0


class TestQuery:
    """Test cases for building and querying the index"""

    def setup_method(self):
        """Set up a small dataset and index"""
        self.data = small_dataset()
        self.index = small_index(self.data)

    def test_dataset_points_are_found(self):
        """Test a stored point always gets an answer within cr"""
        for q in self.data:
            answer = query_index(self.index, q)
            assert answer is not None
            assert lp_distance(q, self.data[answer], 2.0) <= 6.0

    def test_far_query_fails(self):
        """Test a query far from every point returns FAIL"""
        q = IntVector([500] * 8)
        assert query_index(self.index, q) is None

    def test_answers_are_sound(self):
        """Test every answer lies within cr of the query"""
        rng = np.random.default_rng(3)
        for _ in range(20):
            q = IntVector(rng.integers(-10, 11, size=8))
            answer = query_index(self.index, q)
            if answer is not None:
                assert lp_distance(q, self.data[answer], 2.0) <= 6.0

    def test_shrink_fractions(self):
        """Test descents report |X_σ|/|X| in (0, 1]"""
        shrink = []
        core_query(self.data[0], self.index.roots[0], shrink)
        assert all(0 < f <= 1 for f in shrink)

    def test_lazy_children_are_memoized(self):
        """Test a repeated query reuses the built child"""
        root = self.index.roots[0]
        query_index(self.index, self.data[5])
        count = root.node_count()
        query_index(self.index, self.data[5])
        assert root.node_count() == count

    def test_eager_matches_lazy(self):
        """Test eager construction answers like lazy construction"""
        eager = small_index(self.data, eager=True)
        assert eager.roots[0].node_count() >= 1
        for q in list(self.data)[:8]:
            assert query_index(eager, q) == query_index(self.index, q)

    def test_dimension_mismatch(self):
        """Test a query of the wrong dimension"""
        with pytest.raises(DimensionMismatchError):
            query_index(self.index, IntVector([0, 0]))

    def test_empty_dataset(self):
        """Test building over no points"""
        with pytest.raises(EmptyDatasetError):
            small_index(Dataset([], dimension=8))

    def test_leaf_root(self):
        """Test a depth-0 tree scans in insertion order"""
        config = AnnConfig(r=2, c=3, p=2, eps=0.5, depth=0, repetitions=1, overrides=OVERRIDES, T=4)
        data = Dataset([[0, 0], [1, 0], [0, 1]])
        root = core_preprocess(data, 0, config, SharedSeed.from_int(0))
        assert root.is_leaf
        assert core_query(IntVector([0, 1]), root) == 0
        assert core_query(IntVector([50, 50]), root) is None

    def test_brute_force(self):
        """Test the exact scan with ties to the smallest identifier"""
        data = Dataset([[5, 5], [1, 1], [1, 1]])
        assert brute_force_near(data, IntVector([0, 0]), 2.0) == (1, pytest.approx(2 ** 0.5))


class TestPersistence:
    """Test cases for saving and loading indexes"""

    def setup_method(self):
        """Set up test environment"""
        self.temp_dir = tempfile.mkdtemp()
        self.data = small_dataset(seed=4)

    def teardown_method(self):
        """Clean up test environment"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_save_and_load(self):
        """Test a loaded index keeps its trees and answers"""
        index = small_index(self.data, eager=True)
        expected = [query_index(index, q) for q in self.data]
        path = os.path.join(self.temp_dir, "index")
        save_index(index, path)

        loaded = load_index(path)
        assert loaded.seed == index.seed
        assert loaded.config == index.config
        assert [r.node_count() for r in loaded.roots] == [r.node_count() for r in index.roots]
        assert [query_index(loaded, q) for q in self.data] == expected

    def test_lazy_index_round_trip(self):
        """Test unbuilt children are rebuilt after loading"""
        index = small_index(self.data)
        path = os.path.join(self.temp_dir, "index")
        save_index(index, path)
        loaded = load_index(path)
        assert [query_index(loaded, q) for q in self.data] == [query_index(index, q) for q in self.data]

    def test_bad_manifest(self):
        """Test a foreign manifest is rejected"""
        path = os.path.join(self.temp_dir, "index")
        save_index(small_index(self.data), path)
        with open(os.path.join(path, MANIFEST), "w") as f:
            json.dump({"format": "other"}, f)
        with pytest.raises(SerializationError):
            load_index(path)

    def test_missing_directory(self):
        """Test loading from nowhere"""
        with pytest.raises(SerializationError):
            load_index(os.path.join(self.temp_dir, "missing"))

    def test_truncated_tree(self):
        """Test a cut tree file"""
        path = os.path.join(self.temp_dir, "index")
        save_index(small_index(self.data, eager=True), path)
        tree_file = os.path.join(path, "tree_0000.bin")
        with open(tree_file, "rb") as f:
            data = f.read()
        with open(tree_file, "wb") as f:
            f.write(data[:len(data) // 2])
        with pytest.raises(SerializationError):
            load_index(path)
