#!/usr/bin/env python3
"""
Tests for utility functions and progress monitoring
"""

import os
import json
import shutil
import tempfile

import pytest

from lpsketch.errors import ConfigError
from lpsketch.monitoring import FileMonitoring, NullMonitoring, format_status
from lpsketch.utils import (
    WORKERS_ENV,
    format_duration,
    get_experiment_status,
    is_experiment_running,
    parse_json_params,
    process_snapshot,
    resolve_workers,
    standard_error,
    wilson_interval,
)


class TestStatistics:
    """Test cases for interval and error helpers"""

    def test_wilson_interval(self):
        """Test bounds stay in [0, 1] and bracket the estimate"""
        assert wilson_interval(0, 0) == (0.0, 1.0)
        low, high = wilson_interval(5, 10)
        assert low < 0.5 < high
        assert low == pytest.approx(1 - high)
        low, high = wilson_interval(0, 100)
        assert low == pytest.approx(0.0, abs=1e-12)
        assert 0 < high < 0.05
        low, high = wilson_interval(100, 100)
        assert high == pytest.approx(1.0)

    def test_standard_error(self):
        """Test the standard error of the mean"""
        assert standard_error([]) == 0.0
        assert standard_error([4.0]) == 0.0
        assert standard_error([1.0, 1.0]) == 0.0
        assert standard_error([1.0, 3.0]) == pytest.approx(1.0)


class TestHelpers:
    """Test cases for parsing and formatting helpers"""

    def setup_method(self):
        """Set up test environment"""
        self.temp_dir = tempfile.mkdtemp()

    def teardown_method(self):
        """Clean up test environment"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_parse_json_params(self):
        """Test JSON objects parse and anything else is rejected"""
        assert parse_json_params('{"n": 5, "sigma": 2.5}') == {"n": 5, "sigma": 2.5}
        assert parse_json_params("") == {}
        with pytest.raises(ConfigError):
            parse_json_params("not json")
        with pytest.raises(ConfigError):
            parse_json_params("[1, 2]")

    def test_resolve_workers(self, monkeypatch):
        """Test explicit values, the environment and 'auto'"""
        monkeypatch.delenv(WORKERS_ENV, raising=False)
        assert resolve_workers() == 1
        assert resolve_workers("3") == 3
        assert resolve_workers("auto") >= 1
        monkeypatch.setenv(WORKERS_ENV, "2")
        assert resolve_workers() == 2
        for bad in ("0", "-1", "many"):
            with pytest.raises(ConfigError):
                resolve_workers(bad)

    def test_format_duration(self):
        """Test seconds, minutes and hours"""
        assert format_duration(30) == "30.0s"
        assert format_duration(90) == "1m 30s"
        assert format_duration(3725) == "1h 2m 5s"

    def test_process_snapshot(self):
        """Test the current process is described"""
        snapshot = process_snapshot()
        assert snapshot["pid"] == os.getpid()
        assert snapshot["rss_bytes"] > 0

    def test_experiment_running(self):
        """Test PID file detection"""
        assert not is_experiment_running("exp", self.temp_dir)
        with open(os.path.join(self.temp_dir, "exp.pid"), "w") as f:
            f.write(str(os.getpid()))
        assert is_experiment_running("exp", self.temp_dir)
        with open(os.path.join(self.temp_dir, "exp.pid"), "w") as f:
            f.write("garbage")
        assert not is_experiment_running("exp", self.temp_dir)

    def test_experiment_status(self):
        """Test status files are read back"""
        assert get_experiment_status("exp", self.temp_dir) == {}
        with open(os.path.join(self.temp_dir, "exp.json"), "w") as f:
            json.dump({"status": "running"}, f)
        assert get_experiment_status("exp", self.temp_dir) == {"status": "running"}


class TestMonitoring:
    """Test cases for monitoring backends"""

    def setup_method(self):
        """Set up test environment"""
        self.temp_dir = tempfile.mkdtemp()

    def teardown_method(self):
        """Clean up test environment"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_file_monitoring(self):
        """Test JSON and text status files"""
        monitoring = FileMonitoring(self.temp_dir)
        status = {
            "experiment_id": "oracle-1",
            "kind": "oracle",
            "status": "running",
            "trials": 10,
            "trials_done": 3,
            "trials_failed": 1,
            "elapsed": 75.0,
            "operations": {"trial": {"count": 3, "total_duration": 0.3}},
        }
        monitoring.report_status("oracle-1", status)
        assert monitoring.get_status("oracle-1") == status

        with open(os.path.join(self.temp_dir, "oracle-1.stats")) as f:
            text = f.read()
        assert "Experiment: oracle-1" in text
        assert "Trials: 3/10 (1 failed)" in text
        assert "Elapsed: 1m 15s" in text
        assert "trial: 3 runs, 100.0 ms mean" in text

    def test_missing_status(self):
        """Test unknown experiments have no status"""
        assert FileMonitoring(self.temp_dir).get_status("missing") is None
        assert NullMonitoring().get_status("anything") is None

    def test_format_status_running_flag(self):
        """Test the CLI form marks running and stopped experiments"""
        status = {"experiment_id": "hard-1", "status": "running", "trials": 4, "trials_done": 4}
        assert "Status: running (stopped)" in format_status(status, running=False)
        assert "Status: running (running)" in format_status(status, running=True)
        assert "Status: running" in format_status(status)
        assert not any(line.startswith("Operations") for line in format_status(status))
