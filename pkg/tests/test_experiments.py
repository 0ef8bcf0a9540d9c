#!/usr/bin/env python3
"""
Tests for the experiment harness and every experiment kind
"""

import os
import re
import json
import shutil
import tempfile

import pytest

from lpsketch.base_experiment import BaseExperiment, Gate, Report
from lpsketch.certification import HardDistributionSpec, hard_norm
from lpsketch.config import KINDS, ExperimentConfig
from lpsketch.errors import ConfigError, ParameterError
from lpsketch.experiments import EXPERIMENTS, build_dataset, rate, run_experiment
from lpsketch.metric import Dataset, save_dataset
from lpsketch.monitoring import NullMonitoring
from lpsketch.randomness import SharedSeed

SEED = SharedSeed.from_int(2024).hex()

SMALL = dict(
    trials=4, n=30, d=8, delta=10, L=3, K=16, k=8, T=2,
    hard_p=5, hard_c=4, pairs=2, workers=1, seed=SEED,
)

PER_KIND = {
    "ann": dict(c=3.0, r=1.0, R=2, depth=3),
}

REPORT_FIELDS = ["experiment", "seed", "params", "aggregates", "gates", "passed",
                 "records", "timing", "process"]


def small_config(kind, **extra):
    values = dict(SMALL)
    values.update(PER_KIND.get(kind, {}))
    values.update(extra)
    return ExperimentConfig(experiment=kind, **values)


def deterministic_part(report):
    data = report.to_dict()
    data.pop("timing")
    data.pop("process")
    return data


class FlakyExperiment(BaseExperiment):
    """Experiment whose odd trials raise"""

    kind = "flaky"

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self.setup_called = False
        self.cleanup_called = False

    def setup(self):
        self.setup_called = True

    def cleanup(self):
        self.cleanup_called = True

    def trial(self, index):
        if index % 2:
            raise RuntimeError(f"trial {index} broke")
        return {"value": index}

    def summarize(self, records):
        return {"count": len(records)}, [Gate("count", len(records), 1, ">=")]


class TestGatesAndReports:
    """Test cases for gates, rates and reports"""

    def test_gate_comparisons(self):
        """Test each comparison operator"""
        assert Gate("a", 0.04, 0.05, "<=").passed
        assert not Gate("a", 0.06, 0.05, "<=").passed
        assert Gate("a", 0.0, 0.0, "<=").passed
        assert not Gate("a", 0.0, 0.0, "<").passed
        assert Gate("a", 0, 0, "==").passed
        assert Gate("a", 0.3, 0.25, ">=").passed
        assert Gate("a", 0.3, 0.25, ">=").as_dict()["passed"] is True

    def test_rate(self):
        """Test rates carry counts and an interval"""
        result = rate(3, 10)
        assert result["rate"] == 0.3
        low, high = result["wilson95"]
        assert low < 0.3 < high
        assert rate(0, 0)["rate"] == 0.0

    def test_report_passed(self):
        """Test passing needs complete trials and passing gates"""
        good = Report("x", SEED, {}, {}, [Gate("g", 1, 0, ">=")], [])
        assert good.passed
        assert not Report("x", SEED, {}, {}, [Gate("g", 1, 0, ">=")], [], trials_failed=1).passed
        assert not Report("x", SEED, {}, {}, [Gate("g", 1, 0, ">=")], [], complete=False).passed
        assert not Report("x", SEED, {}, {}, [Gate("g", 0, 1, ">=")], []).passed
        assert list(good.to_dict()) == REPORT_FIELDS

    def test_registry(self):
        """Test every configurable kind has an experiment"""
        assert set(EXPERIMENTS) == set(KINDS)


class TestBaseExperiment:
    """Test cases for the trial loop"""

    def setup_method(self):
        """Set up test environment"""
        self.temp_dir = tempfile.mkdtemp()

    def teardown_method(self):
        """Clean up test environment"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_failed_trials_fail_the_report(self):
        """Test raising trials are counted and logged"""
        experiment = FlakyExperiment(config=ExperimentConfig(trials=6, seed=SEED, workers=1),
                                     experiment_id="flaky", log_dir=self.temp_dir)
        report = experiment.run()
        assert experiment.setup_called
        assert experiment.cleanup_called
        assert report.trials_failed == 3
        assert [r["trial"] for r in report.records] == [0, 2, 4]
        assert not report.passed

        with open(os.path.join(self.temp_dir, "flaky.log")) as f:
            assert "trial 1 broke" in f.read()

    def test_log_lines_name_the_run(self):
        """Test log lines carry the kind and seed prefix and the header names the run"""
        FlakyExperiment(config=ExperimentConfig(trials=2, seed=SEED, workers=1),
                        experiment_id="flaky", log_dir=self.temp_dir).run()
        with open(os.path.join(self.temp_dir, "flaky.log")) as f:
            # tracebacks of the failed trial span several unstamped lines
            lines = [line for line in f.read().splitlines() if re.match(r"\d{4}-\d\d-\d\dT", line)]
        assert len(lines) >= 3
        assert all(f"[flaky {SEED[:8]}]" in line for line in lines)
        assert f"flaky run flaky: seed {SEED}, 2 trials, 1 worker(s)" in lines[0]
        assert "finished: failed" in lines[-1]

    def test_status_files(self):
        """Test progress files are written and the PID file removed"""
        FlakyExperiment(config=ExperimentConfig(trials=2, seed=SEED, workers=1),
                        experiment_id="flaky", log_dir=self.temp_dir).run()
        with open(os.path.join(self.temp_dir, "flaky.json")) as f:
            status = json.load(f)
        assert status["status"] == "failed"
        assert status["trials_done"] == 2
        assert os.path.exists(os.path.join(self.temp_dir, "flaky.stats"))
        assert not os.path.exists(os.path.join(self.temp_dir, "flaky.pid"))

    def test_custom_monitoring(self):
        """Test a supplied backend replaces the status files"""
        FlakyExperiment(config=ExperimentConfig(trials=2, seed=SEED, workers=1), experiment_id="quiet",
                        log_dir=self.temp_dir, monitoring=NullMonitoring()).run()
        assert not os.path.exists(os.path.join(self.temp_dir, "quiet.json"))

    def test_default_experiment_id(self):
        """Test the id combines kind and seed prefix"""
        experiment = FlakyExperiment(config=ExperimentConfig(trials=1, seed=SEED, workers=1), log_dir=self.temp_dir)
        assert experiment.experiment_id == f"flaky-{SEED[:8]}"


class TestExperiments:
    """Test cases for each experiment at desk scale"""

    def setup_method(self):
        """Set up test environment"""
        self.temp_dir = tempfile.mkdtemp()

    def teardown_method(self):
        """Clean up test environment"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def run(self, kind, **extra):
        return run_experiment(small_config(kind, **extra), log_dir=self.temp_dir)

    @pytest.mark.parametrize("kind", sorted(KINDS))
    def test_every_kind_runs(self, kind):
        """Test each experiment completes with records and named gates"""
        report = self.run(kind)
        assert report.experiment == kind
        assert report.trials_failed == 0
        assert report.complete
        assert len(report.records) == 4
        assert report.gates
        assert report.seed == SEED
        assert report.params["seed"] == SEED

    def test_deterministic_reports(self):
        """Test the same config and seed give the same report"""
        first = self.run("oracle")
        second = self.run("oracle")
        assert deterministic_part(first) == deterministic_part(second)

    def test_parallel_matches_serial(self):
        """Test worker processes produce the serial records"""
        serial = self.run("nonexpansion", trials=6)
        parallel = self.run("nonexpansion", trials=6, workers=2)
        assert serial.records == parallel.records

    def test_report_file(self):
        """Test the JSON report and its field order"""
        out = os.path.join(self.temp_dir, "reports", "hard.json")
        report = self.run("hard", output=out)
        with open(out) as f:
            data = json.load(f)
        assert list(data) == REPORT_FIELDS
        assert data["passed"] == report.passed
        assert data["aggregates"]["structure_failures"] == 0

    def test_hard_structure(self):
        """Test the hard distribution never breaks its structure"""
        report = self.run("hard", trials=20)
        gates = {g.name: g for g in report.gates}
        assert gates["structure_failures"].passed
        assert report.aggregates["level_sizes"] == [8, 4, 2, 1]

    def test_certification_implication(self):
        """Test valid certificates always come with distance >= 2"""
        report = self.run("certification", trials=10)
        assert report.aggregates["implication_violations"] == 0
        assert report.params["sketch"]["raw_indices"] is True

    def test_oracle_explains_disagreements(self):
        """Test hashed decodes only differ from the oracle through collisions"""
        report = self.run("oracle", trials=10)
        assert report.aggregates["unexplained_disagreements"] == 0

    def test_ann_is_sound(self):
        """Test the near-neighbor benchmark never returns a far point"""
        report = self.run("ann")
        assert report.aggregates["unsound_answers"] == 0
        assert report.params["index"]["repetitions"] == 2

    def test_contraction_in_hard_norm(self):
        """Test contraction sketches and measures in the hard distribution's own norm"""
        report = self.run("contraction")
        spec = HardDistributionSpec(p=5, c=4)
        aggregates = report.aggregates
        assert aggregates["sketch_p"] == 5
        assert aggregates["sketch_c"] == 64.0
        assert aggregates["fixed_norm"] == pytest.approx(hard_norm(spec, 5))
        assert aggregates["r"] == pytest.approx(2 * hard_norm(spec, 5) / 63)
        assert aggregates["r_at_hard_c"] == pytest.approx(2 * hard_norm(spec, 5) / 3)
        assert 0 <= aggregates["far_on_mu_at_hard_c"]["rate"] <= 1

    @pytest.mark.parametrize("kind", ["contraction", "boosting", "estimator", "certification"])
    def test_hard_median_is_zero(self, kind):
        """Test experiments on the hard distribution center at the all-zeros median"""
        experiment = EXPERIMENTS[kind](small_config(kind), log_dir=self.temp_dir)
        experiment.setup_logging()
        try:
            experiment.setup()
        finally:
            experiment.close_logging()
        assert len(experiment.hard_median) == 16
        assert not experiment.hard_median.coords.any()
        assert experiment.hard_params_at(1.0).p == 5

    def test_theory_values_recorded(self):
        """Test reports carry theory constants next to the overrides"""
        report = self.run("nonexpansion")
        assert report.params["theory"]["L"] == 2
        assert report.params["theory"]["K"] == 710
        assert report.params["L"] == 3

    def test_missing_overrides_fail_fast(self):
        """Test theory parameters that overflow are reported before any trial"""
        config = small_config("nonexpansion", L=None, K=None, k=None)
        with pytest.raises(ParameterError):
            run_experiment(config, log_dir=self.temp_dir)


class TestBuildDataset:
    """Test cases for experiment dataset sources"""

    def setup_method(self):
        """Set up test environment"""
        self.temp_dir = tempfile.mkdtemp()

    def teardown_method(self):
        """Clean up test environment"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def test_file_source(self):
        """Test a dataset file takes precedence over generators"""
        path = os.path.join(self.temp_dir, "data.csv")
        save_dataset(Dataset([[1, 2], [3, 4]]), path)
        data = build_dataset(ExperimentConfig(dataset=path), SharedSeed.from_int(0))
        assert len(data) == 2

    def test_generators(self):
        """Test gaussian-grid parameters and the hard generator"""
        seed = SharedSeed.from_int(0)
        grid = build_dataset(ExperimentConfig(generator_params={"n": 7, "d": 3, "delta": 5}), seed)
        assert (len(grid), grid.dimension, grid.delta) == (7, 3, 5)
        hard = build_dataset(ExperimentConfig(generator="hard", n=3, hard_p=5, hard_c=4), seed)
        assert hard.dimension == 16

    def test_planted_is_not_a_plain_dataset(self):
        """Test the planted generator is reserved for the near-neighbor benchmark"""
        with pytest.raises(ConfigError):
            build_dataset(ExperimentConfig(generator="planted"), SharedSeed.from_int(0))


CONFIG_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..", "configs")

# trials per shipped config; rate gates with thin margins keep the full count
GATE_TRIALS = {
    "oracle": 2000,
    "nonexpansion": 2000,
    "contraction": 2000,
    "boosting": 200,
    "estimator": 1000,
    "ann": 100,
    "certification": 10000,
    "hard": 2000,
}


class TestShippedConfigs:
    """Test cases for the configs under configs/"""

    def setup_method(self):
        """Set up test environment"""
        self.temp_dir = tempfile.mkdtemp()

    def teardown_method(self):
        """Clean up test environment"""
        shutil.rmtree(self.temp_dir, ignore_errors=True)

    def load(self, kind):
        return ExperimentConfig.from_json_file(os.path.join(CONFIG_DIR, f"{kind}.json"))

    @pytest.mark.parametrize("kind", sorted(KINDS))
    def test_every_kind_has_a_config(self, kind):
        """Test each shipped config loads and names its kind"""
        config = self.load(kind)
        assert config.experiment == kind
        assert config.k == 32

    @pytest.mark.parametrize("kind", ["nonexpansion", "contraction", "boosting", "oracle",
                                      "estimator", "certification", "hard"])
    def test_default_config_sets_up(self, kind):
        """Test the defaults derive usable sketch parameters"""
        experiment = EXPERIMENTS[kind](ExperimentConfig(experiment=kind, seed=SEED, workers=1),
                                       log_dir=self.temp_dir)
        experiment.setup_logging()
        try:
            experiment.setup()
        finally:
            experiment.close_logging()

    @pytest.mark.slow
    @pytest.mark.parametrize("kind", sorted(KINDS))
    def test_gates_pass(self, kind):
        """Test every acceptance gate at the shipped config"""
        config = self.load(kind).with_updates(trials=GATE_TRIALS[kind], seed=SEED)
        report = run_experiment(config, log_dir=self.temp_dir)
        failed = {g.name: (g.value, g.comparison, g.threshold) for g in report.gates if not g.passed}
        assert report.trials_failed == 0
        assert not failed
