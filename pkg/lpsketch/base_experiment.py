"""
Base class for Monte-Carlo experiments
"""

import os
import sys
import json
import time
import signal
import logging
from abc import ABC, abstractmethod
from concurrent.futures import ProcessPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from logging.handlers import RotatingFileHandler
from typing import Any, Dict, List, Optional, Tuple

from .config import ExperimentConfig
from .monitoring import FileMonitoring, MonitoringBackend, NullMonitoring
from .utils import process_snapshot, resolve_workers

COMPARISONS = {
    "<=": lambda value, threshold: value <= threshold,
    "<": lambda value, threshold: value < threshold,
    ">=": lambda value, threshold: value >= threshold,
    ">": lambda value, threshold: value > threshold,
    "==": lambda value, threshold: value == threshold,
}

# trials handed to a worker process at a time
CHUNK = 64

LOG_MAX_BYTES = 10 * 2 ** 20
LOG_BACKUPS = 5
SEED_PREFIX = 8
LOG_FORMAT = "%(asctime)s %(levelname)-7s [%(kind)s %(seed_prefix)s] %(message)s"
CONSOLE_FORMAT = "%(asctime)s [%(kind)s] %(message)s"


@dataclass(frozen=True)
class Gate:
    """One acceptance check: `value <comparison> threshold`"""

    name: str
    value: float
    threshold: float
    comparison: str

    @property
    def passed(self) -> bool:
        return bool(COMPARISONS[self.comparison](self.value, self.threshold))

    def as_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "comparison": self.comparison,
            "threshold": self.threshold,
            "passed": self.passed,
        }


@dataclass
class Report:
    experiment: str
    seed: str
    params: Dict[str, Any]
    aggregates: Dict[str, Any]
    gates: List[Gate]
    records: List[Dict[str, Any]]
    trials_failed: int = 0
    complete: bool = True
    timing: Dict[str, Any] = field(default_factory=dict)
    process: Dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.complete and self.trials_failed == 0 and all(g.passed for g in self.gates)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "experiment": self.experiment,
            "seed": self.seed,
            "params": self.params,
            "aggregates": self.aggregates,
            "gates": {g.name: g.as_dict() for g in self.gates},
            "passed": self.passed,
            "records": self.records,
            "timing": self.timing,
            "process": self.process,
        }


def write_report(report: Report, path: str) -> None:
    """Write a report as JSON; everything before `timing` is deterministic"""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_dict(), f, indent=2, default=str)
        f.write("\n")


class _RunContext(logging.Filter):
    """Stamps records with the experiment kind and seed prefix"""

    def __init__(self, kind: str, seed_prefix: str):
        super().__init__()
        self.kind = kind
        self.seed_prefix = seed_prefix

    def filter(self, record: logging.LogRecord) -> bool:
        record.kind = self.kind
        record.seed_prefix = self.seed_prefix
        return True


def _run_chunk(experiment: "BaseExperiment",
               indices: List[int]) -> List[Tuple[int, Optional[Dict[str, Any]], Optional[str]]]:
    results = []
    for index in indices:
        try:
            results.append((index, experiment.trial(index), None))
        except Exception as e:
            results.append((index, None, f"{type(e).__name__}: {e}"))
    return results


class BaseExperiment(ABC):
    """
    Base class for experiments.

    Subclasses prepare shared state in setup(), compute one independent
    trial per index in trial() and reduce the records to aggregates and
    gates in summarize(). A trial that raises is logged and counted as
    failed; any failed trial fails the report.
    """

    kind: str = ""
    # trials may run in worker processes (the experiment is pickled)
    parallel_safe: bool = True

    def __init__(self,
                 config: ExperimentConfig,
                 experiment_id: Optional[str] = None,
                 log_dir: Optional[str] = None,
                 stats_dir: Optional[str] = None,
                 monitoring: Optional[MonitoringBackend] = None,
                 verbose: bool = False):
        """
        Args:
            config: Resolved configuration (with a seed)
            experiment_id: Name of log, status and PID files (default: kind and seed prefix)
            log_dir: Directory for log files (default: current directory)
            stats_dir: Directory for status files (default: same as log_dir)
            monitoring: Custom monitoring backend (default: FileMonitoring)
            verbose: Log at DEBUG level
        """
        self.config = config.resolved()
        self.seed = self.config.shared_seed()
        self.experiment_id = experiment_id or f"{self.kind}-{self.seed.hex()[:8]}"
        self.log_dir = log_dir or os.getcwd()
        self.stats_dir = stats_dir or self.log_dir
        self.verbose = verbose
        self.workers = self.config.workers or resolve_workers()

        os.makedirs(self.log_dir, exist_ok=True)
        os.makedirs(self.stats_dir, exist_ok=True)

        self.monitoring = monitoring or FileMonitoring(self.stats_dir)

        self.stats = {
            'experiment_id': self.experiment_id,
            'kind': self.kind,
            'status': 'initializing',
            'trials': self.config.trials,
            'trials_done': 0,
            'trials_failed': 0,
            'start_time': None,
            'elapsed': 0.0,
        }
        self.stats_dict: Dict[str, Dict[str, float]] = {}

        self.logger: Optional[logging.Logger] = None
        self._shutdown_requested = False
        self._previous_handlers: Dict[int, Any] = {}

    def __getstate__(self):
        state = self.__dict__.copy()
        state['logger'] = None
        state['monitoring'] = NullMonitoring()
        state['_previous_handlers'] = {}
        return state

    def setup_logging(self):
        """
        Log to `{experiment_id}.log` (rotated) and to stdout.

        Every line carries the experiment kind and the seed prefix.
        """
        log_file = os.path.join(self.log_dir, f"{self.experiment_id}.log")
        context = _RunContext(self.kind, self.seed.hex()[:SEED_PREFIX])

        self.logger = logging.getLogger(f"lpsketch.run.{self.experiment_id}")
        self.logger.setLevel(logging.DEBUG if self.verbose else logging.INFO)
        self.logger.handlers.clear()
        self.logger.propagate = False

        log_handler = RotatingFileHandler(log_file, maxBytes=LOG_MAX_BYTES, backupCount=LOG_BACKUPS,
                                          encoding='utf-8')
        log_handler.setFormatter(logging.Formatter(LOG_FORMAT, datefmt='%Y-%m-%dT%H:%M:%S'))
        console = logging.StreamHandler(sys.stdout)
        console.setFormatter(logging.Formatter(CONSOLE_FORMAT, datefmt='%H:%M:%S'))
        for handler in (log_handler, console):
            handler.addFilter(context)
            self.logger.addHandler(handler)

        self.logger.info(f"{self.kind} run {self.experiment_id}: seed {self.config.seed}, "
                         f"{self.config.trials} trials, {self.workers} worker(s); log {log_file}")

    def close_logging(self):
        if self.logger is None:
            return
        for handler in list(self.logger.handlers):
            handler.close()
            self.logger.removeHandler(handler)

    def setup_signal_handlers(self):
        """Stop after the current trial on SIGINT/SIGTERM"""
        def signal_handler(signum, _):
            self.logger.info(f"Received signal {signum}. Stopping after the current trial...")
            self._shutdown_requested = True

        for signum in (signal.SIGINT, signal.SIGTERM):
            try:
                self._previous_handlers[signum] = signal.signal(signum, signal_handler)
            except ValueError:
                # not the main thread
                pass

    def restore_signal_handlers(self):
        for signum, handler in self._previous_handlers.items():
            signal.signal(signum, handler)
        self._previous_handlers.clear()

    def write_pid_file(self):
        pid_file = os.path.join(self.stats_dir, f"{self.experiment_id}.pid")
        try:
            with open(pid_file, 'w') as f:
                f.write(str(os.getpid()))
            self.logger.debug(f"PID file written: {pid_file}")
        except OSError as e:
            self.logger.error(f"Error writing PID file: {e}")

    def remove_pid_file(self):
        pid_file = os.path.join(self.stats_dir, f"{self.experiment_id}.pid")
        try:
            if os.path.exists(pid_file):
                os.unlink(pid_file)
                self.logger.debug(f"PID file removed: {pid_file}")
        except OSError as e:
            self.logger.error(f"Error removing PID file: {e}")

    @contextmanager
    def track_operation(self, operation_name: str):
        """
        Time a named operation; only successful runs are counted.

        Usage:
            with self.track_operation('build_dataset'):
                ...
        """
        if operation_name not in self.stats_dict:
            self.stats_dict[operation_name] = {'count': 0, 'total_duration': 0.0}

        start_time = time.perf_counter()
        try:
            yield
        except Exception as e:
            if self.logger is not None:
                self.logger.error(f"Error in operation {operation_name}: {e}", exc_info=True)
            raise
        op_stats = self.stats_dict[operation_name]
        op_stats['count'] += 1
        op_stats['total_duration'] += time.perf_counter() - start_time

    def get_status_dict(self) -> Dict[str, Any]:
        status = self.stats.copy()
        status['operations'] = {k: dict(v) for k, v in self.stats_dict.items()}
        status['rss_bytes'] = process_snapshot()['rss_bytes']
        status['timestamp'] = time.time()
        return status

    def _report_progress(self, started: float):
        self.stats['elapsed'] = time.time() - started
        self.monitoring.report_status(self.experiment_id, self.get_status_dict())

    def _trial_loop(self, started: float) -> Tuple[List[Dict[str, Any]], int]:
        trials = self.config.trials
        records: Dict[int, Dict[str, Any]] = {}
        failed = 0
        every = max(1, trials // 20)

        def absorb(index, record, error):
            nonlocal failed
            if error is not None:
                failed += 1
                self.logger.error(f"Trial {index} failed: {error}")
            else:
                record = dict(record)
                record['trial'] = index
                records[index] = record
            self.stats['trials_done'] = len(records) + failed
            self.stats['trials_failed'] = failed
            if self.stats['trials_done'] % every == 0:
                self._report_progress(started)

        if self.workers > 1 and self.parallel_safe and trials > 1:
            self.logger.info(f"Running {trials} trials on {self.workers} worker processes")
            chunks = [list(range(s, min(trials, s + CHUNK))) for s in range(0, trials, CHUNK)]
            with self.track_operation('trials_parallel'):
                with ProcessPoolExecutor(max_workers=self.workers) as pool:
                    for results in pool.map(_run_chunk, [self] * len(chunks), chunks):
                        for index, record, error in results:
                            absorb(index, record, error)
                        if self._shutdown_requested:
                            pool.shutdown(wait=False, cancel_futures=True)
                            break
        else:
            for index in range(trials):
                if self._shutdown_requested:
                    break
                try:
                    with self.track_operation('trial'):
                        record = self.trial(index)
                    absorb(index, record, None)
                except Exception as e:
                    absorb(index, None, f"{type(e).__name__}: {e}")

        return [records[i] for i in sorted(records)], failed

    def run(self) -> Report:
        """Set up, run every trial, summarize and return the report"""
        self.setup_logging()
        self.setup_signal_handlers()
        self.write_pid_file()

        started = time.time()
        self.stats['start_time'] = started
        try:
            self.stats['status'] = 'setup'
            with self.track_operation('setup'):
                self.setup()

            self.stats['status'] = 'running'
            self._report_progress(started)
            records, failed = self._trial_loop(started)
            complete = len(records) + failed == self.config.trials
            if not complete:
                self.logger.warning("Stopped early; the report is incomplete")

            with self.track_operation('summarize'):
                aggregates, gates = self.summarize(records)
            for gate in gates:
                self.logger.info(f"Gate {gate.name}: {gate.value:.6g} {gate.comparison} "
                                 f"{gate.threshold:.6g} -> {'pass' if gate.passed else 'FAIL'}")

            elapsed = time.time() - started
            report = Report(
                experiment=self.kind,
                seed=self.config.seed,
                params=self.resolved_params(),
                aggregates=aggregates,
                gates=gates,
                records=records,
                trials_failed=failed,
                complete=complete,
                timing={
                    'total_seconds': elapsed,
                    'workers': self.workers,
                    'operations': {k: dict(v) for k, v in self.stats_dict.items()},
                },
                process=process_snapshot(),
            )
            self.stats['status'] = 'passed' if report.passed else 'failed'
            return report
        finally:
            if self.stats['status'] not in ('passed', 'failed'):
                self.stats['status'] = 'error'
            self._report_progress(started)
            self.cleanup()
            self.remove_pid_file()
            self.restore_signal_handlers()
            self.logger.info(f"Experiment {self.experiment_id} finished: {self.stats['status']}")
            self.close_logging()

    def resolved_params(self) -> Dict[str, Any]:
        """Parameters recorded in the report; subclasses add derived values"""
        return self.config.as_dict()

    def setup(self):
        """Override to build datasets, medians and parameters"""
        pass

    def cleanup(self):
        pass

    @abstractmethod
    def trial(self, index: int) -> Dict[str, Any]:
        """One independent trial; must depend only on the config and index"""

    @abstractmethod
    def summarize(self, records: List[Dict[str, Any]]) -> Tuple[Dict[str, Any], List[Gate]]:
        """Aggregate rates and the gates they are checked against"""
