"""
Utility functions for lpsketch
"""

import json
import math
import os
from typing import Any, Dict, Optional, Tuple

import psutil

from .errors import ConfigError

WORKERS_ENV = "LPSKETCH_WORKERS"

# two-sided 95% normal quantile
Z_95 = 1.959963984540054


def wilson_interval(successes: int, trials: int, z: float = Z_95) -> Tuple[float, float]:
    """
    Wilson score interval for a binomial proportion.

    Args:
        successes: Number of positive outcomes
        trials: Number of trials (0 gives the uninformative interval)
        z: Normal quantile of the confidence level

    Returns:
        (low, high), both within [0, 1]
    """
    if trials <= 0:
        return 0.0, 1.0
    phat = successes / trials
    z2 = z * z
    denom = 1 + z2 / trials
    center = (phat + z2 / (2 * trials)) / denom
    half = z * math.sqrt(phat * (1 - phat) / trials + z2 / (4 * trials * trials)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def standard_error(values) -> float:
    """Standard error of the mean; 0 for fewer than two values"""
    n = len(values)
    if n < 2:
        return 0.0
    mean = math.fsum(values) / n
    var = math.fsum((v - mean) ** 2 for v in values) / (n - 1)
    return math.sqrt(var / n)


def parse_json_params(params_str: str) -> Dict[str, Any]:
    """
    Parse a JSON object given on the command line.

    Raises:
        ConfigError: If the text is not a JSON object
    """
    if not params_str:
        return {}
    try:
        value = json.loads(params_str)
    except json.JSONDecodeError as e:
        raise ConfigError(f"Invalid JSON in parameters: {e}")
    if not isinstance(value, dict):
        raise ConfigError("Parameters must be a JSON object")
    return value


def resolve_workers(value: Optional[str] = None) -> int:
    """
    Parallelism degree from an explicit value or LPSKETCH_WORKERS.

    "auto" means the number of physical cores; unset means 1.
    """
    raw = value if value is not None else os.environ.get(WORKERS_ENV)
    if raw is None or str(raw).strip() == "":
        return 1
    raw = str(raw).strip().lower()
    if raw == "auto":
        return max(1, psutil.cpu_count(logical=False) or psutil.cpu_count() or 1)
    try:
        workers = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be a positive integer or 'auto', got {raw!r}")
    if workers < 1:
        raise ConfigError(f"{WORKERS_ENV} must be >= 1, got {workers}")
    return workers


def process_snapshot() -> Dict[str, Any]:
    """RSS and CPU time of the current process"""
    proc = psutil.Process(os.getpid())
    mem = proc.memory_info()
    cpu = proc.cpu_times()
    return {
        "pid": proc.pid,
        "rss_bytes": mem.rss,
        "cpu_user_seconds": cpu.user,
        "cpu_system_seconds": cpu.system,
    }


def get_experiment_status(experiment_id: str, stats_dir: str) -> Dict[str, Any]:
    """
    Get experiment progress from its JSON status file.

    Returns:
        Status dictionary or empty dict if not found
    """
    json_file = os.path.join(stats_dir, f"{experiment_id}.json")
    try:
        if os.path.exists(json_file):
            with open(json_file, "r") as f:
                return json.load(f)
    except (OSError, json.JSONDecodeError):
        pass
    return {}


def is_experiment_running(experiment_id: str, stats_dir: str) -> bool:
    """Check the PID file written while an experiment runs"""
    pid_file = os.path.join(stats_dir, f"{experiment_id}.pid")
    if not os.path.exists(pid_file):
        return False
    try:
        with open(pid_file, "r") as f:
            pid = int(f.read().strip())
        return psutil.pid_exists(pid)
    except (ValueError, FileNotFoundError, PermissionError):
        return False


def format_duration(seconds: float) -> str:
    """
    Format duration in seconds to human-readable string.

    Returns:
        Formatted string like "1h 23m 45s"
    """
    if seconds < 60:
        return f"{seconds:.1f}s"
    elif seconds < 3600:
        minutes = int(seconds // 60)
        secs = seconds % 60
        return f"{minutes}m {secs:.0f}s"
    else:
        hours = int(seconds // 3600)
        minutes = int((seconds % 3600) // 60)
        secs = seconds % 60
        return f"{hours}h {minutes}m {secs:.0f}s"
