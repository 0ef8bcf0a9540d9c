"""
Progress reporting for running experiments
"""

import os
import json
import time
import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, List, Optional

from .utils import format_duration

logger = logging.getLogger(__name__)


def format_status(status: Dict[str, Any], running: Optional[bool] = None) -> List[str]:
    """Human-readable lines for a status dict, shared by `.stats` files and `lpsketch status`"""
    state = status.get('status', 'unknown')
    if running is not None:
        state = f"{state} ({'running' if running else 'stopped'})"
    lines = [
        f"Experiment: {status.get('experiment_id', 'unknown')}",
        f"Kind: {status.get('kind', 'unknown')}",
        f"Status: {state}",
        f"Trials: {status.get('trials_done', 0)}/{status.get('trials', 0)}"
        f" ({status.get('trials_failed', 0)} failed)",
    ]
    if status.get('elapsed'):
        lines.append(f"Elapsed: {format_duration(status['elapsed'])}")
    if status.get('rss_bytes'):
        lines.append(f"RSS: {status['rss_bytes'] / 2 ** 20:.1f} MB")

    operations = status.get('operations') or {}
    if operations:
        lines.append("Operations:")
        for name in sorted(operations):
            count = operations[name].get('count', 0)
            mean_ms = 1000 * operations[name].get('total_duration', 0) / max(1, count)
            lines.append(f"  {name}: {count} runs, {mean_ms:.1f} ms mean")

    if status.get('timestamp'):
        stamp = time.strftime('%Y-%m-%d %H:%M:%S', time.localtime(status['timestamp']))
        lines.append(f"Last Updated: {stamp}")
    return lines


class MonitoringBackend(ABC):
    """Where experiment progress goes"""

    @abstractmethod
    def report_status(self, experiment_id: str, status: Dict[str, Any]):
        pass

    @abstractmethod
    def get_status(self, experiment_id: str) -> Optional[Dict[str, Any]]:
        pass


class NullMonitoring(MonitoringBackend):
    """Discards progress; used inside trial worker processes"""

    def report_status(self, experiment_id: str, status: Dict[str, Any]):
        pass

    def get_status(self, experiment_id: str) -> Optional[Dict[str, Any]]:
        return None


class FileMonitoring(MonitoringBackend):
    """
    Writes `{experiment_id}.json` with the full status and a human-readable
    `{experiment_id}.stats` next to it. Both are replaced atomically, so
    `lpsketch status` never reads a half-written file.
    """

    def __init__(self, stats_dir: str):
        self.stats_dir = stats_dir
        os.makedirs(stats_dir, exist_ok=True)

    def _path(self, experiment_id: str, suffix: str) -> str:
        return os.path.join(self.stats_dir, f"{experiment_id}.{suffix}")

    def _replace(self, path: str, text: str):
        partial = f"{path}.tmp"
        with open(partial, 'w', encoding='utf-8') as f:
            f.write(text)
        os.replace(partial, path)

    def report_status(self, experiment_id: str, status: Dict[str, Any]):
        try:
            self._replace(self._path(experiment_id, 'stats'), "\n".join(format_status(status)) + "\n")
            self._replace(self._path(experiment_id, 'json'), json.dumps(status, indent=2, default=str))
        except OSError as e:
            # progress files are advisory; the experiment keeps running
            logger.warning("Error writing status files for %s: %s", experiment_id, e)

    def get_status(self, experiment_id: str) -> Optional[Dict[str, Any]]:
        path = self._path(experiment_id, 'json')
        if not os.path.exists(path):
            return None
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            logger.warning("Error reading status file for %s: %s", experiment_id, e)
            return None
