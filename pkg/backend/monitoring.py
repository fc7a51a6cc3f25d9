"""
Monitoring and Metrics Module for CoopFlat
Tracks phase timings of training runs and process resource usage
"""
import os
import time
import logging
import threading
from dataclasses import dataclass
from typing import Dict, Optional

import psutil

logger = logging.getLogger(__name__)


@dataclass
class PhaseStats:
    count: int = 0
    total_ms: float = 0.0
    min_ms: float = float('inf')
    max_ms: float = 0.0
    failures: int = 0

    def add(self, duration_ms: float, failed: bool) -> None:
        self.count += 1
        self.total_ms += duration_ms
        self.min_ms = min(self.min_ms, duration_ms)
        self.max_ms = max(self.max_ms, duration_ms)
        self.failures += int(failed)

    def as_dict(self) -> Dict[str, float]:
        return {
            "count": float(self.count),
            "mean_ms": self.total_ms / self.count,
            "min_ms": self.min_ms,
            "max_ms": self.max_ms,
            "failures": float(self.failures),
        }


class MetricsCollector:
    """Wall-clock statistics per named phase (warm-up, repeat, experiment, ...)"""

    def __init__(self):
        self._phases: Dict[str, PhaseStats] = {}
        self._lock = threading.Lock()

    def record(self, phase: str, duration_ms: float, failed: bool = False):
        with self._lock:
            self._phases.setdefault(phase, PhaseStats()).add(duration_ms, failed)

    def snapshot(self) -> Dict[str, Dict[str, float]]:
        with self._lock:
            return {phase: stats.as_dict() for phase, stats in self._phases.items()}

    def reset(self):
        with self._lock:
            self._phases.clear()


# Process-wide collector used by RunTimer unless another is passed
metrics_collector = MetricsCollector()


class RunTimer:
    """Context manager timing one phase; duration_ms is set on exit"""

    def __init__(self, phase: str, collector: Optional[MetricsCollector] = None):
        self.phase = phase
        self.collector = collector or metrics_collector
        self.duration_ms: Optional[float] = None
        self._started: Optional[float] = None

    def __enter__(self):
        self._started = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.duration_ms = (time.perf_counter() - self._started) * 1000.0
        self.collector.record(self.phase, self.duration_ms, failed=exc_type is not None)
        if exc_type:
            logger.warning(f"{self.phase} failed after {self.duration_ms:.1f} ms: {exc_val}")


def get_system_metrics() -> Dict[str, float]:
    """Process and host resource usage, as plain floats for the run summary"""
    process = psutil.Process(os.getpid())
    memory = psutil.virtual_memory()
    return {
        "rss_mb": process.memory_info().rss / (1024 ** 2),
        "cpu_percent": float(process.cpu_percent(interval=None)),
        "available_memory_gb": memory.available / (1024 ** 3),
        "memory_percent": float(memory.percent),
        "cpu_count": float(psutil.cpu_count() or 1),
    }
