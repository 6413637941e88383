"""Logging setup, run tracking and error capture"""

import functools
import json
import sys
import time
import traceback
from contextlib import contextmanager
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterator, Optional

from loguru import logger

LOG_FORMAT = "<green>{time:HH:mm:ss}</green> | <level>{level: <8}</level> | <cyan>{name}</cyan> - <level>{message}</level>"


def configure_logging(level: str = "INFO", log_dir: Optional[Path] = None) -> None:
    """Install a stderr sink and, when log_dir is given, a daily-rotated file sink"""
    logger.remove()
    logger.add(sys.stderr, level=level.upper(), format=LOG_FORMAT)
    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        logger.add(
            log_dir / "regimebound_{time:YYYYMMDD}.log",
            level="DEBUG",
            rotation="00:00",
            retention="14 days",
            enqueue=True,
        )


class RunTracker:
    """Per-operation counters and timings; performance records go to performance.jsonl"""

    def __init__(self, log_dir: Optional[Path] = None):
        self.log_dir = Path(log_dir) if log_dir is not None else None
        if self.log_dir is not None:
            self.log_dir.mkdir(parents=True, exist_ok=True)
        self.operation_stats: Dict[str, Dict[str, float]] = {}
        self.errors: list = []

    def log_error(self, error: Exception, context: Optional[Dict[str, Any]] = None) -> None:
        """Log an error with context information"""
        error_data = {
            "timestamp": datetime.now().isoformat(),
            "error_type": type(error).__name__,
            "error_message": str(error),
            "traceback": traceback.format_exc(),
            "context": context or {},
        }
        self.errors.append(error_data)
        logger.error(f"{error_data['error_type']}: {error_data['error_message']} ({error_data['context']})")

    def log_performance(self, operation: str, duration: float, metadata: Optional[Dict] = None) -> None:
        stats = self.operation_stats.setdefault(operation, {"calls": 0, "total_seconds": 0.0, "max_seconds": 0.0})
        stats["calls"] += 1
        stats["total_seconds"] += duration
        stats["max_seconds"] = max(stats["max_seconds"], duration)
        logger.info(f"Performance: {operation} took {duration:.2f}s")

        if self.log_dir is None:
            return
        record = {
            "timestamp": datetime.now().isoformat(),
            "operation": operation,
            "duration_seconds": duration,
            "metadata": metadata or {},
        }
        with open(self.log_dir / "performance.jsonl", "a") as f:
            f.write(json.dumps(record) + "\n")

    @contextmanager
    def timed(self, operation: str, **metadata) -> Iterator[None]:
        started = time.perf_counter()
        try:
            yield
        finally:
            self.log_performance(operation, time.perf_counter() - started, metadata)

    def get_performance_stats(self) -> Dict[str, Dict[str, float]]:
        return {name: dict(stats) for name, stats in self.operation_stats.items()}

    def health_check(self) -> Dict[str, Any]:
        return {
            "timestamp": datetime.now().isoformat(),
            "status": "degraded" if self.errors else "healthy",
            "log_directory": str(self.log_dir) if self.log_dir else None,
            "operations": len(self.operation_stats),
            "errors": len(self.errors),
        }


# Global tracker, replaced by the CLI once the log directory is known
run_tracker = RunTracker()


def set_tracker(tracker: RunTracker) -> RunTracker:
    global run_tracker
    run_tracker = tracker
    return tracker


def track_errors(func):
    """Decorator to record exceptions on the active tracker before re-raising"""

    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except Exception as e:
            run_tracker.log_error(e, {"function": func.__name__})
            raise

    return wrapper
