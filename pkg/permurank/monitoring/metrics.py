"""Wall-clock timers for training epochs and CLI commands."""

import json
import logging
import time
from collections.abc import Callable
from functools import wraps
from pathlib import Path
from typing import Any, ParamSpec, TypeVar

log = logging.getLogger(__name__)

P = ParamSpec("P")
R = TypeVar("R")


class PerformanceMetrics:
    """Collects operation timings and per-epoch training durations."""

    def __init__(self) -> None:
        self.timings: dict[str, list[float]] = {}
        self.epochs: dict[str, list[float]] = {}
        self.start_times: dict[str, float] = {}

    def start_timer(self, operation_name: str) -> None:
        """Start timing an operation; restarting an open timer resets it."""
        self.start_times[operation_name] = time.perf_counter()

    def stop_timer(self, operation_name: str) -> float:
        """Stop timing an operation and record the duration.

        Args:
            operation_name: Name passed to start_timer.

        Returns:
            float: Duration in seconds, or 0.0 when the timer was never started.

        """
        started = self.start_times.pop(operation_name, None)
        if started is None:
            _msg = f"PerformanceMetrics.stop_timer: no start time for {operation_name}"
            log.warning(_msg)
            return 0.0
        duration = time.perf_counter() - started
        self.timings.setdefault(operation_name, []).append(duration)
        return duration

    def record_epoch(self, trainer: str, duration: float) -> None:
        """Record the duration of one training epoch."""
        self.epochs.setdefault(trainer, []).append(duration)

    def get_metrics_summary(self) -> dict[str, Any]:
        """Count, total, mean, min and max per timed operation, plus epoch totals per trainer."""
        summary: dict[str, Any] = {"operation_timings": {}, "training_epochs": {}}
        for operation, values in self.timings.items():
            summary["operation_timings"][operation] = {
                "count": len(values),
                "total_time": sum(values),
                "average_time": sum(values) / len(values),
                "min_time": min(values),
                "max_time": max(values),
            }
        for trainer, values in self.epochs.items():
            summary["training_epochs"][trainer] = {"epochs": len(values), "total_time": sum(values)}
        return summary

    def reset_metrics(self) -> None:
        """Forget every recorded timing and open timer."""
        self.timings = {}
        self.epochs = {}
        self.start_times = {}

    def save_metrics(self, filepath: Path | str) -> None:
        """Write the summary as JSON."""
        _msg = f"PerformanceMetrics.save_metrics starting to {filepath}"
        log.debug(_msg)

        Path(filepath).write_text(json.dumps(self.get_metrics_summary(), indent=2))


def timing_decorator(metrics: "PerformanceMetrics", metric_name: str | None = None) -> Callable[[Callable[P, R]], Callable[P, R]]:
    """Time every call of the decorated function into `metrics`."""

    def decorator(func: Callable[P, R]) -> Callable[P, R]:
        name = metric_name or func.__name__

        @wraps(func)
        def wrapper(*args: P.args, **kwargs: P.kwargs) -> R:
            metrics.start_timer(name)
            try:
                return func(*args, **kwargs)
            finally:
                metrics.stop_timer(name)

        return wrapper

    return decorator


global_metrics = PerformanceMetrics()
