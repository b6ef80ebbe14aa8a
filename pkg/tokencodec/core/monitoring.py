from datetime import datetime, timezone
UTC = timezone.utc
from typing import Dict, List, Optional, Any, Iterator, Sequence
import csv
import time
import threading
from collections import defaultdict, deque
from contextlib import contextmanager
from pathlib import Path
from functools import wraps
from .logging import get_logger

logger = get_logger(__name__)

TRAIN_CSV_FIELDS: Sequence[str] = (
    "step", "side", "lr", "quantizer", "mel", "adv", "feat", "disc", "total", "utilization"
)

class MetricsCollector:
    """In-memory metric history with an optional CSV sink."""

    def __init__(self, max_history: int = 1000):
        self.max_history = max_history
        self._metrics: Dict[str, deque] = defaultdict(
            lambda: deque(maxlen=max_history)
        )
        self._metrics_lock = threading.Lock()
        self._csv_file = None
        self._csv_writer: Optional[csv.DictWriter] = None
        self.csv_path: Optional[Path] = None

    def record_metric(
        self,
        metric_name: str,
        value: Any,
        tags: Optional[Dict[str, str]] = None
    ) -> None:
        """Record a metric value.

        Args:
            metric_name: Name of the metric
            value: Metric value
            tags: Optional tags for the metric
        """
        metric_data = {
            "timestamp": datetime.now(UTC).isoformat(),
            "value": value,
            "tags": tags or {}
        }

        with self._metrics_lock:
            self._metrics[metric_name].append(metric_data)

    def get_metrics(
        self,
        metric_name: str,
        tags: Optional[Dict[str, str]] = None
    ) -> List[Dict[str, Any]]:
        """Get recorded values for a metric, optionally filtered by tags."""
        with self._metrics_lock:
            metrics = list(self._metrics[metric_name])

        if tags:
            metrics = [
                m for m in metrics
                if all(m["tags"].get(k) == v for k, v in tags.items())
            ]

        return metrics

    def mean(self, metric_name: str, tags: Optional[Dict[str, str]] = None) -> Optional[float]:
        values = [m["value"] for m in self.get_metrics(metric_name, tags)]
        if not values:
            return None
        return sum(values) / len(values)

    def open_csv(self, path: Path, fieldnames: Sequence[str] = TRAIN_CSV_FIELDS, append: bool = False) -> None:
        """Attach a CSV sink. Rows are flushed as they are written.

        Args:
            path: Destination file
            fieldnames: Column order
            append: Continue an existing file (resume) instead of truncating
        """
        self.close()
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        write_header = not (append and path.exists() and path.stat().st_size > 0)
        self._csv_file = open(path, "a" if append else "w", newline="")
        self._csv_writer = csv.DictWriter(self._csv_file, fieldnames=list(fieldnames), extrasaction="ignore")
        if write_header:
            self._csv_writer.writeheader()
        self.csv_path = path
        logger.info(f"Writing metrics to {path}")

    def write_row(self, row: Dict[str, Any]) -> None:
        """Write one CSV row and record each numeric column as a metric."""
        tags = {"side": str(row["side"])} if "side" in row else None
        for key, value in row.items():
            if key not in ("step", "side") and isinstance(value, (int, float)):
                self.record_metric(key, value, tags)

        if self._csv_writer is None:
            return
        with self._metrics_lock:
            self._csv_writer.writerow({k: ("" if v is None else v) for k, v in row.items()})
            self._csv_file.flush()

    def close(self) -> None:
        if self._csv_file is not None:
            self._csv_file.close()
        self._csv_file = None
        self._csv_writer = None

class PerformanceMonitor:
    """Timing helpers for execution time and real-time factor."""

    def __init__(self, metrics_collector: Optional[MetricsCollector] = None):
        self.metrics_collector = metrics_collector or MetricsCollector()

    def track_execution_time(
        self,
        operation_name: str,
        tags: Optional[Dict[str, str]] = None
    ):
        """Decorator to track operation execution time.

        Args:
            operation_name: Name of the operation
            tags: Optional tags for the metric
        """
        def decorator(func):
            @wraps(func)
            def wrapper(*args, **kwargs):
                start_time = time.perf_counter()
                try:
                    result = func(*args, **kwargs)
                    self.metrics_collector.record_metric(
                        f"{operation_name}_execution_time",
                        time.perf_counter() - start_time,
                        tags
                    )
                    return result
                except Exception as e:
                    self.metrics_collector.record_metric(
                        f"{operation_name}_error",
                        {
                            "error_type": type(e).__name__,
                            "execution_time": time.perf_counter() - start_time
                        },
                        tags
                    )
                    raise
            return wrapper
        return decorator

    @contextmanager
    def real_time_factor(self, operation_name: str, audio_seconds: float) -> Iterator[Dict[str, float]]:
        """Measure wall time of a block relative to the audio it processed.

        The yielded dict is filled with ``elapsed`` and ``rtf`` on exit; an RTF
        below 1 means faster than real time.

        Args:
            operation_name: Metric name prefix
            audio_seconds: Duration of the processed audio
        """
        result: Dict[str, float] = {}
        start_time = time.perf_counter()
        try:
            yield result
        finally:
            elapsed = time.perf_counter() - start_time
            result["elapsed"] = elapsed
            result["rtf"] = elapsed / audio_seconds if audio_seconds > 0 else float("inf")
            self.metrics_collector.record_metric(f"{operation_name}_rtf", result["rtf"])
            logger.info(
                f"{operation_name}: {audio_seconds:.2f}s of audio in {elapsed:.3f}s (RTF {result['rtf']:.4f})"
            )
