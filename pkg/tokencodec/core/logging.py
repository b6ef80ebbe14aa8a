import logging
import logging.handlers
import sys
import time
from datetime import datetime, timezone
UTC = timezone.utc
from pathlib import Path
from typing import Any, Dict, Optional, Tuple
from functools import wraps
from pythonjsonlogger.json import JsonFormatter
from .config import get_settings

class JSONFormatter(JsonFormatter):
    """JSON formatter that flattens adapter context into the record."""

    def __init__(self, **extras: Any):
        super().__init__(static_fields=extras)

    def add_fields(
        self,
        log_record: Dict[str, Any],
        record: logging.LogRecord,
        message_dict: Dict[str, Any]
    ) -> None:
        super().add_fields(log_record, record, message_dict)
        log_record["timestamp"] = datetime.now(UTC).isoformat()
        log_record["level"] = record.levelname
        log_record["logger"] = record.name
        log_record["module"] = record.module
        log_record["function"] = record.funcName
        log_record["line"] = record.lineno

        context = log_record.pop("context", None)
        if isinstance(context, dict):
            log_record.update(context)

class StandardFormatter(logging.Formatter):
    """Standard formatter for human-readable logs."""

    def __init__(self):
        super().__init__(
            fmt="%(asctime)s - %(name)s - %(levelname)s - %(context)s%(message)s",
            datefmt="%Y-%m-%d %H:%M:%S"
        )

    def format(self, record: logging.LogRecord) -> str:
        """Format log record with context.

        Args:
            record: Log record to format

        Returns:
            str: Formatted log message
        """
        context = getattr(record, "context", None)
        if isinstance(context, dict):
            context_str = " ".join(f"{k}={v}" for k, v in context.items())
            record.context = f"[{context_str}] " if context_str else ""
        elif context is None:
            record.context = ""
        else:
            record.context = str(context)

        return super().format(record)

def setup_logging(
    app_name: Optional[str] = None,
    log_level: Optional[str] = None,
    log_format: Optional[str] = None,
    logs_dir: Optional[Path] = None,
    to_files: bool = True
) -> None:
    """Set up process logging.

    Called once by the command line entry point; library code only asks for
    loggers.

    Args:
        app_name: Name used for log file names
        log_level: Logging level (DEBUG, INFO, etc.)
        log_format: Log format (standard or json)
        logs_dir: Directory for rotating log files
        to_files: Attach rotating file handlers in addition to stdout
    """
    settings = get_settings()
    app_name = app_name or settings.APP_NAME
    log_level = log_level or settings.LOG_LEVEL
    log_format = log_format or settings.LOG_FORMAT
    logs_dir = Path(logs_dir or settings.LOGS_DIR)

    numeric_level = getattr(logging, log_level.upper(), logging.INFO)

    root_logger = logging.getLogger()
    root_logger.setLevel(numeric_level)
    root_logger.handlers.clear()

    if log_format == "json":
        formatter: logging.Formatter = JSONFormatter(app_name=app_name, environment=settings.APP_ENV)
    else:
        formatter = StandardFormatter()

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setFormatter(formatter)
    root_logger.addHandler(console_handler)

    if not to_files:
        return

    logs_dir.mkdir(parents=True, exist_ok=True)
    stem = app_name.lower().replace(" ", "_")

    file_handler = logging.handlers.RotatingFileHandler(
        logs_dir / f"{stem}.log",
        maxBytes=10 * 1024 * 1024,  # 10MB
        backupCount=5
    )
    file_handler.setFormatter(formatter)
    root_logger.addHandler(file_handler)

    error_handler = logging.handlers.RotatingFileHandler(
        logs_dir / f"{stem}_error.log",
        maxBytes=10 * 1024 * 1024,  # 10MB
        backupCount=5
    )
    error_handler.setLevel(logging.ERROR)
    error_handler.setFormatter(formatter)
    root_logger.addHandler(error_handler)

class LoggerAdapter(logging.LoggerAdapter):
    """Logger adapter that attaches fixed context (run, step, component) to records."""

    def process(self, msg: str, kwargs: Dict[str, Any]) -> Tuple[str, Dict[str, Any]]:
        kwargs.setdefault("extra", {})
        kwargs["extra"]["context"] = self.extra
        return msg, kwargs

    def bind(self, **kwargs: Any) -> "LoggerAdapter":
        """Return a new adapter with additional context."""
        return LoggerAdapter(self.logger, {**self.extra, **kwargs})

def get_logger(name: str, **kwargs) -> LoggerAdapter:
    """Get a logger with context.

    Args:
        name: Logger name
        **kwargs: Additional context

    Returns:
        LoggerAdapter: Configured logger
    """
    logger = logging.getLogger(name)
    return LoggerAdapter(logger, kwargs)

def log_execution_time(logger: Optional[logging.LoggerAdapter] = None):
    """Decorator to log function execution time.

    Args:
        logger: Logger to use (if None, creates a new one)
    """
    def decorator(func):
        nonlocal logger
        if logger is None:
            logger = get_logger(func.__module__)

        @wraps(func)
        def wrapper(*args, **kwargs):
            start_time = time.perf_counter()
            try:
                result = func(*args, **kwargs)
                execution_time = time.perf_counter() - start_time
                logger.info(
                    f"Function '{func.__name__}' executed in {execution_time:.2f} seconds",
                    extra={"execution_time": execution_time}
                )
                return result
            except Exception as e:
                execution_time = time.perf_counter() - start_time
                logger.error(
                    f"Function '{func.__name__}' failed after {execution_time:.2f} seconds",
                    exc_info=True,
                    extra={
                        "execution_time": execution_time,
                        "error_type": type(e).__name__
                    }
                )
                raise
        return wrapper
    return decorator
