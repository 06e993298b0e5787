'''Logging setup and key=value record formatting.'''
import logging
import os

LOG_FORMAT = '%(asctime)s,%(msecs)d %(levelname)s %(name)s %(message)s'
DATE_FORMAT = '%H:%M:%S'


def init_logging(level: int | str = logging.INFO, log_file: str | None = None) -> None:
    """Configures the root logger with a stream handler and an optional file handler.

    Calling it again replaces the previous handlers, so the CLI can redirect
    logs into a run directory once that directory is known.
    """
    if isinstance(level, str):
        name = level
        level = logging.getLevelName(name.upper())
        if not isinstance(level, int):
            raise ValueError(f"unknown log level {name!r}")
    handlers: list[logging.Handler] = [logging.StreamHandler()]
    if log_file is not None:
        os.makedirs(os.path.dirname(os.path.abspath(log_file)), exist_ok=True)
        handlers.append(logging.FileHandler(log_file, mode='a'))
    for handler in handlers:
        handler.setLevel(level)
    # root admits INFO for the run.log handler; console filtering is per handler
    logging.basicConfig(format=LOG_FORMAT, datefmt=DATE_FORMAT, level=min(level, logging.INFO),
                        handlers=handlers, force=True)


def kv(**fields) -> str:
    """Formats fields as a single `key=value` line; floats keep 6 significant digits."""
    parts = []
    for key, value in fields.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        parts.append(f"{key}={value}")
    return " ".join(parts)
