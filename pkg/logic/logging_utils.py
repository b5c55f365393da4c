from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Dict, List

import coloredlogs

LOG_LEVEL_ENV = "VERTEXRISK_LOG_LEVEL"
DEFAULT_LOG_LEVEL = "WARNING"
LOG_FORMAT = "%(asctime)s %(hostname)s %(programname)s %(name)s[%(process)d] %(levelname)s %(message)s"
RUN_LOG_FORMAT = "%(levelname)s %(name)s %(message)s"


def configure_logging(level: str | int | None = None) -> int:
    """Install coloured stderr logging and return the effective level.

    ``level`` wins over the ``VERTEXRISK_LOG_LEVEL`` environment variable,
    which wins over WARNING, so a clean run prints nothing.
    """
    chosen = level if level is not None else os.environ.get(LOG_LEVEL_ENV, DEFAULT_LOG_LEVEL)
    numeric = logging.getLevelName(chosen.upper()) if isinstance(chosen, str) else int(chosen)
    if not isinstance(numeric, int):
        numeric = logging.WARNING

    coloredlogs.install(level=numeric, fmt=LOG_FORMAT, programname="vertexrisk")
    logging.getLogger().setLevel(numeric)
    return numeric


@dataclass
class RunLogFile:
    """Append-only log file of one run; the first write puts a header naming the run."""

    path: Path
    label: str
    started: datetime
    _lock: threading.Lock = field(default_factory=threading.Lock)
    _opened: bool = False

    @property
    def header(self) -> str:
        return f"# vertexrisk {self.label} started={self.started.isoformat(timespec='seconds')} pid={os.getpid()}\n"

    def log(self, message: str) -> None:
        timestamp = datetime.now().strftime("%Y-%m-%d %H:%M:%S.%f")[:-3]
        line = f"[{timestamp}] {message}\n"

        try:
            with self._lock:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with self.path.open("a", encoding="utf-8") as handle:
                    if not self._opened:
                        handle.write(self.header)
                        self._opened = True
                    handle.write(line)
        except OSError:
            return


class _RunLogHandler(logging.Handler):
    def __init__(self, target: RunLogFile) -> None:
        super().__init__()
        self.target = target
        self.setFormatter(logging.Formatter(RUN_LOG_FORMAT))

    def emit(self, record: logging.LogRecord) -> None:
        try:
            self.target.log(self.format(record))
        except Exception:  # pragma: no cover - logging must not raise
            self.handleError(record)


class RunLogManager:
    """Per-run log directories named ``{label}-{timestamp}`` under ``root``.

    Used when the configuration names a ``logging.log_dir``; command outputs
    never go here.
    """

    def __init__(self, root: Path | str, label: str) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

        self.label = label
        self.started = datetime.now()
        self.run_dir = self.root / f"{label}-{self.started.strftime('%Y%m%d-%H%M%S')}"
        self.run_dir.mkdir(parents=True, exist_ok=True)

        self._files: Dict[str, RunLogFile] = {}
        self._handlers: List[logging.Handler] = []
        self._previous_level: int | None = None

    def get_logger(self, filename: str) -> RunLogFile:
        if filename not in self._files:
            self._files[filename] = RunLogFile(self.run_dir / filename, self.label, self.started)
        return self._files[filename]

    def attach(self, filename: str = "run.log", level: int = logging.INFO) -> RunLogFile:
        """Mirror records at ``level`` and above into a run log file."""
        target = self.get_logger(filename)
        handler = _RunLogHandler(target)
        handler.setLevel(level)
        logging.getLogger().addHandler(handler)
        root = logging.getLogger()
        if root.level > level:
            if self._previous_level is None:
                self._previous_level = root.level
            root.setLevel(level)
        self._handlers.append(handler)
        return target

    def close(self) -> None:
        for handler in self._handlers:
            logging.getLogger().removeHandler(handler)
        self._handlers.clear()
        if self._previous_level is not None:
            logging.getLogger().setLevel(self._previous_level)
            self._previous_level = None
