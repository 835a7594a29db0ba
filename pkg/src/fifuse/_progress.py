"""
Progress reporting for experiment grids.

An experiment finishes one (dataset, run) task at a time; reporters get
the number of finished tasks and draw on standard error so progress never
mixes with data written to standard output.
"""

import sys
import time
from typing import Optional, TextIO
from contextlib import contextmanager
from dataclasses import dataclass, field
import logging

logger = logging.getLogger(__name__)


@dataclass
class ProgressState:
    """Finished and total task counts of a running grid."""
    current: int = 0
    total: int = 0
    message: str = ""
    started_at: float = field(default_factory=time.monotonic)

    @property
    def progress_percent(self) -> float:
        if self.total <= 0:
            return 0.0
        return min(100.0, 100.0 * self.current / self.total)

    @property
    def elapsed_time(self) -> float:
        return time.monotonic() - self.started_at

    @property
    def eta_seconds(self) -> Optional[float]:
        """Remaining time assuming the mean task duration so far holds."""
        if not 0 < self.current < self.total:
            return None
        per_task = self.elapsed_time / self.current
        return per_task * (self.total - self.current)


class ProgressReporter:
    """Silent reporter; the interface the harness calls."""

    def update(self, current: int, total: int, message: str = "") -> None:
        pass

    def finish(self, success: bool = True, message: str = "") -> None:
        pass


class ConsoleProgressReporter(ProgressReporter):
    """Single-line bar with task counts, redrawn at most twice a second."""

    def __init__(self, show_eta: bool = True, stream: Optional[TextIO] = None, width: int = 30):
        self.show_eta = show_eta
        self.stream = stream if stream is not None else sys.stderr
        self.width = width
        self.state = ProgressState()
        self._last_draw = float("-inf")
        self.min_interval = 0.5

    def update(self, current: int, total: int, message: str = "") -> None:
        self.state.current, self.state.total, self.state.message = current, total, message

        now = time.monotonic()
        if current < total and now - self._last_draw < self.min_interval:
            return
        self._last_draw = now

        line = f"\r{self._bar()} {current}/{total} ({self.state.progress_percent:5.1f}%)"
        eta = self.state.eta_seconds
        if self.show_eta and eta is not None:
            line += f" ETA {format_eta(eta)}"
        if message:
            line += f" - {message}"
        print(line, end="", flush=True, file=self.stream)

    def _bar(self) -> str:
        if self.state.total <= 0:
            return "[" + "-" * self.width + "]"
        filled = min(self.width, self.width * self.state.current // self.state.total)
        head = ">" if filled < self.width else ""
        return "[" + "=" * filled + head + " " * (self.width - filled - len(head)) + "]"

    def finish(self, success: bool = True, message: str = "") -> None:
        line = f"\n{'done' if success else 'failed'} in {format_eta(self.state.elapsed_time)}"
        if message:
            line += f" - {message}"
        print(line, file=self.stream, flush=True)


def format_eta(seconds: float) -> str:
    if seconds < 60:
        return f"{seconds:.0f}s"
    if seconds < 3600:
        return f"{seconds / 60:.0f}m"
    return f"{seconds / 3600:.1f}h"


@contextmanager
def progress_context(enabled: bool = True, stream: Optional[TextIO] = None):
    """Yield a console reporter (or a silent one) and close it with the outcome."""
    reporter = ConsoleProgressReporter(stream=stream) if enabled else ProgressReporter()
    try:
        yield reporter
    except Exception as e:
        reporter.finish(success=False, message=f"Error: {e}")
        raise
    reporter.finish(success=True)
