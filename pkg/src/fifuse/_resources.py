"""
Resource tracking utilities for fifuse.

Training and attribution steps can take seconds to minutes at full
scale; this module times them and reports resident-memory growth.
"""

import gc
import os
import time
import logging
from dataclasses import dataclass
from typing import Optional

import psutil

logger = logging.getLogger(__name__)


@dataclass
class ResourceStats:
    operation: str
    duration_s: float
    rss_start_mb: float
    rss_end_mb: float

    @property
    def rss_delta_mb(self) -> float:
        return self.rss_end_mb - self.rss_start_mb


def get_memory_usage() -> float:
    """Get current resident memory in MB."""
    process = psutil.Process(os.getpid())
    return process.memory_info().rss / 1024 / 1024


class ResourceTracker:

    def __init__(self, operation_name: str = "unknown", log_threshold_s: float = 1.0):
        self.operation_name = operation_name
        self.log_threshold_s = log_threshold_s
        self.start_time = 0.0
        self.start_rss = 0.0
        self.stats: Optional[ResourceStats] = None

    def __enter__(self):
        self.start_time = time.perf_counter()
        self.start_rss = get_memory_usage()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        duration = time.perf_counter() - self.start_time
        self.stats = ResourceStats(
            operation=self.operation_name,
            duration_s=duration,
            rss_start_mb=self.start_rss,
            rss_end_mb=get_memory_usage(),
        )

        if duration > self.log_threshold_s:
            logger.info(
                f"Operation '{self.operation_name}' took {duration:.2f}s "
                f"(rss {self.stats.rss_delta_mb:+.1f}MB)"
            )
        return False


def release_memory() -> int:
    """Collect garbage between experiment cells; returns objects collected."""
    collected = gc.collect()
    if collected:
        logger.debug(f"GC: collected {collected} objects")
    return collected
