"""
Stage wrapper for pipeline commands.

This module provides timing and failure logging around each pipeline stage,
re-raising failures with the stage name attached.
"""

import time
from typing import Dict, Optional

import structlog

from ..utils.errors import StageFailedError


class StageTimer:
    """Context manager that logs a stage's start, end and duration."""

    def __init__(self, name: str, timings: Optional[Dict[str, float]] = None):
        self.name = name
        self.timings = timings
        self.logger = structlog.get_logger(__name__).bind(stage=name)
        self._start = 0.0

    def __enter__(self) -> "StageTimer":
        self._start = time.perf_counter()
        self.logger.info("stage.start")
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        duration = time.perf_counter() - self._start
        if self.timings is not None:
            self.timings[self.name] = duration
        if exc is None:
            self.logger.info("stage.done", duration_s=round(duration, 3))
            return False
        if isinstance(exc, StageFailedError):
            return False
        if not isinstance(exc, Exception):
            return False
        self.logger.error("stage.failed", duration_s=round(duration, 3), error=str(exc),
                          error_type=type(exc).__name__)
        raise StageFailedError(self.name, exc) from exc


def run_stage(name: str, timings: Optional[Dict[str, float]] = None) -> StageTimer:
    return StageTimer(name, timings)
