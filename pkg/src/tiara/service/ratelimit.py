"""Fixed-window call limiter keyed by session."""

from __future__ import annotations

import math
import threading
import time
from typing import Callable


class RateLimiter:
    """Grant at most ``max_calls`` per ``window`` seconds for each key.

    A key's window opens at its first call and resets once ``window``
    seconds have passed. Thread-safe.
    """

    def __init__(self, max_calls: int, window: float, clock: Callable[[], float] = time.monotonic) -> None:
        if max_calls < 1:
            raise ValueError(f"max_calls must be positive, got {max_calls}")
        if not window > 0:
            raise ValueError(f"window must be positive, got {window}")
        self.max_calls = max_calls
        self.window = window
        self.clock = clock
        self._lock = threading.Lock()
        self._windows: dict[str, tuple[float, int]] = {}

    def acquire(self, key: str) -> tuple[bool, float]:
        """Try to take one call; returns ``(granted, retry_after_seconds)``."""
        with self._lock:
            now = self.clock()
            start, used = self._windows.get(key, (now, 0))
            if now - start >= self.window:
                start, used = now, 0
            if used < self.max_calls:
                self._windows[key] = (start, used + 1)
                return True, 0.0
            self._windows[key] = (start, used)
            return False, start + self.window - now

    @staticmethod
    def to_ms(seconds: float) -> int:
        return max(1, math.ceil(seconds * 1000))
