"""
Sliding-window alarm over per-sample verdicts.

A window of the last W sample verdicts raises an attack once it is full
and at least ceil(theta * W) of them are anomalous.
"""

import math
from collections import deque
from enum import Enum
from typing import Deque, Iterable, List, Optional


class WindowVerdict(str, Enum):
    WARMING_UP = "warming-up"
    NORMAL = "normal"
    ATTACK = "attack"


def required_anomalies(size: int, threshold: float) -> int:
    return max(1, math.ceil(threshold * size - 1e-9))


class SlidingWindow:
    """Fixed-capacity FIFO of sample verdicts."""

    def __init__(self, size: int = 15, threshold: float = 0.6):
        if size < 1:
            raise ValueError(f"window size must be at least 1, got {size}")
        if not 0.0 < threshold <= 1.0:
            raise ValueError(f"threshold must be in (0, 1], got {threshold}")
        self.size = size
        self.threshold = threshold
        self.required = required_anomalies(size, threshold)
        self._verdicts: Deque[bool] = deque(maxlen=size)
        self._anomalies = 0

    @property
    def full(self) -> bool:
        return len(self._verdicts) == self.size

    @property
    def anomalies(self) -> int:
        return self._anomalies

    def push(self, anomaly: bool) -> WindowVerdict:
        if self.full:
            self._anomalies -= self._verdicts[0]
        anomaly = bool(anomaly)
        self._verdicts.append(anomaly)
        self._anomalies += anomaly
        return self.verdict()

    def verdict(self) -> WindowVerdict:
        if not self.full:
            return WindowVerdict.WARMING_UP
        return WindowVerdict.ATTACK if self._anomalies >= self.required else WindowVerdict.NORMAL

    def reset(self) -> None:
        self._verdicts.clear()
        self._anomalies = 0


def window_classify(window: SlidingWindow, anomaly: bool) -> WindowVerdict:
    return window.push(anomaly)


def run_window(anomalies: Iterable[bool], size: int, threshold: float) -> List[WindowVerdict]:
    window = SlidingWindow(size, threshold)
    return [window.push(a) for a in anomalies]


def first_alarm(anomalies: Iterable[bool], size: int, threshold: float) -> Optional[int]:
    """Index of the first sample at which the window fires, or None."""
    window = SlidingWindow(size, threshold)
    for index, anomaly in enumerate(anomalies):
        if window.push(anomaly) is WindowVerdict.ATTACK:
            return index
    return None
