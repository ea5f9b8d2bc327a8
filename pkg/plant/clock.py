import asyncio
import logging
import time


class SimClock:
    """Simulated time shared by the plant, PLC, proxies and collector.

    Simulated dynamics depend only on ``sim_time`` and ``dt``; acceleration
    only decides how long ``pace`` sleeps. Acceleration <= 0 runs unpaced.
    """

    def __init__(self, dt: float = 1.0, acceleration: float = 20.0):
        if dt <= 0:
            raise ValueError(f"dt must be positive, got {dt}")
        self.dt = dt
        self.acceleration = acceleration
        self.sim_time = 0.0
        self.capture_start = 0.0
        self.logger = logging.getLogger(__name__)
        self._wall_origin = time.monotonic()
        self._sim_origin = 0.0

    def advance(self) -> float:
        self.sim_time += self.dt
        return self.sim_time

    def start_capture(self) -> None:
        """Make the current simulated instant capture time zero."""
        self.capture_start = self.sim_time
        self.logger.debug(f"Capture starts at t={self.sim_time:.0f}s")

    def capture_time(self) -> float:
        return self.sim_time - self.capture_start

    async def pace(self) -> None:
        """Sleep until wall time catches up with simulated time / acceleration."""
        if self.acceleration <= 0:
            await asyncio.sleep(0)
            return
        due = self._wall_origin + (self.sim_time - self._sim_origin) / self.acceleration
        delay = due - time.monotonic()
        if delay > 0:
            await asyncio.sleep(delay)
        elif delay < -1.0:
            # Fell behind by more than a second of wall time; restart the schedule.
            self._wall_origin = time.monotonic()
            self._sim_origin = self.sim_time
            await asyncio.sleep(0)
        else:
            await asyncio.sleep(0)
