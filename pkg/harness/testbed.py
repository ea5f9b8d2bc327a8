"""
PlantWatch testbed - one plant, its soft PLC, an optional MITM proxy and the
collector, stepped together one simulated second at a time.

Each simulated second runs plant tick, then PLC scan, then collector poll.
Wall time only paces the loop; it never changes what is simulated.
"""

import logging
from pathlib import Path
from typing import Optional, Union

from collector.main import CaptureRecord, Collector
from detection.pipeline import Monitor
from mitm.main import MitmProxy, RewriteLog
from mitm.scenario import BENIGN, AttackScenario, categorize
from harness.errors import CaptureAborted
from modbus.errors import ModbusError
from plant.clock import SimClock
from plant.main import PlantRuntime, build_plant
from plc.main import ScanImage, SoftPlc, build_program
from utils import Config, format_duration


class Testbed:
    """Plant servers, proxy listeners (when proxied), PLC server and collector client."""

    def __init__(self, platform: str, config: Config, proxied: bool = False, seed: Optional[int] = None,
                 rewrite_log: Optional[RewriteLog] = None):
        if platform not in ("chem", "line"):
            raise ValueError(f"unknown platform '{platform}'")
        self.platform = platform
        self.config = config
        self.proxied = proxied
        self.seed = config.get('seeds.noise', 7) if seed is None else seed
        self.rewrite_log = rewrite_log
        self.logger = logging.getLogger(__name__)

        self.clock = SimClock(config.get('clock.dt', 1.0), config.get('clock.acceleration', 20.0))
        self.window_size = int(config.get(f"{platform}.window.size", 15 if platform == "chem" else 5))
        default_warmup = 60 if platform == "chem" else 5
        self.warmup_s = max(float(config.get(f"{platform}.warmup_s", default_warmup)), float(self.window_size))
        cycle_s = float(config.get(f"{platform}.cycle_s", 1000 if platform == "chem" else 400))
        self.capture_rows = int(round(cycle_s / self.clock.dt))

        self.program = build_program(platform, config)
        self.plant: Optional[PlantRuntime] = None
        self.proxy: Optional[MitmProxy] = None
        self.plc: Optional[SoftPlc] = None
        self.collector: Optional[Collector] = None
        self.running = False

    async def start(self) -> None:
        try:
            if self.platform == "chem":
                state, valves = self.program.operating_point(self.clock.sim_time)
                self.plant = build_plant("chem", self.config, state=state, valves=valves, seed=self.seed)
            else:
                self.plant = build_plant("line", self.config)
            await self.plant.start()

            targets = self.plant.endpoints()
            if self.proxied:
                self.proxy = MitmProxy(self.config, self.platform, targets, BENIGN, self.clock, self.rewrite_log)
                await self.proxy.start()
                targets = self.proxy.endpoints()

            self.plc = SoftPlc(self.platform, self.config, targets, self.program)
            await self.plc.start()

            self.collector = Collector(
                self.platform, self.plc.endpoint,
                timeout=self.config.get('network.request_timeout', 2.0),
                connect_timeout=self.config.get('network.connect_timeout', 2.0),
            )
        except Exception:
            await self.stop()
            raise
        self.running = True
        self.logger.info(f"{self.platform} testbed up (PLC {self.plc.endpoint}, "
                         f"{'through MITM proxy' if self.proxied else 'direct'})")

    async def stop(self) -> None:
        """Collector, proxy, PLC, plant; safe to call more than once."""
        if self.collector:
            await self.collector.close()
            self.collector = None
        if self.proxy:
            await self.proxy.stop()
            self.proxy = None
        if self.plc:
            await self.plc.stop()
            self.plc = None
        if self.plant:
            await self.plant.stop()
            self.plant = None
        if self.running:
            self.logger.info(f"{self.platform} testbed stopped at t={format_duration(self.clock.sim_time)} simulated")
        self.running = False

    async def __aenter__(self) -> "Testbed":
        await self.start()
        return self

    async def __aexit__(self, *exc) -> None:
        await self.stop()

    async def step(self) -> ScanImage:
        """Advance one simulated second: plant tick, then PLC scan."""
        self.clock.advance()
        self.plant.tick(self.clock.dt)
        stale_before = self.plc.image.stale_scans
        image = await self.plc.scan(self.clock.sim_time)
        if image.stale_scans > stale_before:
            raise CaptureAborted(f"PLC scan at t={self.clock.sim_time:.0f}s could not reach the plant")
        await self.clock.pace()
        return image

    async def run(self, seconds: float) -> None:
        for _ in range(int(round(seconds / self.clock.dt))):
            await self.step()

    def set_scenario(self, scenario: AttackScenario) -> None:
        if self.proxy is None:
            if not scenario.benign:
                raise ValueError(f"scenario '{scenario.name}' needs a proxied testbed")
            return
        self.proxy.set_scenario(scenario)

    async def capture(self, path: Union[str, Path], label: int, scenario: AttackScenario = BENIGN,
                      monitor: Optional[Monitor] = None, warmup_s: Optional[float] = None,
                      rows: Optional[int] = None) -> int:
        """Warm up, then record one control cycle of samples; returns the rows written.

        Scenario rules only apply from capture time zero. Raises
        CaptureAborted when a scan or a sample fails; rows already written
        stay in the file.
        """
        rows = self.capture_rows if rows is None else rows
        warmup_s = self.warmup_s if warmup_s is None else warmup_s
        self.set_scenario(BENIGN)
        await self.run(warmup_s)

        self.clock.start_capture()
        self.set_scenario(scenario)
        self.collector.begin(path, label)
        self.logger.info(f"Capture {Path(path).name} ({scenario.name}) started at t={self.clock.sim_time:.0f}s")
        try:
            for k in range(rows):
                if k:
                    await self.step()
                t = self.clock.capture_time()
                vector = await self.collector.sample(t)
                if vector is None:
                    raise CaptureAborted(f"sample at t={t:.0f}s was dropped")
                if monitor is not None:
                    monitor.push(vector.t, vector.values)
        finally:
            written = self.collector.end()
            self.set_scenario(BENIGN)
        self.logger.info(f"Capture {Path(path).name} finished with {written} rows")
        return written

    async def record(self, path: Union[str, Path], scenario: AttackScenario = BENIGN, name: Optional[str] = None,
                     stored_path: Optional[str] = None, warmup_s: Optional[float] = None,
                     rows: Optional[int] = None) -> CaptureRecord:
        """Capture into ``path`` and describe the result as a manifest record.

        A capture that aborts, or ends with the wrong row count, comes back
        with ``valid`` cleared instead of raising.
        """
        attack = not scenario.benign
        rows = self.capture_rows if rows is None else rows
        record = CaptureRecord(
            name=name or Path(path).stem,
            path=stored_path or str(path),
            platform=self.platform,
            scenario=scenario.name,
            category=categorize(scenario).value if attack else None,
            stealthy=scenario.stealthy,
            label=int(attack),
            onset=scenario.onset if attack else None,
            cycle_s=rows * self.clock.dt,
            seed=self.seed,
        )
        try:
            record.rows = await self.capture(path, record.label, scenario, warmup_s=warmup_s, rows=rows)
        except (CaptureAborted, ModbusError, OSError) as e:
            self.logger.error(f"Capture {record.name} aborted: {e}")
            record.valid = False
        record.gaps = len(self.collector.gaps) if self.collector else 0
        if record.valid and not record.row_count_ok:
            self.logger.error(f"Capture {record.name} has {record.rows} rows for a {record.cycle_s:.0f}s cycle")
            record.valid = False
        return record


async def run_capture(config: Config, platform: str, path: Union[str, Path], scenario: AttackScenario = BENIGN,
                      seed: Optional[int] = None, rewrite_log: Optional[RewriteLog] = None,
                      rows: Optional[int] = None) -> CaptureRecord:
    """One capture on a fresh testbed, proxied only when the scenario attacks."""
    testbed = Testbed(platform, config, proxied=not scenario.benign, seed=seed, rewrite_log=rewrite_log)
    try:
        try:
            await testbed.start()
        except (ModbusError, OSError) as e:
            testbed.logger.error(f"{platform} testbed failed to start: {e}")
            return CaptureRecord(name=Path(path).stem, path=str(path), platform=platform, scenario=scenario.name,
                                 label=int(not scenario.benign), seed=testbed.seed, valid=False)
        return await testbed.record(path, scenario, rows=rows)
    finally:
        await testbed.stop()
