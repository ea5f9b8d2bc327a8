"""
PlantWatch MITM proxy - sits between the PLC and the plant servers and rewrites Modbus frames.
"""

import asyncio
import json
import logging
import time
from dataclasses import asdict, dataclass
from functools import partial
from pathlib import Path
from typing import Callable, Dict, List, Mapping, Optional, Set, Union

from modbus.codec import decode_adu, encode_adu
from modbus.errors import DecodeError, ProtocolError
from modbus.server import read_frame
from mitm.rewrite import RequestTracker, Rewrite, rewrite_frame
from mitm.scenario import BENIGN, AttackScenario, Direction
from plant.clock import SimClock
from utils import Config, ConnectionStats, Endpoint


@dataclass
class RewriteRecord:
    t: float
    server: str
    direction: str
    function_code: int
    table: str
    address: int
    point: str
    before: int
    after: int
    transaction_id: int
    frame_before: str
    frame_after: str


class RewriteLog:
    """Every rewritten value, kept in memory and appended to a JSON-lines file."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path else None
        self.records: List[RewriteRecord] = []
        self._file = None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._file = open(self.path, 'a', encoding='utf-8')

    def __len__(self) -> int:
        return len(self.records)

    def record(self, t: float, server: str, direction: Direction, rewrite: Rewrite,
               transaction_id: int, frame_before: bytes, frame_after: bytes) -> RewriteRecord:
        entry = RewriteRecord(
            t=t,
            server=server,
            direction=direction.value,
            function_code=rewrite.function_code,
            table=rewrite.table.value,
            address=rewrite.address,
            point=rewrite.point,
            before=rewrite.before,
            after=rewrite.after,
            transaction_id=transaction_id,
            frame_before=frame_before.hex(),
            frame_after=frame_after.hex(),
        )
        self.records.append(entry)
        if self._file:
            self._file.write(json.dumps(asdict(entry)) + "\n")
            self._file.flush()
        return entry

    def close(self) -> None:
        if self._file:
            self._file.close()
            self._file = None


class MitmProxy:
    """One listener per proxied plant server.

    The PLC is pointed at ``endpoints()`` instead of the plant. Each accepted
    connection gets its own upstream connection and two forwarding loops;
    frames keep their order within a connection.
    """

    def __init__(self, config: Config, platform: str, upstreams: Mapping[str, Endpoint],
                 scenario: AttackScenario = BENIGN, clock: Optional[SimClock] = None,
                 log: Optional[RewriteLog] = None):
        self.config = config
        self.platform = platform
        self.upstreams = dict(upstreams)
        self.scenario = scenario
        self.clock = clock
        self.log = log or RewriteLog()
        self.logger = logging.getLogger(__name__)

        self.host = config.get('network.host', '127.0.0.1')
        self.connect_timeout = config.get('network.connect_timeout', 2.0)
        self.servers: Dict[str, asyncio.Server] = {}
        self.ports: Dict[str, int] = {}
        self.connections: Dict[str, ConnectionStats] = {}
        self._writers: Set[asyncio.StreamWriter] = set()
        self.total_connections = 0
        self.frames_forwarded = 0
        self.upstream_failures = 0
        self.running = False

    async def start(self) -> None:
        ports = self.config.get(f"{self.platform}.proxy", {}) or {}
        for server in self.upstreams:
            listener = await asyncio.start_server(
                partial(self._handle_client_connection, server), self.host, int(ports.get(server, 0)))
            self.servers[server] = listener
            self.ports[server] = listener.sockets[0].getsockname()[1]
        self.running = True
        self.logger.info(
            f"MITM proxy for '{self.scenario.name}' ({len(self.scenario.rules)} rules): "
            + ", ".join(f"{s}@{p}->{self.upstreams[s]}" for s, p in self.ports.items())
        )

    async def stop(self) -> None:
        if not self.running:
            return
        self.running = False
        for w in list(self._writers):
            w.close()
        for listener in self.servers.values():
            listener.close()
            await listener.wait_closed()
        self.servers.clear()
        self.log.close()
        self.logger.info(
            f"MITM proxy stopped - connections: {self.total_connections}, "
            f"frames: {self.frames_forwarded}, rewrites: {len(self.log)}"
        )

    def endpoints(self) -> Dict[str, Endpoint]:
        return {server: Endpoint(self.host, port) for server, port in self.ports.items()}

    def set_scenario(self, scenario: AttackScenario) -> None:
        """Swap the rule set between captures."""
        self.scenario = scenario

    def now(self) -> float:
        return self.clock.capture_time() if self.clock else 0.0

    async def _handle_client_connection(self, server: str, reader: asyncio.StreamReader,
                                        writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info('peername')
        client_id = f"{server}<-{peer[0]}:{peer[1]}"
        upstream = self.upstreams[server]
        self.total_connections += 1

        try:
            up_reader, up_writer = await asyncio.wait_for(
                asyncio.open_connection(upstream.host, upstream.port), timeout=self.connect_timeout)
        except (OSError, asyncio.TimeoutError) as e:
            self.upstream_failures += 1
            self.logger.warning(f"Upstream {server} at {upstream} unreachable, closing {client_id}: {e}")
            writer.close()
            return

        self._writers.update((writer, up_writer))
        stats = self.connections.setdefault(client_id, ConnectionStats(connection_time=time.time()))
        tracker = RequestTracker()
        pumps = [
            asyncio.create_task(self._pump(server, reader, up_writer, Direction.ACTUATOR, tracker, stats)),
            asyncio.create_task(self._pump(server, up_reader, writer, Direction.SENSOR, tracker, stats)),
        ]
        try:
            await asyncio.wait(pumps, return_when=asyncio.FIRST_COMPLETED)
        finally:
            for task in pumps:
                task.cancel()
            await asyncio.gather(*pumps, return_exceptions=True)
            for w in (writer, up_writer):
                self._writers.discard(w)
                try:
                    w.close()
                    await w.wait_closed()
                except Exception:
                    pass
            self.connections.pop(client_id, None)
            self.logger.debug(f"Proxied connection {client_id} closed")

    async def _pump(self, server: str, reader: asyncio.StreamReader, writer: asyncio.StreamWriter,
                    direction: Direction, tracker: RequestTracker, stats: ConnectionStats) -> None:
        responses = direction is Direction.SENSOR
        try:
            while True:
                try:
                    frame = await read_frame(reader)
                except asyncio.IncompleteReadError:
                    return

                out = self.process_frame(server, frame, direction, tracker)
                writer.write(out)
                await writer.drain()
                self.frames_forwarded += 1
                if responses:
                    stats.bytes_received += len(out)
                    stats.frames_received += 1
                else:
                    stats.bytes_sent += len(out)
                    stats.frames_sent += 1
        except ProtocolError as e:
            self.logger.warning(f"Non-Modbus traffic on {server} ({direction.value}): {e}")
        except (ConnectionError, OSError) as e:
            self.logger.debug(f"{server} {direction.value} stream ended: {e}")

    def process_frame(self, server: str, frame: bytes, direction: Direction,
                      tracker: RequestTracker) -> bytes:
        """Bytes to forward for one frame; the original bytes unless a rule changed a value."""
        responses = direction is Direction.SENSOR
        try:
            adu = decode_adu(frame, response=responses)
        except DecodeError as e:
            self.logger.debug(f"Forwarding undecodable frame on {server} untouched: {e}")
            return frame

        request = tracker.match(adu) if responses else None
        t = self.now()
        rewritten, rewrites = rewrite_frame(adu, self.scenario.rules_for(server), direction, t, request)
        if not responses:
            tracker.remember(rewritten)
        if not rewrites:
            return frame

        out = encode_adu(rewritten.header, rewritten.pdu)
        for rewrite in rewrites:
            self.log.record(t, server, direction, rewrite, adu.header.transaction_id, frame, out)
            self.logger.debug(
                f"t={t:.0f}s {server} txn {adu.header.transaction_id}: "
                f"{rewrite.point} {rewrite.before} -> {rewrite.after}"
            )
        return out

    def get_proxy_stats(self) -> Dict:
        return {
            'platform': self.platform,
            'scenario': self.scenario.name,
            'active_connections': len(self.connections),
            'total_connections': self.total_connections,
            'frames_forwarded': self.frames_forwarded,
            'upstream_failures': self.upstream_failures,
            'rewrites': len(self.log),
            'ports': dict(self.ports),
        }


async def run_proxy(config: Config, platform: str, upstreams: Mapping[str, Endpoint], scenario: AttackScenario,
                    clock: SimClock, log: Optional[RewriteLog] = None, seconds: float = 0.0,
                    on_start: Optional[Callable[[MitmProxy], None]] = None) -> RewriteLog:
    """Run a proxy on its own clock and return its rewrite log.

    Capture time starts once the listeners are bound. The session ends after
    ``seconds`` of capture time, or on cancellation when ``seconds`` is 0.
    """
    proxy = MitmProxy(config, platform, upstreams, scenario, clock, log)
    await proxy.start()
    clock.start_capture()
    if on_start is not None:
        on_start(proxy)
    try:
        while seconds <= 0 or clock.capture_time() < seconds:
            clock.advance()
            await clock.pace()
    finally:
        stats = proxy.get_proxy_stats()
        await proxy.stop()
        proxy.logger.debug(f"Proxy session stats: {stats}")
    return proxy.log
