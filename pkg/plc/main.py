"""
PlantWatch soft PLC - scans a plant over Modbus TCP and mirrors its image into its own server.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, replace
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from modbus.bank import RegisterBank, Table
from modbus.client import ModbusClient
from modbus.errors import ModbusError
from modbus.server import ModbusServer
from plant.chem import REGISTER_MAX, SENSOR_NAMES, VALVE_NAMES, ChemParams
from plant.line import COIL_NAMES, POSITION_NAMES, SENSOR_BIT_NAMES
from plant.points import Point, PointMap
from plc.control import ChemController, LineSequencer
from utils import Config, Endpoint

STATUS_TABLE = Table.INPUT_REGISTERS
STALE_ADDRESS = 200
SCAN_ADDRESS = 201

Block = Tuple[Table, int, int]


@dataclass(frozen=True)
class PlcLayout:
    """Where the PLC serves its image: sensor blocks, readback block, command block."""
    platform: str
    sensor_names: Tuple[str, ...]
    actuator_names: Tuple[str, ...]
    sensor_blocks: Tuple[Block, ...]
    readback_block: Block
    command_block: Block

    def bank_layout(self) -> Dict[Table, List[int]]:
        layout: Dict[Table, List[int]] = defaultdict(list)
        for table, start, count in self.sensor_blocks + (self.readback_block, self.command_block):
            layout[table].extend(range(start, start + count))
        layout[STATUS_TABLE].extend((STALE_ADDRESS, SCAN_ADDRESS))
        return dict(layout)

    @property
    def sensor_bit_mask(self) -> Tuple[bool, ...]:
        return tuple(table.is_bit for table, _, count in self.sensor_blocks for _ in range(count))

    @property
    def actuator_is_bit(self) -> bool:
        return self.command_block[0].is_bit


CHEM_LAYOUT = PlcLayout(
    platform="chem",
    sensor_names=SENSOR_NAMES,
    actuator_names=VALVE_NAMES,
    sensor_blocks=((Table.INPUT_REGISTERS, 0, len(SENSOR_NAMES)),),
    readback_block=(Table.INPUT_REGISTERS, 100, len(VALVE_NAMES)),
    command_block=(Table.HOLDING_REGISTERS, 0, len(VALVE_NAMES)),
)
LINE_LAYOUT = PlcLayout(
    platform="line",
    sensor_names=SENSOR_BIT_NAMES + POSITION_NAMES,
    actuator_names=COIL_NAMES,
    sensor_blocks=((Table.DISCRETE_INPUTS, 0, len(SENSOR_BIT_NAMES)),
                   (Table.INPUT_REGISTERS, 0, len(POSITION_NAMES))),
    readback_block=(Table.DISCRETE_INPUTS, 100, len(COIL_NAMES)),
    command_block=(Table.COILS, 0, len(COIL_NAMES)),
)
LAYOUTS = {"chem": CHEM_LAYOUT, "line": LINE_LAYOUT}


@dataclass(frozen=True)
class ScanImage:
    """What the PLC last saw and did; raw register values or bits."""
    t: float = 0.0
    sensors: Tuple[int, ...] = ()
    readbacks: Tuple[int, ...] = ()
    commands: Tuple[int, ...] = ()
    stale_scans: int = 0
    scans: int = 0
    stale: bool = False

    @classmethod
    def empty(cls, layout: PlcLayout) -> "ScanImage":
        return cls(sensors=(0,) * len(layout.sensor_names),
                   readbacks=(0,) * len(layout.actuator_names),
                   commands=(0,) * len(layout.actuator_names))


def _stale(image: ScanImage, error: Exception) -> ScanImage:
    logging.getLogger(__name__).warning(f"Scan {image.scans + 1} stale: {error}")
    return replace(image, stale_scans=image.stale_scans + 1, scans=image.scans + 1, stale=True)


class PlantLink:
    """Modbus clients for every plant server a PLC talks to."""

    def __init__(self, endpoints: Mapping[str, Endpoint], points: PointMap,
                 timeout: float = 2.0, connect_timeout: float = 2.0):
        self.points = points
        self.clients: Dict[str, ModbusClient] = {
            server: ModbusClient(endpoint, timeout=timeout, connect_timeout=connect_timeout)
            for server, endpoint in endpoints.items()
        }

    async def close(self) -> None:
        for client in self.clients.values():
            await client.close()

    @staticmethod
    def _runs(points: Sequence[Point]) -> List[Tuple[str, Table, List[Point]]]:
        """Group points into contiguous address runs per (server, table)."""
        grouped: Dict[Tuple[str, Table], List[Point]] = defaultdict(list)
        for p in points:
            grouped[(p.server, p.table)].append(p)
        runs = []
        for (server, table), members in grouped.items():
            members.sort(key=lambda p: p.address)
            run = [members[0]]
            for p in members[1:]:
                if p.address == run[-1].address + 1:
                    run.append(p)
                else:
                    runs.append((server, table, run))
                    run = [p]
            runs.append((server, table, run))
        return runs

    async def read(self, names: Sequence[str]) -> Tuple[int, ...]:
        values: Dict[str, int] = {}
        for server, table, run in self._runs([self.points[n] for n in names]):
            client = self.clients[server]
            start, count = run[0].address, len(run)
            if table is Table.INPUT_REGISTERS:
                raw = await client.read_input_registers(start, count)
            elif table is Table.HOLDING_REGISTERS:
                raw = await client.read_holding_registers(start, count)
            elif table is Table.DISCRETE_INPUTS:
                raw = await client.read_discrete_inputs(start, count)
            else:
                raw = await client.read_coils(start, count)
            values.update((p.name, v) for p, v in zip(run, raw))
        return tuple(values[n] for n in names)

    async def write(self, names: Sequence[str], values: Sequence[int]) -> None:
        by_name = dict(zip(names, values))
        for server, table, run in self._runs([self.points[n] for n in names]):
            client = self.clients[server]
            raw = [by_name[p.name] for p in run]
            if table is Table.HOLDING_REGISTERS:
                if len(raw) == 1:
                    await client.write_register(run[0].address, raw[0])
                else:
                    await client.write_registers(run[0].address, raw)
            elif table is Table.COILS:
                if len(raw) == 1:
                    await client.write_coil(run[0].address, bool(raw[0]))
                else:
                    await client.write_coils(run[0].address, raw)
            else:
                raise ValueError(f"{table.value} is read-only")


async def plc_scan_chem(image: ScanImage, controller: ChemController, link: PlantLink,
                        t: float, dt: float = 1.0) -> ScanImage:
    """Read sensors, run the PI loops, write valves, read the valves back.

    Loop state only advances when the valve write reaches the plant.
    """
    try:
        sensors = await link.read(SENSOR_NAMES)
    except ModbusError as e:
        return _stale(image, e)

    normalized = {name: raw / REGISTER_MAX for name, raw in zip(SENSOR_NAMES, sensors)}
    saved = controller.snapshot()
    commands = controller.compute(normalized, t, dt).to_registers()

    try:
        await link.write(VALVE_NAMES, commands)
    except ModbusError as e:
        controller.restore(saved)
        return _stale(image, e)
    try:
        readbacks = await link.read(VALVE_NAMES)
    except ModbusError as e:
        return _stale(image, e)

    return ScanImage(t=t, sensors=sensors, readbacks=readbacks, commands=commands,
                     stale_scans=image.stale_scans, scans=image.scans + 1)


async def plc_scan_line(image: ScanImage, sequencer: LineSequencer, link: PlantLink,
                        t: float) -> ScanImage:
    """Read bits and arm positions, step the sequencer, write all coils, read them back."""
    try:
        sensors = await link.read(LINE_LAYOUT.sensor_names)
    except ModbusError as e:
        return _stale(image, e)

    bits = sensors[:len(SENSOR_BIT_NAMES)]
    positions = [raw / REGISTER_MAX for raw in sensors[len(SENSOR_BIT_NAMES):]]
    commands = sequencer.compute(bits, positions, t)

    try:
        await link.write(COIL_NAMES, commands)
        readbacks = await link.read(COIL_NAMES)
    except ModbusError as e:
        return _stale(image, e)

    return ScanImage(t=t, sensors=sensors, readbacks=readbacks, commands=commands,
                     stale_scans=image.stale_scans, scans=image.scans + 1)


class SoftPlc:
    """Scan loop plus the Modbus server the collector polls."""

    def __init__(self, platform: str, config: Config, endpoints: Mapping[str, Endpoint],
                 program: Union[ChemController, LineSequencer], points: Optional[PointMap] = None):
        self.platform = platform
        self.config = config
        self.logger = logging.getLogger(__name__)
        self.layout = LAYOUTS[platform]
        self.program = program
        self.points = points or PointMap.from_config(platform, config.get(f"{platform}.points"))
        self.link = PlantLink(
            endpoints, self.points,
            timeout=config.get('network.request_timeout', 2.0),
            connect_timeout=config.get('network.connect_timeout', 2.0),
        )
        self.bank = RegisterBank(self.layout.bank_layout())
        self.server: Optional[ModbusServer] = None
        self.image = ScanImage.empty(self.layout)

    async def start(self) -> None:
        self.server = ModbusServer(
            self.bank,
            self.config.get('network.host', '127.0.0.1'),
            int(self.config.get(f"{self.platform}.plc.port", 0)),
            name=f"{self.platform}.plc",
        )
        await self.server.start()
        self.publish()

    async def stop(self) -> None:
        await self.link.close()
        if self.server:
            await self.server.stop()
            self.server = None
        self.logger.info(f"{self.platform} PLC stopped after {self.image.scans} scans "
                         f"({self.image.stale_scans} stale)")

    @property
    def endpoint(self) -> Endpoint:
        return Endpoint(self.server.host, self.server.port)

    async def scan(self, t: float) -> ScanImage:
        if self.platform == "chem":
            self.image = await plc_scan_chem(self.image, self.program, self.link, t)
        else:
            self.image = await plc_scan_line(self.image, self.program, self.link, t)
        self.publish()
        return self.image

    def publish(self) -> None:
        """Write the image into the served bank as one atomic update."""
        writes: Dict[Table, Dict[int, int]] = defaultdict(dict)
        sensors = iter(self.image.sensors)
        for table, start, count in self.layout.sensor_blocks:
            for address in range(start, start + count):
                writes[table][address] = next(sensors)
        for (table, start, _), values in ((self.layout.readback_block, self.image.readbacks),
                                          (self.layout.command_block, self.image.commands)):
            for offset, value in enumerate(values):
                writes[table][start + offset] = value
        writes[STATUS_TABLE][STALE_ADDRESS] = self.image.stale_scans & 0xFFFF
        writes[STATUS_TABLE][SCAN_ADDRESS] = self.image.scans & 0xFFFF
        self.bank.update(writes)


def build_program(platform: str, config: Config) -> Union[ChemController, LineSequencer]:
    if platform == "chem":
        return ChemController(config.get('chem.control'), cycle_s=float(config.get('chem.cycle_s', 1000)),
                              plant_params=ChemParams.from_config(config.get('chem.plant')))
    return LineSequencer(config.get('line.control'))
