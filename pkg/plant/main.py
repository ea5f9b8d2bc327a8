"""
PlantWatch plant runtime - steps a surrogate process and serves its points over Modbus TCP.
"""

import logging
from collections import defaultdict
from typing import Dict, Optional

import numpy as np

from modbus.bank import RegisterBank, Table
from modbus.server import ModbusServer
from plant.chem import VALVE_NAMES, ChemParams, ChemState, ValveCommand, encode_chem_sensors, step_chem
from plant.line import (
    COIL_NAMES, POSITION_NAMES, SENSOR_BIT_NAMES, LineParams, LineState, encode_line_sensors, step_line,
)
from plant.points import PointMap
from utils import Config, Endpoint


class PlantRuntime:
    """Register banks and Modbus listeners for one plant, one bank per server."""

    platform = ""

    def __init__(self, config: Config, points: Optional[PointMap] = None):
        self.config = config
        self.logger = logging.getLogger(__name__)
        self.points = points or PointMap.from_config(self.platform, config.get(f"{self.platform}.points"))
        self.banks: Dict[str, RegisterBank] = {
            server: RegisterBank(self.points.layout(server)) for server in self.points.servers
        }
        self.servers: Dict[str, ModbusServer] = {}
        self.ticks = 0

    async def start(self) -> None:
        host = self.config.get('network.host', '127.0.0.1')
        ports = self.config.get(f"{self.platform}.servers", {}) or {}
        for name, bank in self.banks.items():
            server = ModbusServer(bank, host, int(ports.get(name, 0)), name=f"{self.platform}.{name}")
            await server.start()
            self.servers[name] = server
        self.logger.info(
            f"{self.platform} plant serving "
            + ", ".join(f"{n}@{s.port}" for n, s in self.servers.items())
        )

    async def stop(self) -> None:
        for server in self.servers.values():
            await server.stop()
        self.servers.clear()

    def endpoints(self) -> Dict[str, Endpoint]:
        return {name: Endpoint(server.host, server.port) for name, server in self.servers.items()}

    def _read_actuators(self, names) -> list:
        """Current actuator registers or bits, in the order of ``names``."""
        return [self.banks[p.server].read(p.table, p.address)[0] for p in (self.points[n] for n in names)]

    def _publish(self, values: Dict[str, int]) -> None:
        writes: Dict[str, Dict[Table, Dict[int, int]]] = defaultdict(lambda: defaultdict(dict))
        for p in self.points.sensors:
            writes[p.server][p.table][p.address] = values[p.name]
        for server, tables in writes.items():
            self.banks[server].update(tables)

    def tick(self, dt: float) -> None:
        raise NotImplementedError


class ChemPlant(PlantRuntime):
    """Tank, feed1, feed2, product and purge servers around the chemical surrogate."""

    platform = "chem"

    def __init__(self, config: Config, state: Optional[ChemState] = None,
                 valves: Optional[ValveCommand] = None, seed: Optional[int] = None,
                 points: Optional[PointMap] = None):
        super().__init__(config, points)
        self.params = ChemParams.from_config(config.get('chem.plant'))
        self.state = state or ChemState()
        seed = config.get('seeds.noise', 7) if seed is None else seed
        self.rng = np.random.default_rng(seed)

        if valves is not None:
            for p, raw in zip((self.points[n] for n in VALVE_NAMES), valves.to_registers()):
                self.banks[p.server].write(p.table, p.address, [raw])
        self._publish(encode_chem_sensors(self.state, self.rng, self.params.noise_sigma))

    def valves(self) -> ValveCommand:
        return ValveCommand.from_registers(tuple(self._read_actuators(VALVE_NAMES)))

    def tick(self, dt: float) -> None:
        self.state = step_chem(self.state, self.valves(), dt, self.params)
        self._publish(encode_chem_sensors(self.state, self.rng, self.params.noise_sigma))
        self.ticks += 1


class LinePlant(PlantRuntime):
    """The production line behind a single server."""

    platform = "line"

    def __init__(self, config: Config, state: Optional[LineState] = None,
                 points: Optional[PointMap] = None):
        super().__init__(config, points)
        self.params = LineParams.from_config(config.get('line.plant'))
        self.state = state or LineState()
        self._publish_state()

    def coils(self):
        return self._read_actuators(COIL_NAMES)

    def _publish_state(self) -> None:
        io = encode_line_sensors(self.state, self.params)
        values = dict(zip(SENSOR_BIT_NAMES + POSITION_NAMES, io.sensor_bits + io.positions))
        self._publish(values)

    def tick(self, dt: float) -> None:
        self.state = step_line(self.state, self.coils(), dt, self.params)
        self._publish_state()
        self.ticks += 1


def build_plant(platform: str, config: Config, **kwargs) -> PlantRuntime:
    if platform == "chem":
        return ChemPlant(config, **kwargs)
    if platform == "line":
        return LinePlant(config, **kwargs)
    raise ValueError(f"unknown platform '{platform}'")
