"""Named sensor and actuator points and where each plant server exposes them."""

from dataclasses import dataclass
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

from modbus.bank import Table
from plant import chem, line

PLATFORMS = ("chem", "line")


@dataclass(frozen=True)
class Point:
    name: str
    server: str
    table: Table
    address: int

    @property
    def is_sensor(self) -> bool:
        return self.table.is_sensor


def _default_chem_points() -> List[Point]:
    sensor_places = [
        ("tank", 0), ("tank", 1),
        ("feed1", 0), ("feed2", 0), ("product", 0), ("purge", 0),
        ("purge", 1), ("purge", 2), ("purge", 3),
    ]
    valve_servers = ["feed1", "feed2", "product", "purge"]
    points = [Point(n, s, Table.INPUT_REGISTERS, a) for n, (s, a) in zip(chem.SENSOR_NAMES, sensor_places)]
    points += [Point(n, s, Table.HOLDING_REGISTERS, 0) for n, s in zip(chem.VALVE_NAMES, valve_servers)]
    return points


def _default_line_points() -> List[Point]:
    points = [Point(n, "line", Table.DISCRETE_INPUTS, i) for i, n in enumerate(line.SENSOR_BIT_NAMES)]
    points += [Point(n, "line", Table.INPUT_REGISTERS, i) for i, n in enumerate(line.POSITION_NAMES)]
    points += [Point(n, "line", Table.COILS, i) for i, n in enumerate(line.COIL_NAMES)]
    return points


class PointMap:
    """Ordered points of one platform: sensors first, then actuators."""

    def __init__(self, platform: str, points: Iterable[Point]):
        if platform not in PLATFORMS:
            raise ValueError(f"unknown platform '{platform}'")
        self.platform = platform
        points = list(points)
        self.sensors: Tuple[Point, ...] = tuple(p for p in points if p.is_sensor)
        self.actuators: Tuple[Point, ...] = tuple(p for p in points if not p.is_sensor)
        self._by_name: Dict[str, Point] = {p.name: p for p in points}
        if len(self._by_name) != len(points):
            raise ValueError(f"duplicate point names in {platform} point map")

    @classmethod
    def default(cls, platform: str) -> "PointMap":
        if platform == "chem":
            return cls(platform, _default_chem_points())
        return cls(platform, _default_line_points())

    @classmethod
    def from_config(cls, platform: str, section: Optional[Mapping[str, Mapping]] = None) -> "PointMap":
        """Build from ``{name: {server, table, address}}``, falling back to the built-in map."""
        if not section:
            return cls.default(platform)
        points = [
            Point(name, entry["server"], Table(entry["table"]), int(entry["address"]))
            for name, entry in section.items()
        ]
        return cls(platform, points)

    def __getitem__(self, name: str) -> Point:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"no point named '{name}' on {self.platform}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._by_name

    @property
    def servers(self) -> List[str]:
        seen: Dict[str, None] = {}
        for p in self.sensors + self.actuators:
            seen.setdefault(p.server)
        return list(seen)

    def layout(self, server: str) -> Dict[Table, List[int]]:
        """Addresses a server's bank must define."""
        tables: Dict[Table, List[int]] = {}
        for p in self.sensors + self.actuators:
            if p.server == server:
                tables.setdefault(p.table, []).append(p.address)
        return tables

    def on_server(self, server: str) -> List[Point]:
        return [p for p in self.sensors + self.actuators if p.server == server]
