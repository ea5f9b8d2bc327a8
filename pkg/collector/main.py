"""
PlantWatch collector - polls the PLC once per simulated second and appends feature rows to CSV captures.

Column order is fixed per platform:
``t, s_0..s_{n-1}, d_0..d_{n-1}, a_0..a_{m-1}, c_0..c_{m-1}, label``
with sensors normalized to [0, 1], their deltas from the previous sample,
the actuator readbacks and the commanded outputs.
"""

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from modbus.bank import Table
from modbus.client import ModbusClient
from modbus.errors import ModbusError
from plant.chem import REGISTER_MAX
from plc.main import LAYOUTS, STALE_ADDRESS, PlcLayout
from utils import Endpoint

logger = logging.getLogger(__name__)

BENIGN = "benign"


@dataclass(frozen=True)
class Snapshot:
    """Raw values of every mirrored point at one instant."""
    t: float
    platform: str
    sensors: Tuple[int, ...]
    readbacks: Tuple[int, ...]
    commands: Tuple[int, ...]
    scan: int = 0
    stale_scans: int = 0


@dataclass(frozen=True)
class FeatureVector:
    t: float
    sensors: Tuple[float, ...]
    deltas: Tuple[float, ...]
    readbacks: Tuple[float, ...]
    commands: Tuple[float, ...]

    @property
    def values(self) -> Tuple[float, ...]:
        return self.sensors + self.deltas + self.readbacks + self.commands

    def __len__(self) -> int:
        return len(self.values)


def feature_columns(layout: PlcLayout) -> List[str]:
    n, m = len(layout.sensor_names), len(layout.actuator_names)
    return ([f"s_{i}" for i in range(n)] + [f"d_{i}" for i in range(n)]
            + [f"a_{i}" for i in range(m)] + [f"c_{i}" for i in range(m)])


def capture_header(layout: PlcLayout) -> List[str]:
    return ["t"] + feature_columns(layout) + ["label"]


def _normalize(raw: Sequence[int], bits: Sequence[bool]) -> Tuple[float, ...]:
    return tuple(float(v) if bit else v / REGISTER_MAX for v, bit in zip(raw, bits))


def featurize(current: Snapshot, previous: Optional[Snapshot] = None) -> FeatureVector:
    """Normalize a snapshot and difference its sensors against the previous one."""
    layout = LAYOUTS[current.platform]
    n, m = len(layout.sensor_names), len(layout.actuator_names)
    if (len(current.sensors), len(current.readbacks), len(current.commands)) != (n, m, m):
        raise ValueError(f"snapshot does not match the {current.platform} address map")
    if previous is not None and (previous.platform != current.platform
                                 or len(previous.sensors) != len(current.sensors)):
        raise ValueError("snapshots come from different address maps")

    sensor_bits = layout.sensor_bit_mask
    actuator_bits = (layout.actuator_is_bit,) * m
    sensors = _normalize(current.sensors, sensor_bits)
    if previous is None:
        deltas = (0.0,) * n
    else:
        before = _normalize(previous.sensors, sensor_bits)
        deltas = tuple(c - p for c, p in zip(sensors, before))
    return FeatureVector(
        t=current.t,
        sensors=sensors,
        deltas=deltas,
        readbacks=_normalize(current.readbacks, actuator_bits),
        commands=_normalize(current.commands, actuator_bits),
    )


async def _read_block(client: ModbusClient, table: Table, start: int, count: int) -> List[int]:
    if table is Table.INPUT_REGISTERS:
        return await client.read_input_registers(start, count)
    if table is Table.HOLDING_REGISTERS:
        return await client.read_holding_registers(start, count)
    if table is Table.DISCRETE_INPUTS:
        return await client.read_discrete_inputs(start, count)
    return await client.read_coils(start, count)


async def poll_sample(client: ModbusClient, layout: PlcLayout, t: float) -> Optional[Snapshot]:
    """Read every mirrored point with one request per block.

    The PLC scan counter is read before and after; if a scan landed in
    between the snapshot is read once more. Returns None when the PLC does
    not answer.
    """
    try:
        for attempt in range(2):
            stale, scan = await client.read_input_registers(STALE_ADDRESS, 2)
            sensors: List[int] = []
            for table, start, count in layout.sensor_blocks:
                sensors.extend(await _read_block(client, table, start, count))
            readbacks = await _read_block(client, *layout.readback_block)
            commands = await _read_block(client, *layout.command_block)
            _, scan_after = await client.read_input_registers(STALE_ADDRESS, 2)
            if scan_after == scan:
                break
            logger.debug(f"PLC scanned during sample at t={t:.0f}s (attempt {attempt + 1})")
    except ModbusError as e:
        logger.warning(f"Sample at t={t:.0f}s dropped: {e}")
        return None
    return Snapshot(t=t, platform=layout.platform, sensors=tuple(sensors), readbacks=tuple(readbacks),
                    commands=tuple(commands), scan=scan_after, stale_scans=stale)


class CaptureWriter:
    """Append-only CSV capture; every row is flushed as it is written."""

    def __init__(self, path: Union[str, Path], layout: PlcLayout, label: int):
        self.path = Path(path)
        self.layout = layout
        self.label = int(label)
        self.rows = 0
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, 'w', encoding='utf-8', newline='')
        self._writer = csv.writer(self._file, lineterminator='\n')
        self._writer.writerow(capture_header(layout))
        self._file.flush()

    def write(self, vector: FeatureVector) -> None:
        self._writer.writerow([repr(float(vector.t))] + [repr(v) for v in vector.values] + [self.label])
        self._file.flush()
        self.rows += 1

    def close(self) -> None:
        if self._file and not self._file.closed:
            self._file.close()

    def __enter__(self) -> "CaptureWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


class Collector:
    """Polling client for one PLC, keeping the previous snapshot for deltas."""

    def __init__(self, platform: str, plc: Endpoint, timeout: float = 2.0, connect_timeout: float = 2.0):
        self.platform = platform
        self.layout = LAYOUTS[platform]
        self.client = ModbusClient(plc, timeout=timeout, connect_timeout=connect_timeout)
        self.logger = logging.getLogger(__name__)
        self.previous: Optional[Snapshot] = None
        self.writer: Optional[CaptureWriter] = None
        self.gaps: List[float] = []

    def begin(self, path: Union[str, Path], label: int) -> None:
        """Start a new capture file; deltas restart at zero."""
        self.end()
        self.writer = CaptureWriter(path, self.layout, label)
        self.previous = None
        self.gaps = []

    def end(self) -> int:
        rows = 0
        if self.writer:
            rows = self.writer.rows
            self.writer.close()
            self.writer = None
        return rows

    async def sample(self, t: float) -> Optional[FeatureVector]:
        snapshot = await poll_sample(self.client, self.layout, t)
        if snapshot is None:
            self.gaps.append(t)
            return None
        vector = featurize(snapshot, self.previous)
        self.previous = snapshot
        if self.writer:
            self.writer.write(vector)
        return vector

    async def close(self) -> None:
        self.end()
        await self.client.close()


@dataclass
class CaptureRecord:
    name: str
    path: str
    platform: str
    scenario: str = BENIGN
    category: Optional[str] = None
    stealthy: bool = False
    label: int = 0
    onset: Optional[float] = None
    cycle_s: float = 0.0
    rows: int = 0
    gaps: int = 0
    valid: bool = True
    seed: Optional[int] = None

    @property
    def row_count_ok(self) -> bool:
        return abs(self.rows - self.cycle_s) <= 1


@dataclass
class Manifest:
    """Run metadata plus one record per capture, stored as ``manifest.json``."""
    metadata: Dict[str, Any] = field(default_factory=dict)
    captures: List[CaptureRecord] = field(default_factory=list)

    def add(self, record: CaptureRecord) -> None:
        self.captures.append(record)

    def valid(self) -> List[CaptureRecord]:
        return [c for c in self.captures if c.valid]

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        document = {
            'metadata': {'written': time.strftime('%Y-%m-%dT%H:%M:%S'), **self.metadata},
            'captures': [asdict(c) for c in self.captures],
        }
        path.write_text(json.dumps(document, indent=2), encoding='utf-8')

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Manifest":
        document = json.loads(Path(path).read_text(encoding='utf-8'))
        return cls(metadata=document.get('metadata', {}),
                   captures=[CaptureRecord(**c) for c in document.get('captures', [])])


def load_capture(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path)


def feature_matrix(df: pd.DataFrame) -> np.ndarray:
    """Feature columns in capture order, as float rows."""
    columns = [c for c in df.columns if c[:2] in ("s_", "d_", "a_", "c_")]
    return df[columns].to_numpy(dtype=float)
