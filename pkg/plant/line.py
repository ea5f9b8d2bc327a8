"""
Discrete production line surrogate: two independent cells, each a feed belt,
a robotic arm, a machining center and an exit belt.
"""

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Mapping, Optional, Sequence, Tuple

REGISTER_MAX = 65535
CENTERS = ("a", "b")

SENSOR_BIT_NAMES = (
    "feed_a_at_end", "feed_b_at_end",
    "exit_a_occupied", "exit_b_occupied",
    "arm_a_holding", "arm_b_holding",
    "machine_a_busy", "machine_b_busy",
    "machine_a_done", "machine_b_done",
)
POSITION_NAMES = ("arm_a_position", "arm_b_position")
COIL_NAMES = (
    "feed_a", "feed_b",
    "exit_a", "exit_b",
    "arm_a_forward", "arm_a_back",
    "arm_b_forward", "arm_b_back",
    "grip_a", "grip_b",
    "release_a", "release_b",
    "machine_a", "machine_b",
    "running_light",
)
COIL_INDEX = {name: i for i, name in enumerate(COIL_NAMES)}
SENSOR_BIT_INDEX = {name: i for i, name in enumerate(SENSOR_BIT_NAMES)}


class Phase(str, Enum):
    IDLE = "idle"
    LOADING = "loading"
    MACHINING = "machining"
    UNLOADING = "unloading"


NEXT_PHASE = {
    Phase.IDLE: Phase.LOADING,
    Phase.LOADING: Phase.MACHINING,
    Phase.MACHINING: Phase.UNLOADING,
    Phase.UNLOADING: Phase.IDLE,
}


class Part(str, Enum):
    RAW = "raw"
    FINISHED = "finished"


@dataclass(frozen=True)
class LineParams:
    belt_length_s: float = 30.0
    arm_rate: float = 0.05
    machining_dwell_s: float = 100.0
    position_eps: float = 1e-6

    @property
    def belt_speed(self) -> float:
        return 1.0 / self.belt_length_s

    @classmethod
    def from_config(cls, section: Optional[Mapping[str, Any]]) -> "LineParams":
        section = dict(section or {})
        return cls(**{k: v for k, v in section.items() if k in cls.__dataclass_fields__})


@dataclass(frozen=True)
class CenterState:
    """One cell. Positions run from 0 (conveyor side) to 1 (machine side)."""
    phase: Phase = Phase.IDLE
    feed_part: Optional[float] = None
    arm_position: float = 0.0
    holding: Optional[Part] = None
    machine_part: Optional[Part] = None
    machine_timer: float = 0.0
    machining: bool = False
    exit_part: Optional[float] = None
    parts_out: int = 0


@dataclass(frozen=True)
class LineState:
    centers: Tuple[CenterState, CenterState] = field(default_factory=lambda: (CenterState(), CenterState()))
    elapsed: float = 0.0

    def center(self, name: str) -> CenterState:
        return self.centers[CENTERS.index(name)]


@dataclass(frozen=True)
class LineIo:
    """Wire view of the line: 10 sensor bits, 2 position registers, 15 coils."""
    sensor_bits: Tuple[int, ...] = (0,) * len(SENSOR_BIT_NAMES)
    positions: Tuple[int, ...] = (0,) * len(POSITION_NAMES)
    coils: Tuple[int, ...] = (0,) * len(COIL_NAMES)

    def __post_init__(self):
        if len(self.sensor_bits) != 10 or len(self.positions) != 2 or len(self.coils) != 15:
            raise ValueError("line I/O is 10 sensor bits, 2 positions and 15 coils")


def _coil(coils: Sequence[int], name: str) -> bool:
    return bool(coils[COIL_INDEX[name]])


def _advance(position: float, delta: float, eps: float) -> float:
    position = min(max(position + delta, 0.0), 1.0)
    if position >= 1.0 - eps:
        return 1.0
    if position <= eps:
        return 0.0
    return position


def _step_center(c: CenterState, name: str, coils: Sequence[int], dt: float,
                 params: LineParams) -> CenterState:
    eps = params.position_eps
    grip = _coil(coils, f"grip_{name}")
    release = _coil(coils, f"release_{name}")
    at_conveyor = c.arm_position <= eps
    at_machine = c.arm_position >= 1.0 - eps
    feed_at_end = c.feed_part is not None and c.feed_part >= 1.0 - eps

    # Gripper actions are the only phase transitions.
    if grip and not release and c.holding is None:
        if c.phase is Phase.IDLE and at_conveyor and feed_at_end:
            c = replace(c, holding=Part.RAW, feed_part=None, phase=Phase.LOADING)
        elif c.phase is Phase.MACHINING and at_machine and c.machine_part is Part.FINISHED:
            c = replace(c, holding=Part.FINISHED, machine_part=None, machine_timer=0.0,
                        phase=Phase.UNLOADING)
    elif release and not grip and c.holding is not None:
        if c.holding is Part.RAW and at_machine and c.machine_part is None:
            c = replace(c, holding=None, machine_part=Part.RAW, machine_timer=0.0, phase=Phase.MACHINING)
        elif c.holding is Part.FINISHED and at_conveyor and c.exit_part is None:
            c = replace(c, holding=None, exit_part=0.0, phase=Phase.IDLE)

    if _coil(coils, f"feed_{name}"):
        start = 0.0 if c.feed_part is None else c.feed_part
        c = replace(c, feed_part=_advance(start, params.belt_speed * dt, eps))

    forward = _coil(coils, f"arm_{name}_forward")
    back = _coil(coils, f"arm_{name}_back")
    if forward != back:
        direction = 1.0 if forward else -1.0
        c = replace(c, arm_position=_advance(c.arm_position, direction * params.arm_rate * dt, eps))

    machining = _coil(coils, f"machine_{name}") and c.machine_part is Part.RAW
    if machining:
        timer = c.machine_timer + dt
        part = Part.FINISHED if timer >= params.machining_dwell_s - 1e-9 else Part.RAW
        c = replace(c, machine_timer=timer, machine_part=part)
    if machining != c.machining:
        c = replace(c, machining=machining)

    if _coil(coils, f"exit_{name}") and c.exit_part is not None:
        position = _advance(c.exit_part, params.belt_speed * dt, eps)
        if position >= 1.0:
            c = replace(c, exit_part=None, parts_out=c.parts_out + 1)
        else:
            c = replace(c, exit_part=position)

    return c


def step_line(state: LineState, coils: Sequence[int], dt: float,
              params: LineParams = LineParams()) -> LineState:
    """Advance both cells by ``dt``; nothing moves unless its coil is on."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    if len(coils) != len(COIL_NAMES):
        raise ValueError(f"expected {len(COIL_NAMES)} coils, got {len(coils)}")
    centers = tuple(_step_center(c, name, coils, dt, params) for c, name in zip(state.centers, CENTERS))
    return LineState(centers=centers, elapsed=state.elapsed + dt)


def encode_line_sensors(state: LineState, params: LineParams = LineParams()) -> LineIo:
    bits = [0] * len(SENSOR_BIT_NAMES)
    positions = []
    for name, c in zip(CENTERS, state.centers):
        bits[SENSOR_BIT_INDEX[f"feed_{name}_at_end"]] = int(
            c.feed_part is not None and c.feed_part >= 1.0 - params.position_eps)
        bits[SENSOR_BIT_INDEX[f"exit_{name}_occupied"]] = int(c.exit_part is not None)
        bits[SENSOR_BIT_INDEX[f"arm_{name}_holding"]] = int(c.holding is not None)
        bits[SENSOR_BIT_INDEX[f"machine_{name}_busy"]] = int(c.machining)
        bits[SENSOR_BIT_INDEX[f"machine_{name}_done"]] = int(c.machine_part is Part.FINISHED)
        positions.append(int(round(c.arm_position * REGISTER_MAX)))
    return LineIo(sensor_bits=tuple(bits), positions=tuple(positions))
