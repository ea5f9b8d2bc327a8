"""
Control programs run by the soft PLC: PI loops with a periodic production
recipe for the chemical plant, and a takt-paced sequencer for the line.
"""

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

from plant.chem import ChemParams, ChemState, ValveCommand, equilibrium
from plant.line import CENTERS, COIL_INDEX, COIL_NAMES, SENSOR_BIT_INDEX


@dataclass(frozen=True)
class PiState:
    setpoint: float
    integral: float
    output: float
    saturated: bool


class PiController:
    """Positional PI with bias and anti-windup.

    The integral is frozen whenever the unclamped output would leave
    [out_min, out_max]. Reverse-acting loops use measurement - setpoint as
    their error.
    """

    def __init__(self, kp: float, ki: float, setpoint: float = 0.0, bias: float = 0.0,
                 out_min: float = 0.0, out_max: float = 1.0, reverse: bool = False):
        self.kp = kp
        self.ki = ki
        self.setpoint = setpoint
        self.bias = bias
        self.out_min = out_min
        self.out_max = out_max
        self.reverse = reverse
        self.integral = 0.0
        self.output = min(max(bias, out_min), out_max)
        self.saturated = False

    def update(self, measurement: float, dt: float = 1.0, setpoint: Optional[float] = None) -> float:
        if setpoint is not None:
            self.setpoint = setpoint
        error = measurement - self.setpoint if self.reverse else self.setpoint - measurement
        integral = self.integral + self.ki * error * dt
        unclamped = self.bias + self.kp * error + integral
        self.saturated = not self.out_min < unclamped < self.out_max
        if not self.saturated:
            self.integral = integral
        self.output = min(max(self.bias + self.kp * error + self.integral, self.out_min), self.out_max)
        return self.output

    def reset(self, bias: Optional[float] = None) -> None:
        if bias is not None:
            self.bias = bias
        self.integral = 0.0
        self.output = min(max(self.bias, self.out_min), self.out_max)

    def snapshot(self) -> PiState:
        return PiState(self.setpoint, self.integral, self.output, self.saturated)

    def restore(self, state: PiState) -> None:
        self.setpoint = state.setpoint
        self.integral = state.integral
        self.output = state.output
        self.saturated = state.saturated


@dataclass(frozen=True)
class ChemRecipe:
    """Production demand varying with the plant's control cycle."""
    cycle_s: float = 1000.0
    product_mean: float = 0.25
    product_amplitude: float = 0.05
    ratio_mean: float = 0.5
    ratio_amplitude: float = 0.2
    ratio_phase: float = math.pi / 3

    def product_flow(self, t: float) -> float:
        return self.product_mean + self.product_amplitude * math.sin(2 * math.pi * t / self.cycle_s)

    def feed_ratio(self, t: float) -> float:
        return self.ratio_mean + self.ratio_amplitude * math.sin(2 * math.pi * t / self.cycle_s + self.ratio_phase)


_DEFAULT_LOOPS = {
    'level': {'kp': 4.0, 'ki': 0.1},
    'ratio': {'kp': 0.5, 'ki': 0.2},
    'product': {'kp': 0.4, 'ki': 0.2},
    'pressure': {'kp': 1.0, 'ki': 0.05},
}


class ChemController:
    """Four PI loops: level via feed1, feed ratio via feed2, product flow, pressure via purge."""

    def __init__(self, section: Optional[Mapping[str, Any]] = None, cycle_s: float = 1000.0,
                 plant_params: ChemParams = ChemParams()):
        section = dict(section or {})
        recipe = dict(section.get('recipe', {}) or {})
        self.recipe = ChemRecipe(cycle_s=cycle_s, **recipe)
        self.level_setpoint = float(section.get('level_setpoint', 0.5))
        self.pressure_setpoint = float(section.get('pressure_setpoint', 0.55))
        self.plant_params = plant_params

        gains = {name: {**default, **(section.get('loops', {}) or {}).get(name, {})}
                 for name, default in _DEFAULT_LOOPS.items()}
        self.level = PiController(setpoint=self.level_setpoint, **gains['level'])
        self.ratio = PiController(**gains['ratio'])
        self.product = PiController(**gains['product'])
        self.pressure = PiController(setpoint=self.pressure_setpoint, reverse=True, **gains['pressure'])
        self.start(0.0)

    def operating_point(self, t: float) -> Tuple[ChemState, ValveCommand]:
        """Plant state and valve positions the recipe asks for at time ``t``."""
        return equilibrium(self.plant_params, self.level_setpoint, self.pressure_setpoint,
                           self.recipe.product_flow(t), self.recipe.feed_ratio(t))

    def start(self, t: float) -> None:
        """Seed every loop's bias with the equilibrium valve position at ``t``."""
        _, valves = self.operating_point(t)
        self.level.reset(valves.v_feed1)
        self.ratio.reset(valves.v_feed2)
        self.product.reset(valves.v_product)
        self.pressure.reset(valves.v_purge)

    def compute(self, sensors: Mapping[str, float], t: float, dt: float = 1.0) -> ValveCommand:
        v_feed1 = self.level.update(sensors['tank_level'], dt)
        ratio_target = self.recipe.feed_ratio(t) * sensors['feed1_flow']
        v_feed2 = self.ratio.update(sensors['feed2_flow'], dt, setpoint=ratio_target)
        v_product = self.product.update(sensors['product_flow'], dt, setpoint=self.recipe.product_flow(t))
        v_purge = self.pressure.update(sensors['tank_pressure'], dt)
        return ValveCommand(v_feed1, v_feed2, v_product, v_purge)

    @property
    def loops(self) -> Tuple[PiController, ...]:
        return (self.level, self.ratio, self.product, self.pressure)

    def snapshot(self) -> Tuple[PiState, ...]:
        return tuple(loop.snapshot() for loop in self.loops)

    def restore(self, states: Sequence[PiState]) -> None:
        """Roll every loop back to a snapshot."""
        for loop, state in zip(self.loops, states):
            loop.restore(state)


class Step(str, Enum):
    WAIT_TAKT = "wait_takt"
    FEED = "feed"
    PICK = "pick"
    TO_MACHINE = "to_machine"
    LOAD = "load"
    MACHINING = "machining"
    UNLOAD_PICK = "unload_pick"
    TO_CONVEYOR = "to_conveyor"
    DROP = "drop"
    EXIT = "exit"


_STEP_COIL = {
    Step.FEED: "feed_{c}",
    Step.PICK: "grip_{c}",
    Step.TO_MACHINE: "arm_{c}_forward",
    Step.LOAD: "release_{c}",
    Step.MACHINING: "machine_{c}",
    Step.UNLOAD_PICK: "grip_{c}",
    Step.TO_CONVEYOR: "arm_{c}_back",
    Step.DROP: "release_{c}",
    Step.EXIT: "exit_{c}",
}


class CenterSequencer:
    """Step chain for one cell; a new part is started once per takt."""

    def __init__(self, center: str, offset_s: float, takt_s: float, eps: float = 1e-3):
        self.center = center
        self.takt_s = takt_s
        self.eps = eps
        self.step = Step.WAIT_TAKT
        self.next_start = offset_s

    def _bit(self, bits: Sequence[int], pattern: str) -> bool:
        return bool(bits[SENSOR_BIT_INDEX[pattern.format(c=self.center)]])

    def update(self, bits: Sequence[int], position: float, t: float) -> Step:
        holding = self._bit(bits, "arm_{c}_holding")
        s = self.step
        if s is Step.WAIT_TAKT:
            if t >= self.next_start - 1e-9:
                while self.next_start <= t + 1e-9:
                    self.next_start += self.takt_s
                s = Step.FEED
        elif s is Step.FEED and self._bit(bits, "feed_{c}_at_end"):
            s = Step.PICK
        elif s is Step.PICK and holding:
            s = Step.TO_MACHINE
        elif s is Step.TO_MACHINE and position >= 1.0 - self.eps:
            s = Step.LOAD
        elif s is Step.LOAD and not holding:
            s = Step.MACHINING
        elif s is Step.MACHINING and self._bit(bits, "machine_{c}_done"):
            s = Step.UNLOAD_PICK
        elif s is Step.UNLOAD_PICK and holding:
            s = Step.TO_CONVEYOR
        elif s is Step.TO_CONVEYOR and position <= self.eps:
            s = Step.DROP
        elif s is Step.DROP and not holding:
            s = Step.EXIT
        elif s is Step.EXIT and not self._bit(bits, "exit_{c}_occupied"):
            s = Step.WAIT_TAKT
        self.step = s
        return s

    def coil(self) -> Optional[str]:
        pattern = _STEP_COIL.get(self.step)
        return pattern.format(c=self.center) if pattern else None


class LineSequencer:
    """Both cells, paced by the takt with per-cell offsets."""

    def __init__(self, section: Optional[Mapping[str, Any]] = None):
        section = dict(section or {})
        takt = float(section.get('takt_s', 400.0))
        offsets = section.get('offsets_s', {'a': 0.0, 'b': 150.0}) or {}
        eps = float(section.get('position_eps', 1e-3))
        self.centers: Dict[str, CenterSequencer] = {
            c: CenterSequencer(c, float(offsets.get(c, 0.0)), takt, eps) for c in CENTERS
        }

    def compute(self, bits: Sequence[int], positions: Sequence[float], t: float) -> Tuple[int, ...]:
        coils = [0] * len(COIL_NAMES)
        for index, center in enumerate(CENTERS):
            sequencer = self.centers[center]
            sequencer.update(bits, positions[index], t)
            name = sequencer.coil()
            if name:
                coils[COIL_INDEX[name]] = 1
        coils[COIL_INDEX["running_light"]] = int(
            any(s.step is not Step.WAIT_TAKT for s in self.centers.values()))
        return tuple(coils)

    def steps(self) -> Dict[str, Step]:
        return {c: s.step for c, s in self.centers.items()}
