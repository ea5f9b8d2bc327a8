"""
Continuous chemical process surrogate: one tank fed by two feeds, drained by
product and purge, with pressure and composition following first-order lags.
"""

import math
from dataclasses import dataclass, fields
from typing import Any, Dict, Mapping, Optional, Tuple

import numpy as np

REGISTER_MAX = 65535

SENSOR_NAMES = (
    "tank_pressure", "tank_level",
    "feed1_flow", "feed2_flow", "product_flow", "purge_flow",
    "composition_a", "composition_b", "composition_c",
)
VALVE_NAMES = ("feed1_valve", "feed2_valve", "product_valve", "purge_valve")

_SENSOR_FIELDS = {
    "tank_pressure": "tank_pressure",
    "tank_level": "tank_level",
    "feed1_flow": "flow_feed1",
    "feed2_flow": "flow_feed2",
    "product_flow": "flow_product",
    "purge_flow": "flow_purge",
    "composition_a": "composition_a",
    "composition_b": "composition_b",
    "composition_c": "composition_c",
}


@dataclass(frozen=True)
class ChemState:
    tank_level: float = 0.5
    tank_pressure: float = 0.5
    flow_feed1: float = 0.0
    flow_feed2: float = 0.0
    flow_product: float = 0.0
    flow_purge: float = 0.0
    composition_a: float = 1 / 3
    composition_b: float = 1 / 3
    composition_c: float = 1 / 3

    def sensor(self, name: str) -> float:
        return getattr(self, _SENSOR_FIELDS[name])

    def as_dict(self) -> Dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class ValveCommand:
    v_feed1: float = 0.0
    v_feed2: float = 0.0
    v_product: float = 0.0
    v_purge: float = 0.0

    @classmethod
    def from_registers(cls, raw: Tuple[int, int, int, int]) -> "ValveCommand":
        return cls(*(min(max(r, 0), REGISTER_MAX) / REGISTER_MAX for r in raw))

    def to_registers(self) -> Tuple[int, ...]:
        return tuple(to_register(v) for v in self.as_tuple())

    def as_tuple(self) -> Tuple[float, float, float, float]:
        return (self.v_feed1, self.v_feed2, self.v_product, self.v_purge)


@dataclass(frozen=True)
class ChemParams:
    """Surrogate constants; defaults put the reference loop on a 1000 s cycle."""
    k_in: float = 0.02
    k_out: float = 0.04
    f1_max: float = 1.0
    f2_max: float = 0.5
    feed1_availability: float = 1.0
    feed2_availability: float = 1.0
    pressure_base: float = 0.3
    pressure_level_gain: float = 0.6
    pressure_vent_gain: float = 0.5
    pressure_lag_s: float = 20.0
    composition_lag_s: float = 60.0
    feed1_composition: Tuple[float, float, float] = (0.7, 0.2, 0.1)
    feed2_composition: Tuple[float, float, float] = (0.1, 0.3, 0.6)
    substep_s: float = 0.25
    noise_sigma: float = 0.002

    @classmethod
    def from_config(cls, section: Optional[Mapping[str, Any]]) -> "ChemParams":
        section = dict(section or {})
        known = {f.name for f in fields(cls)}
        values = {k: (tuple(v) if isinstance(v, list) else v) for k, v in section.items() if k in known}
        return cls(**values)


def to_register(fraction: float) -> int:
    return int(min(max(round(fraction * REGISTER_MAX), 0), REGISTER_MAX))


def _clamp(x: float) -> float:
    return min(max(x, 0.0), 1.0)


def _feed_mix(params: ChemParams, f1: float, f2: float, fallback: np.ndarray) -> np.ndarray:
    w1 = f1 * params.f1_max
    w2 = f2 * params.f2_max
    if w1 + w2 <= 0:
        return fallback
    return (w1 * np.asarray(params.feed1_composition) + w2 * np.asarray(params.feed2_composition)) / (w1 + w2)


def step_chem(state: ChemState, valves: ValveCommand, dt: float,
              params: ChemParams = ChemParams()) -> ChemState:
    """Advance the process by ``dt`` seconds with explicit Euler substeps.

    Deterministic: noise is applied only when sensors are encoded.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")

    v1, v2, vp, vg = (_clamp(v) for v in valves.as_tuple())
    f1 = _clamp(v1 * params.feed1_availability)
    f2 = _clamp(v2 * params.feed2_availability)

    level = state.tank_level
    pressure = state.tank_pressure
    comp = np.array([state.composition_a, state.composition_b, state.composition_c])

    n = max(1, math.ceil(dt / params.substep_s - 1e-9))
    h = dt / n
    inflow = params.k_in * (f1 * params.f1_max + f2 * params.f2_max)
    target_comp = _feed_mix(params, f1, f2, comp)

    for _ in range(n):
        outflow = params.k_out * (vp * level + vg * level)
        level = _clamp(level + h * (inflow - outflow))

        target_p = _clamp(params.pressure_base + params.pressure_level_gain * level
                          - params.pressure_vent_gain * vg)
        pressure = _clamp(pressure + h * (target_p - pressure) / params.pressure_lag_s)

        comp = comp + h * (target_comp - comp) / params.composition_lag_s

    comp = np.clip(comp, 0.0, 1.0)
    total = comp.sum()
    comp = comp / total if total > 0 else np.full(3, 1 / 3)

    return ChemState(
        tank_level=level,
        tank_pressure=pressure,
        flow_feed1=f1,
        flow_feed2=f2,
        flow_product=_clamp(vp * level),
        flow_purge=_clamp(vg * level),
        composition_a=float(comp[0]),
        composition_b=float(comp[1]),
        composition_c=float(comp[2]),
    )


def encode_chem_sensors(state: ChemState, rng: Optional[np.random.Generator] = None,
                        noise_sigma: float = 0.002) -> Dict[str, int]:
    """Scale each sensor to a 16-bit register, adding seeded Gaussian noise.

    ``rng=None`` disables noise. Draws happen in SENSOR_NAMES order, one per
    sensor, so a seeded generator gives a reproducible stream.
    """
    registers = {}
    for name in SENSOR_NAMES:
        raw = state.sensor(name) * REGISTER_MAX
        if rng is not None and noise_sigma > 0:
            raw += rng.normal(0.0, noise_sigma * REGISTER_MAX)
        registers[name] = int(min(max(round(raw), 0), REGISTER_MAX))
    return registers


def equilibrium(params: ChemParams, level: float, pressure: float, product_flow: float,
                feed_ratio: float) -> Tuple[ChemState, ValveCommand]:
    """Steady state holding the given level, pressure and product flow.

    ``feed_ratio`` is feed2 flow over feed1 flow. Raises ValueError when the
    operating point needs a valve outside [0, 1].
    """
    if not 0 < level <= 1:
        raise ValueError(f"level must be in (0, 1], got {level}")
    v_purge = (params.pressure_base + params.pressure_level_gain * level - pressure) / params.pressure_vent_gain
    v_product = product_flow / level
    outflow = params.k_out * (product_flow + v_purge * level)
    f1 = outflow / (params.k_in * (params.f1_max + feed_ratio * params.f2_max))
    f2 = feed_ratio * f1
    v_feed1 = f1 / params.feed1_availability
    v_feed2 = f2 / params.feed2_availability

    valves = ValveCommand(v_feed1, v_feed2, v_product, v_purge)
    if any(not 0 <= v <= 1 for v in valves.as_tuple()):
        raise ValueError(f"operating point needs valves {valves.as_tuple()}")

    comp = _feed_mix(params, f1, f2, np.full(3, 1 / 3))
    state = ChemState(
        tank_level=level,
        tank_pressure=pressure,
        flow_feed1=f1,
        flow_feed2=f2,
        flow_product=product_flow,
        flow_purge=v_purge * level,
        composition_a=float(comp[0]),
        composition_b=float(comp[1]),
        composition_c=float(comp[2]),
    )
    return state, valves
