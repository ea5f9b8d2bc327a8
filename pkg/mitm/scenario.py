"""
Attack scenarios: which points get spoofed, how, and when.

A scenario file is YAML::

    platform: chem
    scenarios:
      - name: level_max
        category: SingleSensor
        stealthy: false
        onset: 15          # optional, capture-relative seconds
        end: null          # optional, null = until the capture ends
        rules:
          - point: tank_level
            transform: {set_constant: 65535}

Rule direction defaults from the point's table: input registers and
discrete inputs are spoofed in read responses travelling to the PLC,
holding registers and coils in write requests travelling to the plant.
"""

import logging
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import yaml

from plant.points import Point, PointMap

logger = logging.getLogger(__name__)

REGISTER_MAX = 0xFFFF
STEALTHY_OFFSET = 6554      # round(0.10 * 65535)
STEALTHY_SCALE = 0.10


class ScenarioError(ValueError):
    """Invalid scenario document or rule."""


class Category(str, Enum):
    SINGLE_SENSOR = "SingleSensor"
    SINGLE_ACTUATOR = "SingleActuator"
    MULTIPLE_SENSOR = "MultipleSensor"
    MULTIPLE_ACTUATOR = "MultipleActuator"
    COMPLEX = "Complex"


class Direction(str, Enum):
    SENSOR = "plant_to_plc"
    ACTUATOR = "plc_to_plant"


class TransformKind(str, Enum):
    SET_CONSTANT = "set_constant"
    ADD_OFFSET = "add_offset"
    SCALE = "scale"
    BIT_SET = "bit_set"


@dataclass(frozen=True)
class Transform:
    kind: TransformKind
    value: float

    def apply(self, old: int) -> int:
        """New register value or bit; registers clamp to 0..65535."""
        if self.kind is TransformKind.BIT_SET:
            return 1 if self.value else 0
        if self.kind is TransformKind.SET_CONSTANT:
            new = self.value
        elif self.kind is TransformKind.ADD_OFFSET:
            new = old + self.value
        else:
            new = old * self.value
        return int(min(max(round(new), 0), REGISTER_MAX))

    @property
    def stealthy(self) -> bool:
        """Whether the change stays within a tenth of the sensor range."""
        if self.kind is TransformKind.ADD_OFFSET:
            return abs(self.value) <= STEALTHY_OFFSET
        if self.kind is TransformKind.SCALE:
            return abs(self.value - 1.0) <= STEALTHY_SCALE + 1e-12
        return self.kind is TransformKind.BIT_SET

    @classmethod
    def parse(cls, entry: Mapping[str, Any]) -> "Transform":
        if not isinstance(entry, Mapping) or len(entry) != 1:
            raise ScenarioError(f"transform must be one '{{kind: value}}' entry, got {entry!r}")
        (kind, value), = entry.items()
        try:
            kind = TransformKind(kind)
        except ValueError:
            raise ScenarioError(f"unknown transform '{kind}'") from None
        if kind is TransformKind.BIT_SET:
            if value not in (0, 1, True, False):
                raise ScenarioError(f"bit_set takes 0 or 1, got {value!r}")
            return cls(kind, int(bool(value)))
        return cls(kind, float(value))

    def describe(self) -> str:
        return f"{self.kind.value}({self.value:g})"


@dataclass(frozen=True)
class SpoofRule:
    """One transform on one point, active over ``[onset, end]`` capture seconds."""
    point: Point
    transform: Transform
    direction: Direction
    onset: float = 0.0
    end: Optional[float] = None

    def __post_init__(self):
        bit = self.point.table.is_bit
        if bit and self.transform.kind is not TransformKind.BIT_SET:
            raise ScenarioError(f"{self.point.name} is a bit; only bit_set applies")
        if not bit and self.transform.kind is TransformKind.BIT_SET:
            raise ScenarioError(f"{self.point.name} is a register; bit_set does not apply")
        if self.direction is Direction.ACTUATOR and self.point.is_sensor:
            raise ScenarioError(f"{self.point.name} is read-only and never travels in a write")
        if self.end is not None and self.end < self.onset:
            raise ScenarioError(f"rule on {self.point.name} ends before it starts")

    def active(self, t: float) -> bool:
        return self.onset <= t and (self.end is None or t <= self.end)

    def rewrite(self, old: int) -> int:
        return self.transform.apply(old)


def default_direction(point: Point) -> Direction:
    return Direction.SENSOR if point.is_sensor else Direction.ACTUATOR


@dataclass(frozen=True)
class AttackScenario:
    name: str
    rules: Tuple[SpoofRule, ...] = ()
    declared_category: Optional[Category] = None
    stealthy: bool = False
    onset: float = 0.0
    end: Optional[float] = None
    platform: str = "chem"

    @property
    def benign(self) -> bool:
        return not self.rules

    @property
    def points(self) -> Tuple[Point, ...]:
        seen = {}
        for rule in self.rules:
            seen.setdefault(rule.point.name, rule.point)
        return tuple(seen.values())

    @property
    def category(self) -> Category:
        return categorize(self)

    def rules_for(self, server: str) -> Tuple[SpoofRule, ...]:
        return tuple(r for r in self.rules if r.point.server == server)

    def retimed(self, onset: float, end: Optional[float] = None) -> "AttackScenario":
        """Same attack with every rule moved to a new window."""
        rules = tuple(replace(r, onset=onset, end=end) for r in self.rules)
        return replace(self, rules=rules, onset=onset, end=end)

    def validate(self) -> None:
        if not self.rules:
            raise ScenarioError(f"scenario '{self.name}' has no rules")
        actual = categorize(self)
        if self.declared_category is not None and self.declared_category is not actual:
            raise ScenarioError(
                f"scenario '{self.name}' declares {self.declared_category.value} but its rules make it {actual.value}"
            )
        if self.stealthy:
            loud = [r for r in self.rules if not r.transform.stealthy]
            if loud:
                raise ScenarioError(
                    f"stealthy scenario '{self.name}' changes {loud[0].point.name} "
                    f"by more than a tenth of its range ({loud[0].transform.describe()})"
                )


BENIGN = AttackScenario(name="benign")


def categorize(scenario: Union[AttackScenario, Iterable[SpoofRule]]) -> Category:
    """Category from the distinct sensor and actuator points a scenario touches."""
    rules = scenario.rules if isinstance(scenario, AttackScenario) else tuple(scenario)
    if not rules:
        raise ValueError("cannot categorize a scenario without rules")
    points = {r.point.name: r.point for r in rules}.values()
    sensors = sum(1 for p in points if p.is_sensor)
    actuators = len(points) - sensors
    if sensors and actuators:
        return Category.COMPLEX
    if sensors:
        return Category.SINGLE_SENSOR if sensors == 1 else Category.MULTIPLE_SENSOR
    return Category.SINGLE_ACTUATOR if actuators == 1 else Category.MULTIPLE_ACTUATOR


def _parse_rule(raw: Mapping[str, Any], points: PointMap, onset: float, end: Optional[float]) -> SpoofRule:
    try:
        point = points[raw['point']]
    except KeyError as e:
        raise ScenarioError(str(e)) from None
    transform = Transform.parse(raw.get('transform'))
    direction = raw.get('direction')
    try:
        direction = Direction(direction) if direction else default_direction(point)
    except ValueError:
        raise ScenarioError(f"unknown direction '{direction}'") from None
    return SpoofRule(
        point=point,
        transform=transform,
        direction=direction,
        onset=float(raw.get('onset', onset)),
        end=raw.get('end', end),
    )


def parse_scenarios(document: Mapping[str, Any], points: PointMap,
                    default_onset: float = 0.0) -> List[AttackScenario]:
    """Build and validate every scenario in a loaded document."""
    if not isinstance(document, Mapping) or 'scenarios' not in document:
        raise ScenarioError("scenario document needs a 'scenarios' list")
    platform = document.get('platform', points.platform)
    if platform != points.platform:
        raise ScenarioError(f"scenarios are for '{platform}' but the point map is '{points.platform}'")

    scenarios: List[AttackScenario] = []
    names = set()
    for raw in document['scenarios'] or []:
        name = raw.get('name')
        if not name or name in names:
            raise ScenarioError(f"scenario name missing or duplicated: {name!r}")
        names.add(name)

        onset = float(raw['onset']) if raw.get('onset') is not None else default_onset
        end = raw.get('end')
        end = None if end is None else float(end)
        try:
            category = Category(raw['category']) if raw.get('category') else None
        except ValueError:
            raise ScenarioError(f"scenario '{name}': unknown category {raw['category']!r}") from None
        rules = tuple(_parse_rule(r, points, onset, end) for r in raw.get('rules') or [])

        scenario = AttackScenario(
            name=name,
            rules=rules,
            declared_category=category,
            stealthy=bool(raw.get('stealthy', False)),
            onset=onset,
            end=end,
            platform=platform,
        )
        scenario.validate()
        scenarios.append(scenario)

    logger.debug(f"Parsed {len(scenarios)} {platform} scenarios")
    return scenarios


def load_scenarios(path: Union[str, Path], points: PointMap, default_onset: float = 0.0) -> List[AttackScenario]:
    try:
        with open(path, 'r', encoding='utf-8') as f:
            document = yaml.safe_load(f)
    except FileNotFoundError:
        raise ScenarioError(f"scenario file {path} not found") from None
    except yaml.YAMLError as e:
        raise ScenarioError(f"scenario file {path} is not valid YAML: {e}") from e
    return parse_scenarios(document, points, default_onset)


def find_scenario(scenarios: Sequence[AttackScenario], name: str) -> AttackScenario:
    for scenario in scenarios:
        if scenario.name == name:
            return scenario
    raise ScenarioError(f"no scenario named '{name}'")
