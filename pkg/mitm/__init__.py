"""Scenario-driven Modbus man-in-the-middle proxy."""

from mitm.main import MitmProxy, RewriteLog, RewriteRecord, run_proxy
from mitm.rewrite import RequestTracker, Rewrite, apply_rules, rewrite_frame
from mitm.scenario import (
    BENIGN, AttackScenario, Category, Direction, ScenarioError, SpoofRule, Transform, TransformKind,
    categorize, find_scenario, load_scenarios, parse_scenarios,
)
