"""
PlantWatch campaigns - benign series, attack captures, training and
evaluation of every detector, all under one run directory.
"""

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from collector.main import CaptureRecord, Manifest
from detection.pipeline import KINDS
from harness.errors import CaptureAborted
from harness.evaluate import EvalReport, evaluate_scored, score_captures, sweep, train_pipeline
from harness.testbed import Testbed
from mitm.main import RewriteLog
from mitm.scenario import BENIGN, AttackScenario, load_scenarios
from plant.points import PointMap
from utils import Config, format_duration


def platform_scenarios(config: Config, platform: str, path: Optional[Union[str, Path]] = None) -> List[AttackScenario]:
    """The platform's scenario suite with onsets defaulting to the window size."""
    points = PointMap.from_config(platform, config.get(f"{platform}.points"))
    path = path or config.get(f"{platform}.scenarios", f"scenarios/{platform}.yaml")
    return load_scenarios(path, points, default_onset=float(config.get(f"{platform}.window.size", 15)))


def smoke_subset(scenarios: Sequence[AttackScenario], count: int) -> List[AttackScenario]:
    """Evenly spaced picks so every part of the suite is touched."""
    if count >= len(scenarios):
        return list(scenarios)
    return [scenarios[i * len(scenarios) // count] for i in range(count)]


@dataclass
class CampaignConfig:
    platform: str
    output_dir: Path
    benign_captures: int = 50
    scenarios: List[AttackScenario] = field(default_factory=list)
    acceleration: float = 20.0
    seed: int = 7
    window_size: int = 15
    window_threshold: float = 0.6

    @classmethod
    def from_config(cls, config: Config, platform: str, output_dir: Optional[Union[str, Path]] = None,
                    benign_captures: Optional[int] = None, scenario_names: Optional[Sequence[str]] = None,
                    smoke: bool = False) -> "CampaignConfig":
        scenarios = platform_scenarios(config, platform)
        if scenario_names:
            wanted = set(scenario_names)
            scenarios = [s for s in scenarios if s.name in wanted]
        if smoke:
            scenarios = smoke_subset(scenarios, int(config.get('harness.smoke_attacks', 10)))
            benign_captures = benign_captures or int(config.get('harness.smoke_benign_captures', 10))
        if benign_captures is None:
            benign_captures = int(config.get('harness.benign_captures', 50))
        return cls(
            platform=platform,
            output_dir=Path(output_dir or config.get('harness.output_dir', 'runs')),
            benign_captures=benign_captures,
            scenarios=scenarios,
            acceleration=float(config.get('clock.acceleration', 20.0)),
            seed=int(config.get('seeds.noise', 7)),
            window_size=int(config.get(f"{platform}.window.size", 15)),
            window_threshold=float(config.get(f"{platform}.window.threshold", 0.6)),
        )


class Campaign:
    """Runs captures for one platform and keeps their manifest."""

    def __init__(self, config: Config, settings: CampaignConfig):
        self.config = config.copy()
        self.config.override('clock.acceleration', settings.acceleration)
        self.config.override('seeds.noise', settings.seed)
        self.settings = settings
        self.platform = settings.platform
        self.run_dir = Path(settings.output_dir) / settings.platform
        self.logger = logging.getLogger(__name__)
        self.manifest = Manifest(metadata={
            'platform': self.platform,
            'seed': settings.seed,
            'acceleration': settings.acceleration,
            'window': {'size': settings.window_size, 'threshold': settings.window_threshold},
        })

    @property
    def manifest_path(self) -> Path:
        return self.run_dir / "manifest.json"

    async def _record(self, testbed: Testbed, name: str, scenario: AttackScenario,
                      warmup_s: Optional[float] = None) -> CaptureRecord:
        path = f"captures/{name}.csv"
        record = await testbed.record(self.run_dir / path, scenario, name=name, stored_path=path, warmup_s=warmup_s)
        self.manifest.add(record)
        return record

    async def run_benign_series(self, count: int, prefix: str = "benign") -> List[CaptureRecord]:
        """Consecutive benign captures from one running testbed.

        After an aborted capture the testbed is rebuilt and warmed up again.
        """
        records: List[CaptureRecord] = []
        testbed: Optional[Testbed] = None
        started = time.monotonic()
        try:
            for i in range(count):
                warmup = None
                if testbed is None:
                    testbed = Testbed(self.platform, self.config, proxied=False, seed=self.settings.seed)
                    await testbed.start()
                elif records:
                    warmup = testbed.clock.dt
                record = await self._record(testbed, f"{prefix}_{i:03d}", BENIGN, warmup_s=warmup)
                records.append(record)
                if not record.valid:
                    await testbed.stop()
                    testbed = None
        finally:
            if testbed is not None:
                await testbed.stop()
        self.logger.info(f"{count} benign captures in {format_duration(time.monotonic() - started)}")
        return records

    async def run_attack(self, scenario: AttackScenario) -> CaptureRecord:
        log = RewriteLog(self.run_dir / "rewrites" / f"{scenario.name}.jsonl")
        testbed = Testbed(self.platform, self.config, proxied=True, seed=self.settings.seed, rewrite_log=log)
        try:
            await testbed.start()
            return await self._record(testbed, scenario.name, scenario)
        finally:
            await testbed.stop()
            log.close()

    async def run_attacks(self, scenarios: Sequence[AttackScenario]) -> List[CaptureRecord]:
        records = []
        for i, scenario in enumerate(scenarios, 1):
            self.logger.info(f"Attack {i}/{len(scenarios)}: {scenario.name}")
            records.append(await self.run_attack(scenario))
        return records

    def save_manifest(self) -> Path:
        self.manifest.save(self.manifest_path)
        return self.manifest_path


def reference_for(config: Config, platform: str) -> Dict[str, Any]:
    return dict(config.get(f"harness.reference.{platform}", {}) or {})


async def run_campaign(config: Config, settings: CampaignConfig,
                       kinds: Sequence[str] = KINDS) -> Dict[str, EvalReport]:
    """Benign series, attack suite, then train and evaluate every detector kind.

    Capture 0 of the benign series trains; the rest and every attack
    capture are evaluated. Models, reports and the sweep land in the run
    directory next to the manifest.
    """
    campaign = Campaign(config, settings)
    logger = campaign.logger
    benign = await campaign.run_benign_series(settings.benign_captures + 1)
    attacks = await campaign.run_attacks(settings.scenarios)
    campaign.manifest.metadata['training_capture'] = benign[0].name
    campaign.save_manifest()

    training = benign[0]
    if not training.valid:
        raise CaptureAborted(f"training capture {training.name} is invalid")
    evaluation = [r for r in benign[1:] + attacks if r.valid]
    window = (settings.window_size, settings.window_threshold)
    reference = reference_for(config, settings.platform)

    reports: Dict[str, EvalReport] = {}
    for kind in kinds:
        pipeline = train_pipeline(config, kind, [campaign.run_dir / training.path], window=window)
        pipeline.save(campaign.run_dir / "models" / f"{kind}.json")
        scored = score_captures(pipeline, evaluation, campaign.run_dir)
        report = evaluate_scored(scored, *window, detector=kind, reference=reference)
        report.save(campaign.run_dir / "reports" / f"{kind}.json")
        reports[kind] = report
        logger.info(f"{kind}: TPR {report.tpr} FPR {report.fpr} median detection {report.median_detection_time}")

        if kind == "ocsvm":
            grid = sweep(scored, config.get('harness.sweep.windows', [5, 10, 15, 20]),
                         config.get('harness.sweep.thresholds', [0.6, 0.7, 0.8]))
            grid.save(campaign.run_dir / "reports" / "sweep.json")
    return reports
