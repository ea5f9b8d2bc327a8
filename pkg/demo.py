#!/usr/bin/env python3
"""
PlantWatch Demo - one benign and one attacked production-line capture, a
one-class SVM trained on the first and monitoring the second.
"""

import asyncio
import tempfile
from pathlib import Path

from collector.main import load_capture
from detection.pipeline import DetectorPipeline, Monitor
from harness.campaign import platform_scenarios
from harness.testbed import Testbed
from mitm.scenario import find_scenario
from utils import Config, Logger, NetworkUtils, format_duration


async def demo_captures(config: Config, workdir: Path):
    """Demo: record a benign cycle, then the same cycle under attack"""
    print("🏭 PlantWatch Demo - production line")
    print("=" * 50)

    async with Testbed("line", config) as testbed:
        endpoint = testbed.plc.endpoint
        elapsed, ok = await NetworkUtils.wait_for_port(endpoint.host, endpoint.port)
        print(f"\n📡 PLC serving on {endpoint} ({'up' if ok else 'unreachable'} after {elapsed:.1f}ms)")
        rows = await testbed.capture(workdir / "benign.csv", 0)
        print(f"   Benign capture: {rows} rows")

    scenario = find_scenario(platform_scenarios(config, "line"), "machine_a_stopped_masked")
    async with Testbed("line", config, proxied=True) as testbed:
        rows = await testbed.capture(workdir / "attack.csv", 1, scenario)
        print(f"   Attack capture ({scenario.name}, onset {scenario.onset:.0f}s): {rows} rows")


def demo_detection(config: Config, workdir: Path):
    """Demo: train on the benign capture, replay the attack through the window"""
    print("\n🔍 One-class SVM with a sliding window:")
    print("-" * 50)

    benign = load_capture(workdir / "benign.csv")
    columns = [c for c in benign.columns if c[:2] in ("s_", "d_", "a_", "c_")]
    pipeline = DetectorPipeline.from_config(config, "ocsvm").fit(benign[columns].to_numpy(dtype=float), columns)

    size = config.get('line.window.size', 5)
    threshold = config.get('line.window.threshold', 0.6)
    for name in ("benign", "attack"):
        monitor = Monitor(pipeline, size, threshold)
        monitor.run_capture(load_capture(workdir / f"{name}.csv"))
        anomalous = sum(r.anomaly for r in monitor.records)
        if monitor.detected:
            print(f"   {name:<7} 🔴 ATTACK at t={format_duration(monitor.first_attack)} "
                  f"({anomalous} anomalous samples)")
        else:
            print(f"   {name:<7} 🟢 normal ({anomalous} anomalous samples)")


async def main():
    """Main demo function"""
    config = Config("config/config.yaml")
    config.override('clock.acceleration', 0)
    Logger.setup_logging(config)
    try:
        with tempfile.TemporaryDirectory() as tmp:
            await demo_captures(config, Path(tmp))
            demo_detection(config, Path(tmp))

        print("\n✅ Demo completed!")
        print("🔧 Edit config/config.yaml to customize your setup")
        print("📖 See README.md for the full command set")

    except Exception as e:
        print(f"❌ Demo error: {e}")

if __name__ == "__main__":
    asyncio.run(main())
