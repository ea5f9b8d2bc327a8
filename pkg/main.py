import asyncio
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import click
from rich.console import Console
from rich.table import Table

sys.path.insert(0, str(Path(__file__).parent))

from collector.main import CaptureRecord, Manifest, feature_columns, load_capture
from detection.pipeline import KINDS, DetectorPipeline, Monitor
from harness.campaign import CampaignConfig, platform_scenarios, reference_for, run_campaign
from harness.dataset import grade as grade_submission, load_submission, load_truth, split_dataset
from harness.evaluate import EvalReport, evaluate_captures, score_captures, sweep as sweep_grid, train_pipeline
from harness.testbed import Testbed, run_capture
from mitm.main import MitmProxy, RewriteLog, run_proxy
from mitm.scenario import BENIGN, find_scenario
from plant.clock import SimClock
from plc.main import LAYOUTS
from utils import Config, Endpoint, Logger, NetworkUtils, format_duration, format_rate

PLATFORMS = click.Choice(["chem", "line"])
console = Console()


def window_for(config: Config, platform: str, size: Optional[int], threshold: Optional[float]):
    return (int(size or config.get(f"{platform}.window.size", 15)),
            float(threshold if threshold is not None else config.get(f"{platform}.window.threshold", 0.6)))


def platform_for(pipeline: DetectorPipeline) -> str:
    """Platform whose capture columns the model was trained on."""
    for name, layout in LAYOUTS.items():
        if feature_columns(layout) == pipeline.columns:
            return name
    raise click.ClickException(f"model columns match no platform ({pipeline.n_features} features)")


def parse_floats(text: str) -> List[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise click.BadParameter(f"expected comma separated numbers, got '{text}'") from None


def parse_upstreams(config: Config, platform: str, items: Sequence[str]) -> Dict[str, Endpoint]:
    """``NAME=HOST:PORT`` (or ``NAME=PORT``) options, else the configured plant ports."""
    host = config.get('network.host', '127.0.0.1')
    if not items:
        ports = config.get(f"{platform}.servers", {}) or {}
        if not ports or any(int(p) == 0 for p in ports.values()):
            raise click.BadParameter("plant ports are ephemeral in the config; pass --upstream NAME=HOST:PORT",
                                     param_hint="--upstream")
        return {name: Endpoint(host, int(port)) for name, port in ports.items()}
    upstreams = {}
    for item in items:
        name, _, address = item.partition("=")
        server_host, _, port = address.rpartition(":")
        if not name or not port.isdigit():
            raise click.BadParameter(f"expected NAME=HOST:PORT, got '{item}'", param_hint="--upstream")
        upstreams[name] = Endpoint(server_host or host, int(port))
    return upstreams


def report_table(report: EvalReport) -> Table:
    table = Table(title=f"{report.platform} / {report.detector} "
                        f"(window {report.window_size}s, {format_rate(report.window_threshold)})")
    table.add_column("Metric")
    table.add_column("Value", justify="right")
    table.add_column("Reference", justify="right")
    reference = report.reference
    table.add_row("TP / FN", f"{report.tp} / {report.fn}", "")
    table.add_row("FP / TN", f"{report.fp} / {report.tn}", "")
    table.add_row("TPR", format_rate(report.tpr), format_rate(reference.get('tpr')))
    table.add_row("FPR", format_rate(report.fpr), format_rate(reference.get('fpr')))
    table.add_row("Median detection", format_duration(report.median_detection_time),
                  format_duration(reference.get('median_detection_s')))
    return table


def category_table(report: EvalReport) -> Table:
    table = Table(title="Detection by category")
    table.add_column("Category")
    table.add_column("Attacks", justify="right")
    table.add_column("Detected", justify="right")
    table.add_column("Rate", justify="right")
    for name, row in sorted(report.categories().items()):
        table.add_row(name, str(row['attacks']), str(row['detected']), format_rate(row['rate']))
    return table


@click.group()
@click.option('--config', 'config_path', default="config/config.yaml", show_default=True,
              help="Configuration file path")
@click.option('--verbose', '-v', is_flag=True, help="Enable verbose logging")
@click.pass_context
def cli(ctx: click.Context, config_path: str, verbose: bool) -> None:
    """PlantWatch - ICS testbed, MITM attacks and anomaly detection."""
    config = Config(config_path)
    if verbose:
        config.override('logging.level', 'DEBUG')
    Logger.setup_logging(config)
    ctx.obj = config


@cli.command()
@click.argument('platform', type=PLATFORMS)
@click.option('--seconds', type=float, default=0.0, help="Simulated seconds to run (0 = until interrupted)")
@click.option('--acceleration', type=float, help="Simulated seconds per wall second")
@click.pass_obj
def simulate(config: Config, platform: str, seconds: float, acceleration: Optional[float]) -> None:
    """Run a plant and its PLC without an attacker."""
    if acceleration is not None:
        config.override('clock.acceleration', acceleration)
    plc_port = int(config.get(f"{platform}.plc.port", 0))
    if plc_port and NetworkUtils.is_port_in_use(plc_port, config.get('network.host', '127.0.0.1')):
        raise click.ClickException(f"PLC port {plc_port} is already in use")

    async def run() -> None:
        async with Testbed(platform, config) as testbed:
            table = Table(title=f"{platform} testbed")
            table.add_column("Component")
            table.add_column("Endpoint")
            for name, endpoint in testbed.plant.endpoints().items():
                table.add_row(f"plant {name}", str(endpoint))
            table.add_row("PLC", str(testbed.plc.endpoint))
            console.print(table)
            while seconds <= 0 or testbed.clock.sim_time < seconds:
                await testbed.step()

    asyncio.run(run())


@cli.command()
@click.argument('platform', type=PLATFORMS)
@click.argument('scenario_name')
@click.option('--upstream', 'upstreams', multiple=True, help="Plant server as NAME=HOST:PORT")
@click.option('--onset', type=float, help="Seconds after proxy start before rules fire")
@click.option('--seconds', type=float, default=0.0, help="Stop after this many seconds (0 = until interrupted)")
@click.option('--log', 'log_path', type=click.Path(dir_okay=False), help="JSON-lines file of rewrites")
@click.pass_obj
def attack(config: Config, platform: str, scenario_name: str, upstreams: Sequence[str], onset: Optional[float],
           seconds: float, log_path: Optional[str]) -> None:
    """Run a standalone MITM proxy in front of running plant servers."""
    scenario = find_scenario(platform_scenarios(config, platform), scenario_name)
    if onset is not None:
        scenario = scenario.retimed(onset)
    targets = parse_upstreams(config, platform, upstreams)
    acceleration = float(config.get('clock.acceleration', 20.0))
    # Without a testbed to drive it, the proxy clock follows wall time.
    clock = SimClock(config.get('clock.dt', 1.0), acceleration if acceleration > 0 else 1.0)

    async def run() -> RewriteLog:
        for name, endpoint in targets.items():
            _, reachable = await NetworkUtils.wait_for_port(endpoint.host, endpoint.port, timeout=2.0)
            if not reachable:
                logging.getLogger(__name__).warning(f"Plant server {name} at {endpoint} is not accepting connections")

        def show(proxy: MitmProxy) -> None:
            table = Table(title=f"MITM proxy: {scenario.name}")
            table.add_column("Server")
            table.add_column("Listen")
            table.add_column("Upstream")
            for name, endpoint in proxy.endpoints().items():
                table.add_row(name, str(endpoint), str(targets[name]))
            console.print(table)

        return await run_proxy(config, platform, targets, scenario, clock, RewriteLog(log_path), seconds,
                               on_start=show)

    log = asyncio.run(run())
    console.print(f"{len(log)} values rewritten")


@cli.command()
@click.argument('platform', type=PLATFORMS)
@click.argument('output', type=click.Path(dir_okay=False))
@click.option('--scenario', 'scenario_name', default=BENIGN.name, show_default=True, help="Attack scenario name")
@click.option('--onset', type=float, help="Override the scenario onset (capture seconds)")
@click.option('--rows', type=int, help="Rows to capture (default: one control cycle)")
@click.option('--seed', type=int, help="Plant noise seed")
@click.option('--rewrites', type=click.Path(dir_okay=False), help="JSON-lines file of rewrites")
@click.pass_obj
def collect(config: Config, platform: str, output: str, scenario_name: str, onset: Optional[float],
            rows: Optional[int], seed: Optional[int], rewrites: Optional[str]) -> None:
    """Record one labeled capture."""
    scenario = BENIGN
    if scenario_name != BENIGN.name:
        scenario = find_scenario(platform_scenarios(config, platform), scenario_name)
        if onset is not None:
            scenario = scenario.retimed(onset)

    async def run() -> CaptureRecord:
        log = RewriteLog(rewrites) if rewrites else None
        try:
            return await run_capture(config, platform, output, scenario, seed=seed, rewrite_log=log, rows=rows)
        finally:
            if log is not None:
                log.close()

    record = asyncio.run(run())
    if not record.valid:
        console.print(f"[red]Capture {record.name} is invalid ({record.rows} rows, {record.gaps} gaps)[/red]")
        sys.exit(1)
    console.print(f"{record.rows} rows written to {output}")


@cli.command()
@click.argument('kind', type=click.Choice(KINDS))
@click.argument('captures', nargs=-1, required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--output', '-o', required=True, type=click.Path(dir_okay=False), help="Model file to write")
@click.option('--validation', multiple=True, type=click.Path(exists=True, dir_okay=False),
              help="Labeled capture for Gaussian epsilon tuning")
@click.option('--platform', type=PLATFORMS, default="chem", show_default=True, help="Window parameters to tune for")
@click.pass_obj
def train(config: Config, kind: str, captures: Sequence[str], output: str, validation: Sequence[str],
          platform: str) -> None:
    """Fit a detector on benign captures."""
    pipeline = train_pipeline(config, kind, captures, validation=validation or None,
                              window=window_for(config, platform, None, None))
    pipeline.save(output)
    table = Table(title=f"{kind} model")
    table.add_column("Field")
    table.add_column("Value")
    table.add_row("Features", str(pipeline.n_features))
    table.add_row("Threshold", f"{pipeline.threshold:.6g}")
    table.add_row("Training fingerprint", pipeline.fingerprint[:16])
    table.add_row("Written to", output)
    console.print(table)


@cli.command()
@click.argument('model', type=click.Path(exists=True, dir_okay=False))
@click.argument('captures', nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option('--window', 'size', type=int, help="Window length in samples")
@click.option('--threshold', type=float, help="Fraction of anomalous samples that raises an alarm")
@click.option('--live', is_flag=True, help="Monitor a fresh capture from a running testbed")
@click.option('--scenario', 'scenario_name', default=BENIGN.name, show_default=True, help="Scenario for --live")
@click.option('--output', type=click.Path(dir_okay=False), default="runs/live.csv", show_default=True,
              help="Capture file for --live")
@click.option('--log-dir', type=click.Path(file_okay=False), help="Write per-sample score logs here")
@click.pass_obj
def monitor(config: Config, model: str, captures: Sequence[str], size: Optional[int], threshold: Optional[float],
            live: bool, scenario_name: str, output: str, log_dir: Optional[str]) -> None:
    """Run a trained model and its sliding window over captures."""
    pipeline = DetectorPipeline.load(model)
    platform = platform_for(pipeline)
    size, threshold = window_for(config, platform, size, threshold)
    monitors: Dict[str, Monitor] = {}

    if live:
        scenario = BENIGN
        if scenario_name != BENIGN.name:
            scenario = find_scenario(platform_scenarios(config, platform), scenario_name)
        live_monitor = Monitor(pipeline, size, threshold)

        async def run() -> None:
            async with Testbed(platform, config, proxied=not scenario.benign) as testbed:
                await testbed.capture(output, int(not scenario.benign), scenario, monitor=live_monitor)

        asyncio.run(run())
        monitors[Path(output).name] = live_monitor
    elif not captures:
        raise click.UsageError("give capture files or --live")

    for path in captures:
        offline = Monitor(pipeline, size, threshold)
        offline.run_capture(load_capture(path))
        monitors[Path(path).name] = offline

    table = Table(title=f"{pipeline.kind} monitor (window {size}s, {format_rate(threshold)})")
    table.add_column("Capture")
    table.add_column("Samples", justify="right")
    table.add_column("Anomalous", justify="right")
    table.add_column("First alarm", justify="right")
    table.add_column("Verdict")
    for name, m in monitors.items():
        table.add_row(name, str(len(m.records)), str(sum(r.anomaly for r in m.records)),
                      "-" if m.first_attack is None else f"{m.first_attack:.0f}s",
                      "[red]attack[/red]" if m.detected else "[green]normal[/green]")
        if log_dir:
            m.save_log(Path(log_dir) / f"{Path(name).stem}.scores.csv")
    console.print(table)


def manifest_records(manifest_path: str):
    manifest = Manifest.load(manifest_path)
    training = manifest.metadata.get('training_capture')
    records = [r for r in manifest.valid() if r.name != training]
    if not records:
        raise click.ClickException(f"no valid evaluation captures in {manifest_path}")
    return manifest, records, Path(manifest_path).parent


@cli.command()
@click.argument('model', type=click.Path(exists=True, dir_okay=False))
@click.argument('manifest', type=click.Path(exists=True, dir_okay=False))
@click.option('--window', 'size', type=int, help="Window length in samples")
@click.option('--threshold', type=float, help="Fraction of anomalous samples that raises an alarm")
@click.option('--report', type=click.Path(dir_okay=False), help="Write the report as JSON")
@click.pass_obj
def evaluate(config: Config, model: str, manifest: str, size: Optional[int], threshold: Optional[float],
             report: Optional[str]) -> None:
    """Score every evaluation capture of a run and report TPR, FPR and detection time."""
    pipeline = DetectorPipeline.load(model)
    _, records, root = manifest_records(manifest)
    platform = records[0].platform
    size, threshold = window_for(config, platform, size, threshold)
    result = evaluate_captures(pipeline, records, root, size, threshold, reference_for(config, platform))
    console.print(report_table(result))
    console.print(category_table(result))
    if report:
        result.save(report)


@cli.command()
@click.argument('model', type=click.Path(exists=True, dir_okay=False))
@click.argument('manifest', type=click.Path(exists=True, dir_okay=False))
@click.option('--windows', default="5,10,15,20", show_default=True, help="Window lengths to try")
@click.option('--thresholds', default="0.6,0.7,0.8", show_default=True, help="Alarm fractions to try")
@click.option('--output', type=click.Path(dir_okay=False), help="Write the grid as JSON")
@click.pass_obj
def sweep(config: Config, model: str, manifest: str, windows: str, thresholds: str, output: Optional[str]) -> None:
    """TPR/FPR over a grid of window lengths and alarm fractions."""
    pipeline = DetectorPipeline.load(model)
    _, records, root = manifest_records(manifest)
    sizes = [int(w) for w in parse_floats(windows)]
    fractions = parse_floats(thresholds)
    grid = sweep_grid(score_captures(pipeline, records, root), sizes, fractions)

    table = Table(title=f"{pipeline.kind} sweep (TPR / FPR)")
    table.add_column("Window")
    for fraction in fractions:
        table.add_column(format_rate(fraction), justify="right")
    for size in sizes:
        cells = [grid.cell(size, fraction) for fraction in fractions]
        table.add_row(f"{size}s", *(f"{format_rate(c.tpr)} / {format_rate(c.fpr)}" for c in cells))
    console.print(table)
    for fraction, monotone in grid.fpr_monotone().items():
        if not monotone:
            console.print(f"[yellow]FPR rises with the window at {format_rate(fraction)}[/yellow]")
    if output:
        grid.save(output)


@cli.command()
@click.argument('manifest', type=click.Path(exists=True, dir_okay=False))
@click.argument('out_dir', type=click.Path(file_okay=False))
@click.option('--seed', type=int, help="Shuffle seed")
@click.pass_obj
def split(config: Config, manifest: str, out_dir: str, seed: Optional[int]) -> None:
    """Split a run into train, validation and unlabeled test sets."""
    result = split_dataset(
        Manifest.load(manifest), Path(manifest).parent, out_dir,
        train=int(config.get('harness.split.train', 1)),
        validation=int(config.get('harness.split.validation', 23)),
        test=int(config.get('harness.split.test', 58)),
        seed=int(seed if seed is not None else config.get('seeds.split', 11)),
    )
    attacks = sum(result.truth.values())
    console.print(f"train {len(result.train)}, validation {len(result.validation)}, "
                  f"test {len(result.test)} ({attacks} attacks) written to {out_dir}")


@cli.command()
@click.argument('truth', type=click.Path(exists=True, dir_okay=False))
@click.argument('submission', type=click.Path(exists=True, dir_okay=False))
def grade(truth: str, submission: str) -> None:
    """Grade a file,label submission against the test truth."""
    result = grade_submission(load_truth(truth), load_submission(submission))
    table = Table(title="Grade")
    table.add_column("TP", justify="right")
    table.add_column("FP", justify="right")
    table.add_column("TN", justify="right")
    table.add_column("FN", justify="right")
    table.add_column("Accuracy", justify="right")
    table.add_row(str(result.tp), str(result.fp), str(result.tn), str(result.fn), format_rate(result.accuracy))
    console.print(table)
    if result.wrong:
        console.print("Misclassified: " + ", ".join(result.wrong))


@cli.command()
@click.argument('platform', type=PLATFORMS)
@click.option('--output-dir', type=click.Path(file_okay=False), help="Run directory root")
@click.option('--benign', 'benign_captures', type=int, help="Benign evaluation captures")
@click.option('--scenario', 'scenario_names', multiple=True, help="Only these attack scenarios")
@click.option('--smoke', is_flag=True, help="Reduced run: 10 benign captures and 10 attacks")
@click.option('--detector', 'kinds', multiple=True, type=click.Choice(KINDS), help="Detectors to train")
@click.option('--acceleration', type=float, help="Simulated seconds per wall second")
@click.pass_obj
def campaign(config: Config, platform: str, output_dir: Optional[str], benign_captures: Optional[int],
             scenario_names: Sequence[str], smoke: bool, kinds: Sequence[str], acceleration: Optional[float]) -> None:
    """Capture, train and evaluate end to end."""
    if acceleration is not None:
        config.override('clock.acceleration', acceleration)
    settings = CampaignConfig.from_config(config, platform, output_dir, benign_captures, scenario_names, smoke)
    reports = asyncio.run(run_campaign(config, settings, kinds=kinds or KINDS))

    table = Table(title=f"{platform} campaign ({settings.benign_captures} benign, {len(settings.scenarios)} attacks)")
    for column in ("Detector", "TPR", "FPR", "Median detection"):
        table.add_column(column, justify="left" if column == "Detector" else "right")
    for kind, report in reports.items():
        table.add_row(kind, format_rate(report.tpr), format_rate(report.fpr),
                      format_duration(report.median_detection_time))
    console.print(table)
    if "ocsvm" in reports:
        console.print(category_table(reports["ocsvm"]))


def main():
    logger = logging.getLogger(__name__)
    try:
        cli()
    except KeyboardInterrupt:
        logger.info("Stopped by user")
    except Exception as e:
        logger.error(f"PlantWatch error: {e}")
        sys.exit(1)


if __name__ == "__main__":
    main()
