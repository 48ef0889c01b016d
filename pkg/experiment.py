#!/usr/bin/env python3
"""
Experiment Harness
Runs seeded replications of a scenario (optionally swept along one axis),
writes per-client and aggregate results, and compares finished runs.

Usage:
    python experiment.py run scenario_config.json --out results/base
    python experiment.py run configs/beta_sweep.json --out results/beta --replications 20
    python experiment.py compare results/lru/base results/rbcrh/base
"""

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import pandas as pd

from cache import snapshot_frame
from config import apply_overrides, build_scenario, config_hash, load_config
from error_handling import ConfigError, ExperimentIOError, SimulationError, handle_simulation_error
from metrics import (AGGREGATE_METRICS, ReplicationReport, aggregate, read_json, replication_report,
                     write_clients_csv, write_json)
from scheduler import build_world, run
from workload import ArrivalPlan, save_arrival_plan

__version__ = "1.0.0"

logger = logging.getLogger(__name__)

# keys that must match for two result directories to be comparable
COMPARABLE_KEYS = ['num_slots', 'ladder', 'slot_len', 'chunk_len']


class SweepAxis(Enum):
    BETA = "beta"
    ARRIVAL_INTERVAL = "arrival_interval"
    RETENTION_CURVE = "retention_curve"
    CACHE_POLICY = "cache_policy"
    STRATEGY = "strategy"

    @classmethod
    def parse(cls, name: str) -> 'SweepAxis':
        for axis in cls:
            if name.upper() == axis.name or name == axis.value:
                return axis
        raise ConfigError(f"sweep_axis: unknown axis '{name}' (use one of {[a.name for a in cls]})",
                          field='sweep_axis')


@dataclass
class SweepSpec:
    """One axis swept over ``values``; every other key comes from ``base``."""
    axis: Optional[SweepAxis]
    values: List[Any]
    replications: int
    base: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.axis is not None and not self.values:
            raise ConfigError("sweep_values: must be non-empty when sweep_axis is set", field='sweep_values')
        if not isinstance(self.replications, int) or self.replications < 1:
            raise ConfigError("replications: must be an integer >= 1", field='replications')

    @classmethod
    def from_config(cls, config: Dict[str, Any]) -> 'SweepSpec':
        axis_name = config.get('sweep_axis')
        axis = SweepAxis.parse(axis_name) if axis_name else None
        return cls(axis, list(config.get('sweep_values') or []), config.get('replications', 1), config)

    def points(self) -> List[Tuple[str, Dict[str, Any]]]:
        """(label, configuration) per sweep point, in value order."""
        if self.axis is None:
            return [("base", self.base)]
        points = []
        for value in self.values:
            point = apply_overrides(self.base, sweep_values=[])
            point['sweep_axis'] = None
            if self.axis is SweepAxis.RETENTION_CURVE:
                point['videos'] = [dict(video, retention_curve=value) for video in point['videos']]
            else:
                point[self.axis.value] = value
            points.append((f"{self.axis.value}={value}", point))
        return points


def run_replication(task: Tuple[Dict[str, Any], int, int]) -> Tuple[ReplicationReport, pd.DataFrame, ArrivalPlan]:
    """Simulate one seed; returns the report, the cache snapshot and the arrival plan."""
    config, replication, seed = task
    scenario = build_scenario(config)
    world = build_world(scenario, seed)
    ledger = run(world)
    report = replication_report(replication, seed, world.sessions, ledger,
                                [cache.stats for cache in world.caches.values()], world.total_utility)
    summary = report.summary
    logger.info(f"Replication {replication} (seed {seed}): avg bitrate {summary['avg_bitrate'] or 0:.3f} Mbps, "
                f"backhaul {summary['backhaul_mb'] or 0:.1f} Mb/client, miss {summary['miss_pct'] or 0:.1f}%")
    return report, snapshot_frame(world.caches.values()), world.plan


def run_point(label: str, config: Dict[str, Any], seeds: Sequence[int], out_dir: Path,
              workers: int = 1, dump_cache: bool = False, export_plan: bool = False) -> Path:
    """Run every replication of one sweep point and write its three result files."""
    point_dir = out_dir / label
    try:
        point_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise ExperimentIOError(f"Cannot create {point_dir}: {e}", str(point_dir))

    tasks = [(config, j + 1, seed) for j, seed in enumerate(seeds)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_replication, tasks))
    else:
        results = [run_replication(task) for task in tasks]

    reports = [report for report, _, _ in results]
    for report, snapshot, plan in results:
        if dump_cache:
            path = point_dir / f"cache_rep{report.replication}.csv"
            try:
                snapshot.to_csv(path, index=False)
            except OSError as e:
                raise ExperimentIOError(f"Cannot write {path}: {e}", str(path))
        if export_plan:
            save_arrival_plan(plan, point_dir / f"plan_rep{report.replication}.csv")

    write_clients_csv(reports, point_dir / "clients.csv")
    write_json(aggregate(reports).to_dict(), point_dir / "aggregate.json")
    write_json({
        'point': label,
        'config_hash': config_hash(config),
        'config': config,
        'seeds': list(seeds),
        'version': __version__,
    }, point_dir / "manifest.json")

    logger.info(f"Point {label}: {len(reports)} replications written to {point_dir}")
    return point_dir


def run_experiment(config_path: str, out_dir: str, replications: Optional[int] = None,
                   seed: Optional[int] = None, policy: Optional[str] = None,
                   strategy: Optional[str] = None, beta: Optional[float] = None,
                   workers: Optional[int] = None, dump_cache: bool = False,
                   export_plan: bool = False, log_level: Optional[str] = None) -> int:
    """
    Run a scenario file end to end.

    Returns:
        Exit status: 0 on success, 2 for invalid configuration, 3 for I/O failures
    """
    try:
        config = load_config(config_path)
        config = apply_overrides(config, replications=replications, cache_policy=policy,
                                 strategy=strategy, beta=beta, workers=workers, log_level=log_level)
        if seed is not None:
            config['rng_seed'] = seed
        logging.getLogger().setLevel(str(config['log_level']).upper())

        sweep = SweepSpec.from_config(config)
        base_seed = int(config['rng_seed'])
        seeds = [base_seed + j for j in range(sweep.replications)]
        out = Path(out_dir)

        points = sweep.points()
        for _, point in points:
            build_scenario(point)
        for label, point in points:
            run_point(label, point, seeds, out, int(config.get('workers') or 1), dump_cache, export_plan)
        return 0
    except (SimulationError, OSError, ValueError) as e:
        error_info = handle_simulation_error(e, f"run {config_path}")
        print(f"❌ {error_info['message']}", file=sys.stderr)
        return error_info['exit_code']


def _point_dir(directory: Path) -> Path:
    if (directory / "aggregate.json").exists():
        return directory
    if (directory / "base" / "aggregate.json").exists():
        return directory / "base"
    raise ExperimentIOError(f"No aggregate.json under {directory}", str(directory))


def compare(directories: Sequence[str]) -> pd.DataFrame:
    """
    Aggregate means side by side, with ratios to the first directory.

    Raises:
        ConfigError: the runs differ in slot count, ladder, slot or chunk length
    """
    if len(directories) < 2:
        raise ConfigError("compare needs at least two result directories")

    points = [_point_dir(Path(d)) for d in directories]
    manifests = [read_json(p / "manifest.json") for p in points]
    aggregates = [read_json(p / "aggregate.json") for p in points]

    reference = manifests[0]['config']
    for directory, manifest in zip(directories[1:], manifests[1:]):
        for key in COMPARABLE_KEYS:
            if manifest['config'].get(key) != reference.get(key):
                raise ConfigError(f"{directory}: {key} differs from {directories[0]} "
                                  f"({manifest['config'].get(key)} vs {reference.get(key)})", field=key)

    names = [str(d) for d in directories]
    table = pd.DataFrame(index=AGGREGATE_METRICS)
    for name, agg in zip(names, aggregates):
        table[name] = [agg.get(metric, {}).get('mean') for metric in AGGREGATE_METRICS]
    for name in names[1:]:
        table[f"{name} / {names[0]}"] = [_ratio(a, b) for a, b in zip(table[name], table[names[0]])]
    return table


def _ratio(value: Optional[float], base: Optional[float]) -> Optional[float]:
    if value is None or base is None or pd.isna(value) or pd.isna(base):
        return None
    if base == 0:
        return 1.0 if value == 0 else None
    return value / base


def setup_logging(out_dir: Optional[str], level: str = "INFO") -> None:
    handlers = [logging.StreamHandler()]
    if out_dir:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(Path(out_dir) / "experiment.log"))
    logging.basicConfig(
        level=level.upper(),
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=handlers,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main function with command line arguments"""
    parser = argparse.ArgumentParser(description='Edge-assisted adaptive streaming experiments')
    subparsers = parser.add_subparsers(dest='command', required=True)

    run_parser = subparsers.add_parser('run', help='Run a scenario (and its sweep) with seeded replications')
    run_parser.add_argument('config', help='Scenario JSON file')
    run_parser.add_argument('--out', required=True, help='Output directory')
    run_parser.add_argument('--replications', type=int, help='Replications per sweep point')
    run_parser.add_argument('--seed', type=int, help='Base seed; replication j uses seed + j')
    run_parser.add_argument('--policy', choices=['RBCRH', 'LRU', 'LFU', 'OPT1', 'FIXED'],
                            help='Cache replacement policy')
    run_parser.add_argument('--strategy', choices=['QOE_MAX', 'JOINT', 'TRAFFIC_MIN'],
                            help='Allocation strategy')
    run_parser.add_argument('--beta', type=float, help='QoE-vs-traffic weight for JOINT')
    run_parser.add_argument('--workers', type=int, help='Processes for replications')
    run_parser.add_argument('--dump-cache', action='store_true', help='Write final cache contents per replication')
    run_parser.add_argument('--export-plan', action='store_true', help='Write the arrival plan per replication')
    run_parser.add_argument('--log-level', help='DEBUG, INFO, WARNING or ERROR')

    compare_parser = subparsers.add_parser('compare', help='Compare finished result directories')
    compare_parser.add_argument('dirs', nargs='+', help='Result directories (first is the reference)')

    args = parser.parse_args(argv)

    if args.command == 'run':
        try:
            setup_logging(args.out, args.log_level or "INFO")
        except OSError as e:
            print(f"❌ Cannot use output directory {args.out}: {e}", file=sys.stderr)
            return 3
        print(f"🚀 Running {args.config}...")
        status = run_experiment(args.config, args.out, args.replications, args.seed, args.policy,
                                args.strategy, args.beta, args.workers, args.dump_cache,
                                args.export_plan, args.log_level)
        if status == 0:
            print(f"✅ Results written to {args.out}")
        return status

    setup_logging(None, "WARNING")
    try:
        table = compare(args.dirs)
    except SimulationError as e:
        error_info = handle_simulation_error(e, "compare")
        print(f"❌ {error_info['message']}", file=sys.stderr)
        return error_info['exit_code']
    print(table.to_string(float_format=lambda v: f"{v:.4f}"))
    return 0


if __name__ == "__main__":
    sys.exit(main())
