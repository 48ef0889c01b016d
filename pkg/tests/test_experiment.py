import json
from pathlib import Path

import pandas as pd
import pytest

from config import apply_overrides, load_config
from error_handling import ConfigError
from experiment import SweepAxis, SweepSpec, compare, main, run_experiment, run_replication
from metrics import CLIENT_COLUMNS, aggregate

MINIMAL = {
    "num_clients": 1,
    "num_servers": 1,
    "num_slots": 10,
    "ladder": [1.0, 2.0],
    "cache_size": 10.0,
    "buffer_cap": 5.0,
    "arrival_interval": 0.0,
    "videos": [{"id": 1, "duration": 20, "popularity": 1.0, "min_watch": 5}],
}


@pytest.fixture
def scenario_file(tmp_path):
    def _write(name="scenario.json", **fields):
        path = tmp_path / name
        path.write_text(json.dumps(dict(MINIMAL, **fields)))
        return path
    return _write


class TestSweepSpec:
    def test_parse_axis(self):
        assert SweepAxis.parse("BETA") is SweepAxis.BETA
        assert SweepAxis.parse("cache_policy") is SweepAxis.CACHE_POLICY
        with pytest.raises(ConfigError):
            SweepAxis.parse("speed")

    def test_no_axis(self):
        assert [label for label, _ in SweepSpec(None, [], 1, {'beta': 0.5}).points()] == ["base"]

    def test_points(self):
        spec = SweepSpec(SweepAxis.BETA, [1.0, 0.0], 2, {'beta': 0.5, 'sweep_axis': 'BETA'})
        points = spec.points()
        assert [label for label, _ in points] == ["beta=1.0", "beta=0.0"]
        assert points[1][1]['beta'] == 0.0
        assert points[1][1]['sweep_axis'] is None

    def test_retention_axis_sets_every_video(self):
        base = {'videos': [{'id': 1, 'retention_curve': 'LINEAR'}, {'id': 2, 'retention_curve': 'RC1'}]}
        _, point = SweepSpec(SweepAxis.RETENTION_CURVE, ["RC4"], 1, base).points()[0]
        assert {v['retention_curve'] for v in point['videos']} == {"RC4"}
        assert base['videos'][1]['retention_curve'] == 'RC1'

    def test_axis_needs_values(self):
        with pytest.raises(ConfigError):
            SweepSpec(SweepAxis.BETA, [], 1)

    def test_replications_positive(self):
        with pytest.raises(ConfigError):
            SweepSpec(None, [], 0)


class TestRunExperiment:
    def test_minimal_run(self, scenario_file, tmp_path):
        out = tmp_path / "out"
        assert run_experiment(str(scenario_file()), str(out)) == 0
        point = out / "base"
        assert {p.name for p in point.iterdir()} == {"clients.csv", "aggregate.json", "manifest.json"}
        frame = pd.read_csv(point / "clients.csv")
        assert list(frame.columns) == CLIENT_COLUMNS
        assert len(frame) == 1
        manifest = json.loads((point / "manifest.json").read_text())
        assert manifest['seeds'] == [1]
        assert len(manifest['config_hash']) == 64

    def test_missing_cache_size(self, tmp_path, capsys):
        path = tmp_path / "scenario.json"
        path.write_text(json.dumps({k: v for k, v in MINIMAL.items() if k != 'cache_size'}))
        assert run_experiment(str(path), str(tmp_path / "out")) == 2
        assert "cache_size" in capsys.readouterr().err

    def test_missing_config_file(self, tmp_path):
        assert run_experiment(str(tmp_path / "nope.json"), str(tmp_path / "out")) == 3

    def test_beta_sweep(self, scenario_file, tmp_path):
        path = scenario_file(num_clients=3, num_servers=2, num_slots=20, sweep_axis="BETA",
                             sweep_values=[1.0, 0.5, 0.0])
        out = tmp_path / "sweep"
        assert run_experiment(str(path), str(out), replications=2, seed=11) == 0
        assert sorted(p.name for p in out.iterdir()) == ["beta=0.0", "beta=0.5", "beta=1.0"]
        for point in out.iterdir():
            frame = pd.read_csv(point / "clients.csv")
            assert sorted(frame['seed'].unique()) == [11, 12]
            assert len(frame) == 6
            aggregate = json.loads((point / "aggregate.json").read_text())
            assert set(aggregate['avg_bitrate']) == {'mean', 'ci95'}

    def test_rerun_is_byte_identical(self, scenario_file, tmp_path):
        path = scenario_file(num_clients=4, num_servers=2, num_slots=30)
        first, second = tmp_path / "first", tmp_path / "second"
        assert run_experiment(str(path), str(first), replications=2) == 0
        assert run_experiment(str(path), str(second), replications=2) == 0
        for name in ("clients.csv", "aggregate.json"):
            assert (first / "base" / name).read_bytes() == (second / "base" / name).read_bytes()

    def test_dump_cache_and_plan(self, scenario_file, tmp_path):
        out = tmp_path / "out"
        assert run_experiment(str(scenario_file()), str(out), dump_cache=True, export_plan=True) == 0
        assert (out / "base" / "cache_rep1.csv").exists()
        plan = pd.read_csv(out / "base" / "plan_rep1.csv")
        assert len(plan) == 1

    def test_overrides_recorded(self, scenario_file, tmp_path):
        out = tmp_path / "out"
        assert run_experiment(str(scenario_file()), str(out), policy="LRU", strategy="QOE_MAX") == 0
        manifest = json.loads((out / "base" / "manifest.json").read_text())
        assert manifest['config']['cache_policy'] == "LRU"
        assert manifest['config']['strategy'] == "QOE_MAX"


class TestCompare:
    def test_self_comparison(self, scenario_file, tmp_path):
        out = tmp_path / "out"
        assert run_experiment(str(scenario_file()), str(out)) == 0
        table = compare([str(out), str(out / "base")])
        ratio = table[f"{out / 'base'} / {out}"]
        assert ratio['avg_bitrate'] == pytest.approx(1.0)
        assert ratio['backhaul_mb'] == pytest.approx(1.0)

    def test_mismatched_runs(self, scenario_file, tmp_path):
        first, second = tmp_path / "first", tmp_path / "second"
        assert run_experiment(str(scenario_file("a.json")), str(first)) == 0
        assert run_experiment(str(scenario_file("b.json", num_slots=20)), str(second)) == 0
        with pytest.raises(ConfigError):
            compare([str(first), str(second)])
        assert main(["compare", str(first), str(second)]) == 2

    def test_needs_two_directories(self, tmp_path):
        with pytest.raises(ConfigError):
            compare([str(tmp_path)])


ROOT = Path(__file__).resolve().parent.parent


def sweep_summary(name, replications, **overrides):
    """label -> aggregate metrics for every point of a shipped sweep file."""
    config = apply_overrides(load_config(ROOT / "configs" / name), **overrides)
    result = {}
    for label, point in SweepSpec.from_config(config).points():
        reports = [run_replication((point, j + 1, point['rng_seed'] + j))[0] for j in range(replications)]
        result[label] = aggregate(reports).metrics
    return result


@pytest.mark.slow
class TestShippedSweeps:
    def test_strategies_ordered_with_clear_gaps(self):
        summary = sweep_summary("strategy_sweep.json", 20)
        for metric in ("avg_bitrate", "backhaul_mb"):
            qoe, joint, traffic = (summary[f"strategy={s}"][metric]['mean']
                                   for s in ("QOE_MAX", "JOINT", "TRAFFIC_MIN"))
            assert traffic <= joint <= qoe
            assert (qoe - joint) / qoe >= 0.05, metric
            assert (joint - traffic) / qoe >= 0.05, metric

    @pytest.mark.parametrize("name", ["arrival_sweep.json", "retention_sweep.json"])
    def test_retention_policy_misses_least(self, name):
        misses = {policy: sweep_summary(name, 4, cache_policy=policy)
                  for policy in ("RBCRH", "LRU", "LFU", "OPT1")}
        for label in misses["RBCRH"]:
            miss = {policy: misses[policy][label]['miss_pct']['mean'] for policy in misses}
            assert miss["RBCRH"] < miss["LRU"] < miss["LFU"], label
            assert miss["OPT1"] < miss["LFU"], label
            assert miss["RBCRH"] / miss["OPT1"] <= 1.8, label

    def test_traffic_falls_with_beta(self):
        summary = sweep_summary("beta_sweep.json", 10)
        points = [summary[f"beta={beta}"]['backhaul_mb'] for beta in (1.0, 0.8, 0.6, 0.4, 0.2, 0.0)]
        for higher, lower in zip(points, points[1:]):
            slack = max(higher['ci95'], lower['ci95'])
            assert lower['mean'] <= higher['mean'] + slack
        assert points[-1]['mean'] < points[0]['mean']
