import json
from pathlib import Path

import pytest

from config import (DEFAULT_CONFIG, HARNESS_KEYS, apply_overrides, build_scenario, config_hash, load_config,
                    scenario_fields)
from error_handling import ConfigError, ExperimentIOError
from experiment import SweepSpec
from model import CachePolicy, Strategy

ROOT = Path(__file__).resolve().parent.parent

MINIMAL = {
    "num_clients": 1,
    "num_servers": 1,
    "num_slots": 10,
    "ladder": [1.0, 2.0],
    "cache_size": 10.0,
    "buffer_cap": 5.0,
    "arrival_interval": 0.0,
}


def write(path, payload):
    path.write_text(json.dumps(payload))
    return path


class TestLoadConfig:
    def test_defaults_merged(self, tmp_path):
        config = load_config(write(tmp_path / "scenario.json", MINIMAL))
        assert config['num_clients'] == 1
        assert config['rb_per_slot'] == DEFAULT_CONFIG['rb_per_slot']
        assert config['videos'] == DEFAULT_CONFIG['videos']

    def test_defaults_not_shared(self, tmp_path):
        config = load_config(write(tmp_path / "scenario.json", MINIMAL))
        config['videos'][0]['popularity'] = 0.9
        assert DEFAULT_CONFIG['videos'][0]['popularity'] == 0.4

    def test_extends(self, tmp_path):
        write(tmp_path / "base.json", dict(MINIMAL, beta=0.2))
        (tmp_path / "sweeps").mkdir()
        child = write(tmp_path / "sweeps" / "child.json", {"extends": "../base.json", "beta": 0.7})
        config = load_config(child)
        assert config['beta'] == 0.7
        assert config['num_slots'] == 10
        assert 'extends' not in config

    def test_input_paths_relative_to_their_file(self, tmp_path, monkeypatch):
        write(tmp_path / "base.json", dict(MINIMAL, trace_path="traces/snr.csv"))
        (tmp_path / "sweeps").mkdir()
        child = write(tmp_path / "sweeps" / "child.json", {"extends": "../base.json", "plan_path": "plan.csv"})
        monkeypatch.chdir(tmp_path / "sweeps")
        config = load_config("child.json")
        assert Path(config['trace_path']) == tmp_path.resolve() / "traces" / "snr.csv"
        assert Path(config['plan_path']) == tmp_path.resolve() / "sweeps" / "plan.csv"

    def test_absolute_input_path_kept(self, tmp_path):
        trace = tmp_path.resolve() / "snr.csv"
        config = load_config(write(tmp_path / "scenario.json", dict(MINIMAL, trace_path=str(trace))))
        assert Path(config['trace_path']) == trace
        assert config['plan_path'] is None

    def test_circular_extends(self, tmp_path):
        write(tmp_path / "a.json", {"extends": "b.json"})
        write(tmp_path / "b.json", {"extends": "a.json"})
        with pytest.raises(ConfigError) as excinfo:
            load_config(tmp_path / "a.json")
        assert excinfo.value.field == 'extends'

    def test_missing_file(self, tmp_path):
        with pytest.raises(ExperimentIOError):
            load_config(tmp_path / "missing.json")

    def test_bad_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{\"num_clients\": ")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_top_level_must_be_object(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(write(tmp_path / "list.json", [1, 2]))


class TestBuildScenario:
    def test_minimal(self, tmp_path):
        cfg = build_scenario(load_config(write(tmp_path / "scenario.json", MINIMAL)))
        assert cfg.num_clients == 1
        assert cfg.cache_policy is CachePolicy.RBCRH
        assert cfg.strategy is Strategy.JOINT
        assert cfg.slots_per_chunk == 5

    def test_missing_required_field_is_named(self, tmp_path):
        payload = {k: v for k, v in MINIMAL.items() if k != 'cache_size'}
        with pytest.raises(ConfigError) as excinfo:
            build_scenario(load_config(write(tmp_path / "scenario.json", payload)))
        assert excinfo.value.field == 'cache_size'
        assert 'cache_size' in str(excinfo.value)

    def test_every_error_reported(self, small_config):
        config = dict(small_config, beta=2.0, cache_policy="MRU")
        with pytest.raises(ConfigError) as excinfo:
            build_scenario(config)
        fields = [e.split(':', 1)[0] for e in excinfo.value.errors]
        assert 'beta' in fields and 'cache_policy' in fields

    def test_chunk_not_multiple_of_slot(self, small_config):
        with pytest.raises(ConfigError) as excinfo:
            build_scenario(dict(small_config, slot_len=2.0, chunk_len=5.0))
        assert excinfo.value.field == 'chunk_len'

    def test_cache_below_one_chunk(self, small_config):
        with pytest.raises(ConfigError) as excinfo:
            build_scenario(dict(small_config, cache_size=4.0))
        assert excinfo.value.field == 'cache_size'

    def test_unknown_retention_curve(self, small_config):
        videos = [dict(v, retention_curve="RC9") for v in small_config['videos']]
        with pytest.raises(ConfigError):
            build_scenario(dict(small_config, videos=videos))

    @pytest.mark.parametrize("name", sorted(p.name for p in (ROOT / "configs").glob("*.json")))
    def test_shipped_configs_build(self, name):
        config = load_config(ROOT / "configs" / name)
        for _, point in SweepSpec.from_config(config).points():
            build_scenario(point)

    def test_shipped_scenario(self):
        cfg = build_scenario(load_config(ROOT / "scenario_config.json"))
        assert (cfg.num_clients, cfg.num_servers, cfg.num_slots) == (100, 10, 300)


class TestOverridesAndHash:
    def test_overrides_skip_none(self):
        config = {'beta': 0.5, 'strategy': 'JOINT'}
        result = apply_overrides(config, beta=None, strategy='QOE_MAX')
        assert result == {'beta': 0.5, 'strategy': 'QOE_MAX'}
        assert config['strategy'] == 'JOINT'

    def test_hash_ignores_key_order(self):
        assert config_hash({'a': 1, 'b': [1, 2]}) == config_hash({'b': [1, 2], 'a': 1})

    def test_hash_sees_values(self):
        assert config_hash({'a': 1}) != config_hash({'a': 2})

    def test_scenario_fields(self):
        fields = scenario_fields(dict(DEFAULT_CONFIG, **MINIMAL))
        assert not set(HARNESS_KEYS) & set(fields)
        assert fields['num_slots'] == 10
