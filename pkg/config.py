#!/usr/bin/env python3
"""
Scenario Configuration
Loads flat JSON scenario files, merges them over the built-in defaults and
turns the result into a validated ScenarioConfig.
"""

import copy
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from error_handling import ConfigError, ExperimentIOError, validation_handler
from model import BitrateLadder, CachePolicy, ScenarioConfig, Strategy, Video, VideoCatalog
from radio import RadioParams

logger = logging.getLogger(__name__)

# Desk-scale defaults. num_clients, num_servers, num_slots, cache_size,
# buffer_cap and ladder have no default.
DEFAULT_CONFIG: Dict[str, Any] = {
    "slot_len": 1.0,
    "chunk_len": 5.0,
    "rb_per_slot": 28,
    "beta": 0.5,
    "fairness_threshold": 0.5,
    "arrival_interval": 30.0,
    "rng_seed": 1,
    "cache_policy": "RBCRH",
    "strategy": "JOINT",
    "feasibility_gate": "literal",
    "fixed_fill_ratio": 1.0,
    "terminal_retention": 0.0,
    "trace_path": None,
    "plan_path": None,
    "videos": [
        {"id": 1, "duration": 270, "popularity": 0.4, "min_watch": 90, "retention_curve": "LINEAR"},
        {"id": 2, "duration": 270, "popularity": 0.3, "min_watch": 50, "retention_curve": "LINEAR"},
        {"id": 3, "duration": 270, "popularity": 0.2, "min_watch": 50, "retention_curve": "LINEAR"},
        {"id": 4, "duration": 270, "popularity": 0.1, "min_watch": 30, "retention_curve": "LINEAR"},
    ],
    # radio
    "alpha": 0.6,
    "snr_min": -10.0,
    "snr_max": 23.0,
    "thr_max": 4.4,
    "rb_bandwidth": 0.18,
    "pathloss_model": "log_distance",
    "pathloss_ref_loss": 128.1,
    "pathloss_ref_distance": 1000.0,
    "pathloss_exponent": 3.76,
    "tx_power": 26.0,
    "noise_floor": -98.0,
    "client_gain": 0.0,
    "enb_gain": 18.0,
    "bs_spacing": 1000.0,
    "road_offset_min": 100.0,
    "road_offset_max": 1500.0,
    "speed": 8.33,
    "min_distance": 1.0,
    # harness
    "log_level": "INFO",
    "replications": 1,
    "workers": 1,
    "sweep_axis": None,
    "sweep_values": [],
}

RADIO_KEYS = list(RadioParams.__dataclass_fields__)
HARNESS_KEYS = ['log_level', 'replications', 'workers', 'sweep_axis', 'sweep_values']
# input files, relative to the scenario file that names them
PATH_KEYS = ['trace_path', 'plan_path']


def _read(path: Path) -> Dict[str, Any]:
    try:
        with open(path, 'r') as f:
            raw = json.load(f)
    except FileNotFoundError as e:
        raise ExperimentIOError(f"Config file not found: {path}", str(path)) from e
    except OSError as e:
        raise ExperimentIOError(f"Cannot read config {path}: {e}", str(path)) from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: not valid JSON ({e})") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return raw


def _resolve_extends(path: Path, seen: Optional[List[Path]] = None) -> Dict[str, Any]:
    seen = seen or []
    path = path.resolve()
    if path in seen:
        raise ConfigError(f"Circular 'extends' chain through {path}", field='extends')
    raw = _read(path)
    for key in PATH_KEYS:
        value = raw.get(key)
        if isinstance(value, str) and value:
            raw[key] = str(path.parent / value)
    parent = raw.pop('extends', None)
    if parent is None:
        return raw
    merged = _resolve_extends(path.parent / parent, seen + [path])
    merged.update(raw)
    return merged


def load_config(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Load a scenario file, follow its ``extends`` chain and fill in defaults.

    Args:
        path: JSON scenario file

    Returns:
        Resolved flat configuration (every default present)

    Raises:
        ExperimentIOError: unreadable file
        ConfigError: malformed JSON or a broken extends chain
    """
    config = _resolve_extends(Path(path))
    # Merge with defaults for any missing keys
    for key, value in DEFAULT_CONFIG.items():
        if key not in config:
            config[key] = copy.deepcopy(value)
    logger.debug(f"Loaded config {path} ({len(config)} keys)")
    return config


def apply_overrides(config: Dict[str, Any], **overrides: Any) -> Dict[str, Any]:
    """Copy of ``config`` with the non-None overrides applied."""
    result = copy.deepcopy(config)
    for key, value in overrides.items():
        if value is not None:
            result[key] = value
    return result


def build_scenario(config: Dict[str, Any]) -> ScenarioConfig:
    """
    Validate a resolved configuration and build the ScenarioConfig.

    Raises:
        ConfigError: carrying one message per offending field
    """
    is_valid, errors = validation_handler.validate_scenario(config)
    if not is_valid:
        first_field = errors[0].split(':', 1)[0]
        raise ConfigError("Invalid scenario: " + "; ".join(errors), field=first_field, errors=errors)

    videos = tuple(
        Video(video_id=int(v['id']), duration=float(v['duration']),
              retention_curve=v.get('retention_curve', 'LINEAR'),
              popularity=float(v['popularity']), min_watch=float(v['min_watch']))
        for v in config['videos']
    )
    radio = RadioParams(**{key: config[key] for key in RADIO_KEYS})

    return ScenarioConfig(
        num_clients=config['num_clients'],
        num_servers=config['num_servers'],
        num_slots=config['num_slots'],
        ladder=BitrateLadder(tuple(config['ladder'])),
        catalog=VideoCatalog(videos),
        cache_size=float(config['cache_size']),
        buffer_cap=float(config['buffer_cap']),
        slot_len=float(config['slot_len']),
        chunk_len=float(config['chunk_len']),
        rb_per_slot=config['rb_per_slot'],
        beta=float(config['beta']),
        fairness_threshold=float(config['fairness_threshold']),
        arrival_interval=float(config['arrival_interval']),
        rng_seed=int(config['rng_seed']),
        cache_policy=CachePolicy(config['cache_policy']),
        strategy=Strategy(config['strategy']),
        radio=radio,
        feasibility_gate=config['feasibility_gate'],
        fixed_fill_ratio=float(config['fixed_fill_ratio']),
        terminal_retention=float(config['terminal_retention']),
        trace_path=config.get('trace_path'),
        plan_path=config.get('plan_path'),
    )


def scenario_fields(config: Dict[str, Any]) -> Dict[str, Any]:
    """The part of a configuration that determines simulation output."""
    return {key: value for key, value in config.items() if key not in HARNESS_KEYS}


def config_hash(config: Dict[str, Any]) -> str:
    """SHA-256 of the sorted-key JSON of the resolved configuration."""
    payload = json.dumps(config, sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(payload.encode('utf-8')).hexdigest()
