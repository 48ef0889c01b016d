#!/usr/bin/env python3
"""
Radio Model
Per-slot SNR traces, the Shannon-bound throughput approximation, the
proportional-fair effective share and the resource-block cost of a bitrate.

Throughput units: theoretical throughput is in Mbps per resource block,
resource-block budgets are counts, so the proportional-fair share
Thr^2 / sum(Thr) * W comes out in Mbps.
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from error_handling import ExperimentIOError, IncompleteTraceError, PreconditionError

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ['client', 'server', 'slot', 'snr_db']

# rb_cost sentinel for a dead link
INFEASIBLE = math.inf


@dataclass(frozen=True)
class RadioParams:
    """Link-budget and spectral-efficiency parameters."""
    alpha: float = 0.6
    snr_min: float = -10.0
    snr_max: float = 23.0
    thr_max: float = 4.4
    rb_bandwidth: float = 0.18
    pathloss_model: str = "log_distance"
    pathloss_ref_loss: float = 128.1
    pathloss_ref_distance: float = 1000.0
    pathloss_exponent: float = 3.76
    tx_power: float = 26.0
    noise_floor: float = -98.0
    client_gain: float = 0.0
    enb_gain: float = 18.0
    bs_spacing: float = 1000.0
    road_offset_min: float = 100.0
    road_offset_max: float = 1500.0
    speed: float = 8.33
    min_distance: float = 1.0

    def __post_init__(self):
        if self.snr_min >= self.snr_max:
            raise PreconditionError("snr_min must be below snr_max",
                                    {'snr_min': self.snr_min, 'snr_max': self.snr_max})
        if self.alpha <= 0 or self.thr_max <= 0:
            raise PreconditionError("alpha and thr_max must be positive",
                                    {'alpha': self.alpha, 'thr_max': self.thr_max})
        if self.pathloss_model != "log_distance":
            raise PreconditionError(f"Unknown path-loss model '{self.pathloss_model}'")


class SnrTrace:
    """SNR (dB) for every (client, server, slot); ids and slots are 1-based."""

    def __init__(self, grid: np.ndarray):
        if grid.ndim != 3:
            raise PreconditionError("SNR grid must be 3-dimensional (client, server, slot)")
        self.grid = grid
        self.duplicate_rows = 0

    @property
    def num_clients(self) -> int:
        return self.grid.shape[0]

    @property
    def num_servers(self) -> int:
        return self.grid.shape[1]

    @property
    def num_slots(self) -> int:
        return self.grid.shape[2]

    def snr(self, client: int, server: int, slot: int) -> float:
        return float(self.grid[client - 1, server - 1, slot - 1])

    def best_server(self, client: int, slot: int) -> int:
        """Highest-SNR server; argmax picks the lowest id on ties."""
        return int(np.argmax(self.grid[client - 1, :, slot - 1])) + 1

    def to_frame(self) -> pd.DataFrame:
        clients, servers, slots = np.meshgrid(
            np.arange(1, self.num_clients + 1),
            np.arange(1, self.num_servers + 1),
            np.arange(1, self.num_slots + 1),
            indexing='ij',
        )
        return pd.DataFrame({
            'client': clients.ravel(),
            'server': servers.ravel(),
            'slot': slots.ravel(),
            'snr_db': self.grid.ravel(),
        })


def path_loss(distance: np.ndarray, params: RadioParams) -> np.ndarray:
    """Log-distance path loss L0 + 10 n log10(d / d0) in dB."""
    distance = np.maximum(distance, params.min_distance)
    return params.pathloss_ref_loss + 10.0 * params.pathloss_exponent * np.log10(
        distance / params.pathloss_ref_distance)


def link_budget_snr(distance: np.ndarray, params: RadioParams) -> np.ndarray:
    """SNR = tx power + antenna gains - path loss - noise floor."""
    return (params.tx_power + params.client_gain + params.enb_gain
            - path_loss(distance, params) - params.noise_floor)


def generate_trace(cfg, seed: int) -> SnrTrace:
    """
    Synthesise an SNR trace for clients moving along a road.

    Base stations sit on the x axis every ``bs_spacing`` metres. Each client
    starts at a random x between the first and the last base station, on a
    road offset uniformly drawn from [road_offset_min, road_offset_max], and
    moves in +x at the shared speed. Initial positions are the only random
    quantity.

    Args:
        cfg: ScenarioConfig
        seed: Seed for the initial positions

    Returns:
        SnrTrace of shape (num_clients, num_servers, num_slots)
    """
    params = cfg.radio
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))

    span = (cfg.num_servers - 1) * params.bs_spacing
    x0 = rng.uniform(0.0, span, size=cfg.num_clients) if span > 0 else np.zeros(cfg.num_clients)
    y = rng.uniform(params.road_offset_min, params.road_offset_max, size=cfg.num_clients)

    bs_x = np.arange(cfg.num_servers) * params.bs_spacing
    times = np.arange(1, cfg.num_slots + 1) * cfg.slot_len

    # (client, slot)
    x = x0[:, None] + params.speed * times[None, :]
    dx = x[:, None, :] - bs_x[None, :, None]
    distance = np.hypot(dx, y[:, None, None])

    grid = link_budget_snr(distance, params)
    logger.debug(f"Generated SNR trace {grid.shape}, mean {grid.mean() if grid.size else 0:.2f} dB")
    return SnrTrace(grid)


def load_trace(path: Union[str, Path], num_clients: Optional[int] = None,
               num_servers: Optional[int] = None, num_slots: Optional[int] = None) -> SnrTrace:
    """
    Load an SNR trace from CSV (header client,server,slot,snr_db; 1-based).

    Duplicate rows are resolved last-write-wins and counted in
    ``SnrTrace.duplicate_rows``. Dimensions default to the largest ids seen.

    Raises:
        IncompleteTraceError: naming the first missing (client, server, slot)
        ExperimentIOError: unreadable file or wrong header
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ExperimentIOError(f"Cannot read SNR trace {path}: {e}", str(path))

    if list(frame.columns) != TRACE_COLUMNS:
        raise ExperimentIOError(
            f"SNR trace {path} must have header {','.join(TRACE_COLUMNS)}, got {','.join(map(str, frame.columns))}",
            str(path))

    frame = frame.astype({'client': int, 'server': int, 'slot': int, 'snr_db': float})
    duplicated = frame.duplicated(subset=['client', 'server', 'slot'], keep='last')
    duplicates = int(duplicated.sum())
    if duplicates:
        logger.warning(f"SNR trace {path}: {duplicates} duplicate rows, keeping the last occurrence")
        frame = frame[~duplicated]

    shape = (
        num_clients or int(frame['client'].max()),
        num_servers or int(frame['server'].max()),
        num_slots or int(frame['slot'].max()),
    )
    present = set(zip(frame['client'], frame['server'], frame['slot']))
    for client in range(1, shape[0] + 1):
        for server in range(1, shape[1] + 1):
            for slot in range(1, shape[2] + 1):
                if (client, server, slot) not in present:
                    raise IncompleteTraceError((client, server, slot))

    frame = frame[(frame['client'] <= shape[0]) & (frame['server'] <= shape[1]) & (frame['slot'] <= shape[2])]
    grid = np.empty(shape, dtype=float)
    grid[frame['client'].to_numpy() - 1, frame['server'].to_numpy() - 1,
         frame['slot'].to_numpy() - 1] = frame['snr_db'].to_numpy()

    trace = SnrTrace(grid)
    trace.duplicate_rows = duplicates
    logger.info(f"Loaded SNR trace {path} with shape {shape}")
    return trace


def save_trace(trace: SnrTrace, path: Union[str, Path]) -> None:
    trace.to_frame().to_csv(path, index=False)


def spectral_efficiency(snr_db: float, params: Optional[RadioParams] = None) -> float:
    """Truncated Shannon spectral efficiency in bps/Hz."""
    params = params or RadioParams()
    if snr_db < params.snr_min:
        return 0.0
    if snr_db >= params.snr_max:
        return params.thr_max
    return params.alpha * math.log2(1.0 + 10.0 ** (snr_db / 10.0))


def theoretical_throughput(snr_db: float, params: Optional[RadioParams] = None) -> float:
    """Mbps deliverable on one resource block."""
    params = params or RadioParams()
    return spectral_efficiency(snr_db, params) * params.rb_bandwidth


def effective_throughput(server: int, slot: int, active: List[Tuple[int, float]],
                         rb_budget: int) -> Dict[int, float]:
    """
    Proportional-fair share of one base station in one slot.

    Args:
        server: Base station id (for logging only)
        slot: Slot (for logging only)
        active: (client, Thr_ik) pairs, Thr in Mbps per RB
        rb_budget: W_k, resource blocks per slot

    Returns:
        client -> Thr_ik^2 / sum_j Thr_jk * W_k (Mbps); all zero when every Thr is 0
    """
    if rb_budget <= 0:
        raise PreconditionError("rb_budget must be positive", {'server': server, 'slot': slot})
    if any(thr < 0 for _, thr in active):
        raise PreconditionError("Throughputs must be non-negative", {'server': server, 'slot': slot})

    total = sum(thr for _, thr in active)
    if total <= 0:
        return {client: 0.0 for client, _ in active}
    return {client: (thr * thr / total) * rb_budget for client, thr in active}


def rb_cost(bitrate: float, thr_per_rb: float) -> float:
    """Resource blocks needed to carry r: ceil(r / Thr), INFEASIBLE on a dead link."""
    if thr_per_rb < 0:
        raise PreconditionError("Throughput must be non-negative", {'thr': thr_per_rb})
    if thr_per_rb == 0:
        return INFEASIBLE
    # strip quotient noise (0.3 / 0.1), then keep rbs * Thr >= r
    rbs = math.ceil(round(bitrate / thr_per_rb, 9))
    if rbs * thr_per_rb < bitrate:
        rbs += 1
    return rbs
