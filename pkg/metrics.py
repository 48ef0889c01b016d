#!/usr/bin/env python3
"""
Outcome Metrics
Per-client quality, switching, fairness, backhaul and cache-miss measures,
replication summaries with 95% confidence half-widths, and result writers.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy import stats

from error_handling import ExperimentIOError, PreconditionError
from model import ClientSession, SlotLedger

logger = logging.getLogger(__name__)

CLIENT_COLUMNS = ['replication', 'seed', 'client', 'video', 'arrival', 'departure', 'avg_bitrate',
                  'backhaul_mb', 'switch_freq', 'switch_mag', 'startup_slots', 'stalls', 'miss_ratio',
                  'fairness_dev', 'stall_ratio', 'utility']

AGGREGATE_METRICS = ['avg_bitrate', 'backhaul_mb', 'switch_freq', 'switch_mag', 'jain_index',
                     'mean_deviation', 'miss_pct', 'total_utility', 'startup_slots', 'stalls']


@dataclass
class ClientReport:
    client: int
    video: int
    arrival: int
    departure: int
    avg_bitrate: Optional[float]
    backhaul_mb: float
    switch_freq: int
    switch_mag: float
    startup_slots: Optional[int]
    stalls: int
    miss_ratio: Optional[float]
    fairness_dev: float
    stall_ratio: float
    utility: Optional[float]


@dataclass
class ReplicationReport:
    replication: int
    seed: int
    clients: List[ClientReport] = field(default_factory=list)
    summary: Dict[str, Optional[float]] = field(default_factory=dict)


@dataclass
class AggregateReport:
    replications: int
    metrics: Dict[str, Dict[str, Optional[float]]] = field(default_factory=dict)

    def mean(self, metric: str) -> Optional[float]:
        return self.metrics[metric]['mean']

    def to_dict(self) -> Dict[str, Dict[str, Optional[float]]]:
        return self.metrics


def avg_quality(session: ClientSession) -> float:
    """Mean bitrate over the session's downloaded chunks."""
    if not session.bitrate_history:
        raise PreconditionError(f"Client {session.client_id} downloaded no chunk",
                                {'client': session.client_id})
    return float(np.mean(session.bitrate_history))


def switching(session: ClientSession) -> Tuple[float, int]:
    """(sum of |r(p) - r(p-1)|, number of changes) over consecutive chunks."""
    history = session.bitrate_history
    steps = [abs(b - a) for a, b in zip(history, history[1:])]
    return float(sum(steps)), sum(1 for step in steps if step > 0)


def fairness_deviation(ledger: SlotLedger, client: int) -> float:
    """Sum of |r - r_bar| over the client's allocated slots."""
    return float(sum(abs(row.key.bitrate - row.r_bar) for row in ledger.rows_for_client(client)))


def backhaul_traffic(ledger: SlotLedger, client: int) -> float:
    """Mb fetched from origin for the client, recomputed from the ledger."""
    return float(sum(row.key.bitrate * ledger.slot_len for row in ledger.rows_for_client(client) if row.origin))


def miss_percentage(stats_or_caches) -> Optional[float]:
    """100 * misses / lookups over one CacheStats or several; None without lookups."""
    if hasattr(stats_or_caches, 'lookups'):
        collection = [stats_or_caches]
    else:
        collection = list(stats_or_caches)
    lookups = sum(s.lookups for s in collection)
    if lookups == 0:
        return None
    return 100.0 * sum(s.misses for s in collection) / lookups


def fairness_index(values: Sequence[float]) -> float:
    """Jain's index (sum x)^2 / (n sum x^2); 1 when every value is zero."""
    if len(values) == 0:
        raise PreconditionError("fairness_index needs at least one client")
    x = np.asarray(values, dtype=float)
    squares = float(np.sum(x * x))
    if squares == 0.0:
        return 1.0
    return float(np.sum(x) ** 2 / (len(x) * squares))


def client_report(session: ClientSession, ledger: SlotLedger) -> ClientReport:
    has_chunks = bool(session.bitrate_history)
    magnitude, frequency = switching(session)
    session_slots = session.departure - session.arrival
    return ClientReport(
        client=session.client_id,
        video=session.video_id,
        arrival=session.arrival,
        departure=session.departure,
        avg_bitrate=avg_quality(session) if has_chunks else None,
        backhaul_mb=session.backhaul_bits,
        switch_freq=frequency,
        switch_mag=magnitude,
        startup_slots=session.startup_delay,
        stalls=session.stalls,
        miss_ratio=session.misses / session.lookups if session.lookups else None,
        fairness_dev=fairness_deviation(ledger, session.client_id),
        stall_ratio=session.stalled_slots / session_slots if session_slots > 0 else 0.0,
        utility=session.utility,
    )


def _mean(values: Iterable[Optional[float]]) -> Optional[float]:
    present = [v for v in values if v is not None]
    return float(np.mean(present)) if present else None


def replication_report(replication: int, seed: int, sessions: Mapping[int, ClientSession],
                       ledger: SlotLedger, cache_stats: Iterable, total_utility: float) -> ReplicationReport:
    """Per-client rows plus the replication-level summary."""
    clients = [client_report(sessions[cid], ledger) for cid in sorted(sessions)]
    qualities = [c.avg_bitrate for c in clients if c.avg_bitrate is not None]
    deviations = []
    for c in clients:
        slots = len(ledger.rows_for_client(c.client))
        if slots:
            deviations.append(c.fairness_dev / slots)

    summary = {
        'avg_bitrate': _mean(qualities),
        'backhaul_mb': _mean(c.backhaul_mb for c in clients),
        'switch_freq': _mean(c.switch_freq for c in clients),
        'switch_mag': _mean(c.switch_mag for c in clients),
        'jain_index': fairness_index(qualities) if qualities else None,
        'mean_deviation': _mean(deviations),
        'miss_pct': miss_percentage(list(cache_stats)),
        'total_utility': float(total_utility),
        'startup_slots': _mean(c.startup_slots for c in clients),
        'stalls': _mean(c.stalls for c in clients),
    }
    return ReplicationReport(replication, seed, clients, summary)


def aggregate(reports: Sequence[ReplicationReport], confidence: float = 0.95) -> AggregateReport:
    """Mean and Student-t half-width per metric; half-width is None below two values."""
    if not reports:
        raise PreconditionError("aggregate needs at least one replication")

    result = AggregateReport(len(reports))
    for metric in AGGREGATE_METRICS:
        values = np.array([r.summary.get(metric) for r in reports
                           if r.summary.get(metric) is not None], dtype=float)
        n = len(values)
        if n == 0:
            result.metrics[metric] = {'mean': None, 'ci95': None}
            continue
        half_width = None
        if n >= 2:
            half_width = float(stats.sem(values) * stats.t.ppf((1 + confidence) / 2.0, n - 1))
        result.metrics[metric] = {'mean': float(np.mean(values)), 'ci95': half_width}
    return result


def clients_frame(reports: Sequence[ReplicationReport]) -> pd.DataFrame:
    rows = []
    for report in reports:
        for client in report.clients:
            rows.append({'replication': report.replication, 'seed': report.seed, **asdict(client)})
    return pd.DataFrame(rows, columns=CLIENT_COLUMNS)


def write_clients_csv(reports: Sequence[ReplicationReport], path: Union[str, Path]) -> None:
    try:
        clients_frame(reports).to_csv(path, index=False, float_format='%.6f')
    except OSError as e:
        raise ExperimentIOError(f"Cannot write {path}: {e}", str(path))


def write_json(payload: Dict, path: Union[str, Path]) -> None:
    try:
        with open(path, 'w') as f:
            json.dump(payload, f, indent=2, sort_keys=True)
    except OSError as e:
        raise ExperimentIOError(f"Cannot write {path}: {e}", str(path))


def read_json(path: Union[str, Path]) -> Dict:
    try:
        with open(path, 'r') as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ExperimentIOError(f"Cannot read {path}: {e}", str(path))
