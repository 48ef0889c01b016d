#!/usr/bin/env python3
"""
Workload Generation
Retention curves, client arrivals, video assignment and departures.
"""

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd

from error_handling import ConfigError, ExperimentIOError, PreconditionError
from model import ScenarioConfig

logger = logging.getLogger(__name__)

PLAN_COLUMNS = ['client', 'arrival_slot', 'video', 'departure_slot']

# p(x) = a x^2 + b x + c on the normalised position x = (index - 1) / (n - 1).
# Every set satisfies p(0) = 1, p(1) = 0 and a <= 1, which keeps p
# non-increasing on [0, 1]; larger a drops earlier.
CURVE_COEFFICIENTS = {
    'LINEAR': (0.0, -1.0, 1.0),
    'RC1': (0.15, -1.15, 1.0),
    'RC2': (0.35, -1.35, 1.0),
    'RC3': (0.55, -1.55, 1.0),
    'RC4': (0.75, -1.75, 1.0),
    'RC5': (0.95, -1.95, 1.0),
}


@dataclass(frozen=True)
class RetentionCurve:
    """P_act over the chunks of one video, scaled to end at ``terminal``."""
    curve_id: str
    a: float
    b: float
    c: float
    num_chunks: int = 54
    terminal: float = 0.0

    def for_video(self, num_chunks: int) -> 'RetentionCurve':
        return replace(self, num_chunks=num_chunks)

    def __call__(self, chunk_index: int) -> float:
        return retention_at(self, chunk_index)


@dataclass
class ArrivalPlan:
    arrivals: List[int]
    videos: List[int]
    departures: List[int]

    def __len__(self) -> int:
        return len(self.arrivals)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            'client': list(range(1, len(self) + 1)),
            'arrival_slot': self.arrivals,
            'video': self.videos,
            'departure_slot': self.departures,
        })


def make_curves(num_chunks: int = 54, terminal: float = 0.0) -> Dict[str, RetentionCurve]:
    """The linear curve and RC1..RC5, ordered RC1 >= ... >= RC5 pointwise."""
    return {
        curve_id: RetentionCurve(curve_id, a, b, c, num_chunks, terminal)
        for curve_id, (a, b, c) in CURVE_COEFFICIENTS.items()
    }


def retention_at(curve: RetentionCurve, chunk_index: int) -> float:
    """P_act(chunk_index) clamped to [0, 1]."""
    if not 1 <= chunk_index <= curve.num_chunks:
        raise PreconditionError(
            f"Chunk index {chunk_index} outside 1..{curve.num_chunks} for curve {curve.curve_id}",
            {'chunk_index': chunk_index, 'num_chunks': curve.num_chunks})
    if curve.num_chunks == 1:
        return 1.0
    x = (chunk_index - 1) / (curve.num_chunks - 1)
    p = curve.a * x * x + curve.b * x + curve.c
    value = curve.terminal + (1.0 - curve.terminal) * p
    return min(1.0, max(0.0, value))


def curves_for_catalog(cfg: ScenarioConfig) -> Dict[int, RetentionCurve]:
    """video id -> its retention curve sized to the video's chunk count."""
    curves = make_curves(terminal=cfg.terminal_retention)
    result = {}
    for video in cfg.catalog.videos:
        if video.retention_curve not in curves:
            raise ConfigError(f"Unknown retention curve '{video.retention_curve}' for video {video.video_id}",
                              field='videos')
        result[video.video_id] = curves[video.retention_curve].for_video(video.num_chunks(cfg.chunk_len))
    return result


def build_arrival_plan(cfg: ScenarioConfig, seed: int) -> ArrivalPlan:
    """
    Draw arrivals, videos and departures for every client.

    A_i ~ U[0, A] seconds floored to slots, v_i ~ popularity weights,
    D_i = A_i + minimum watch + U{0..rest of the video}, capped at |T|.

    Raises:
        ConfigError: a video shorter than its minimum watch
    """
    for video in cfg.catalog.videos:
        if video.min_watch > video.duration:
            raise ConfigError(f"Video {video.video_id} is shorter than its minimum watch "
                              f"({video.duration} s < {video.min_watch} s)", field='videos')

    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    n = cfg.num_clients
    arrival_seconds = rng.uniform(0.0, cfg.arrival_interval, size=n)
    video_ids = rng.choice(cfg.catalog.ids, size=n, p=cfg.catalog.weights) if n else np.array([], dtype=int)

    arrivals, videos, departures = [], [], []
    for i in range(n):
        arrival = cfg.seconds_to_slots(arrival_seconds[i])
        video = cfg.catalog.get(int(video_ids[i]))
        duration_slots = cfg.seconds_to_slots(video.duration)
        watch_slots = cfg.seconds_to_slots(video.min_watch)
        extra = int(rng.integers(0, duration_slots - watch_slots + 1))
        departure = min(cfg.num_slots, arrival + max(1, watch_slots + extra))
        arrivals.append(arrival)
        videos.append(video.video_id)
        departures.append(departure)

    logger.debug(f"Arrival plan for seed {seed}: {n} clients")
    return ArrivalPlan(arrivals, videos, departures)


def save_arrival_plan(plan: ArrivalPlan, path: Union[str, Path]) -> None:
    try:
        plan.to_frame().to_csv(path, index=False)
    except OSError as e:
        raise ExperimentIOError(f"Cannot write arrival plan {path}: {e}", str(path))


def load_arrival_plan(path: Union[str, Path]) -> ArrivalPlan:
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ExperimentIOError(f"Cannot read arrival plan {path}: {e}", str(path))
    if list(frame.columns) != PLAN_COLUMNS:
        raise ExperimentIOError(f"Arrival plan {path} must have header {','.join(PLAN_COLUMNS)}", str(path))
    frame = frame.sort_values('client')
    return ArrivalPlan(
        arrivals=[int(v) for v in frame['arrival_slot']],
        videos=[int(v) for v in frame['video']],
        departures=[int(v) for v in frame['departure_slot']],
    )
