#!/usr/bin/env python3
"""
Domain Model
Shared types for the edge streaming simulator: bitrate ladder, video catalog,
scenario configuration, chunk keys, client sessions and the slot ledger.

Units: data volumes in megabits, rates in Mbps, time in seconds, slots and
chunk indices are integers. Chunk indices are 1-based.
"""

import math
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterator, List, Optional, Tuple

from error_handling import ConfigError, OutOfSessionError
from radio import RadioParams


class CachePolicy(Enum):
    RBCRH = "RBCRH"
    LRU = "LRU"
    LFU = "LFU"
    OPT1 = "OPT1"
    FIXED = "FIXED"


class Strategy(Enum):
    QOE_MAX = "QOE_MAX"
    JOINT = "JOINT"
    TRAFFIC_MIN = "TRAFFIC_MIN"


@dataclass(frozen=True)
class BitrateLadder:
    """The discrete set R of available bitrates (Mbps), strictly increasing."""
    rates: Tuple[float, ...]

    def __post_init__(self):
        rates = tuple(float(r) for r in self.rates)
        object.__setattr__(self, 'rates', rates)
        if not rates:
            raise ConfigError("Bitrate ladder is empty", field='ladder')
        if any(r <= 0 for r in rates):
            raise ConfigError("Bitrates must be > 0", field='ladder')
        if any(b <= a for a, b in zip(rates, rates[1:])):
            raise ConfigError("Bitrates must be strictly increasing", field='ladder')

    @property
    def r_min(self) -> float:
        return self.rates[0]

    @property
    def r_max(self) -> float:
        return self.rates[-1]

    @property
    def span(self) -> float:
        return self.r_max - self.r_min

    def descending(self) -> Tuple[float, ...]:
        return tuple(reversed(self.rates))

    def at(self, position: int) -> float:
        """1-based ladder position."""
        return self.rates[position - 1]

    def __len__(self) -> int:
        return len(self.rates)

    def __iter__(self) -> Iterator[float]:
        return iter(self.rates)

    def __contains__(self, bitrate: object) -> bool:
        return bitrate in self.rates


@dataclass(frozen=True)
class Video:
    video_id: int
    duration: float
    retention_curve: str = "LINEAR"
    popularity: float = 1.0
    min_watch: float = 0.0

    def num_chunks(self, chunk_len: float) -> int:
        return int(round(self.duration / chunk_len))


@dataclass(frozen=True)
class VideoCatalog:
    videos: Tuple[Video, ...]

    def __post_init__(self):
        if not self.videos:
            raise ConfigError("Video catalog is empty", field='videos')
        total = sum(v.popularity for v in self.videos)
        if abs(total - 1.0) > 1e-6:
            raise ConfigError(f"Popularity weights must sum to 1 (got {total:.6f})", field='videos')

    def get(self, video_id: int) -> Video:
        for video in self.videos:
            if video.video_id == video_id:
                return video
        raise KeyError(f"Unknown video {video_id}")

    @property
    def ids(self) -> List[int]:
        return [v.video_id for v in self.videos]

    @property
    def weights(self) -> List[float]:
        return [v.popularity for v in self.videos]


@dataclass(frozen=True)
class ScenarioConfig:
    """Full experiment description (Table I/II symbols in comments)."""
    num_clients: int                      # S
    num_servers: int                      # K
    num_slots: int                        # |T|
    ladder: BitrateLadder                 # R
    catalog: VideoCatalog
    cache_size: float                     # Q, Mb
    buffer_cap: float                     # B_max, Mb
    slot_len: float = 1.0                 # Δt, s
    chunk_len: float = 5.0                # C, s
    rb_per_slot: int = 28                 # W_k
    beta: float = 0.5                     # β
    fairness_threshold: float = 0.5       # δ_F
    arrival_interval: float = 30.0        # A, s
    rng_seed: int = 1
    cache_policy: CachePolicy = CachePolicy.RBCRH
    strategy: Strategy = Strategy.JOINT
    radio: RadioParams = field(default_factory=RadioParams)
    feasibility_gate: str = "literal"
    fixed_fill_ratio: float = 1.0
    terminal_retention: float = 0.0
    trace_path: Optional[str] = None
    plan_path: Optional[str] = None

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ConfigError(f"beta must be in [0, 1] (got {self.beta})", field='beta')
        if not 0.0 <= self.fairness_threshold <= 1.0:
            raise ConfigError("fairness_threshold must be in [0, 1]", field='fairness_threshold')
        ratio = self.chunk_len / self.slot_len
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError("chunk_len must be a whole number of slots", field='chunk_len')
        if self.cache_size < self.chunk_len * self.ladder.r_min:
            raise ConfigError("cache_size must hold at least one lowest-quality chunk", field='cache_size')

    @property
    def slots_per_chunk(self) -> int:
        return int(round(self.chunk_len / self.slot_len))

    @property
    def effective_beta(self) -> float:
        """QOE_MAX and TRAFFIC_MIN pin β to its extremes."""
        if self.strategy is Strategy.QOE_MAX:
            return 1.0
        if self.strategy is Strategy.TRAFFIC_MIN:
            return 0.0
        return self.beta

    def seconds_to_slots(self, seconds: float) -> int:
        return int(math.floor(seconds / self.slot_len + 1e-9))


@dataclass(frozen=True)
class ChunkKey:
    """(video, chunk index, bitrate); equality is on all three fields."""
    video: int
    chunk_index: int
    bitrate: float

    def weight(self, chunk_len: float) -> float:
        """Cache footprint in Mb: chunk length times bitrate."""
        return chunk_len * self.bitrate


@dataclass
class ClientSession:
    """One client's state over [A_i, D_i]."""
    client_id: int
    video_id: int
    arrival: int                           # A_i
    departure: int                         # D_i
    slots_per_chunk: int = 1
    buffer: float = 0.0                    # B_i, Mb
    buffer_full: bool = False
    startup_delay: Optional[int] = None    # L_i, slots
    server: Optional[int] = None           # a_i
    bitrate_history: List[float] = field(default_factory=list)
    backhaul_bits: float = 0.0             # BT_i, Mb
    origin_flags: Dict[int, bool] = field(default_factory=dict)
    current_key: Optional[ChunkKey] = None
    current_origin: bool = False
    # (slot, chunk index, server, effective throughput)
    thr_history: List[Tuple[int, int, int, float]] = field(default_factory=list)
    # server -> bitrate -> allocated slots, for access frequencies
    server_bitrate_slots: Dict[int, Dict[float, int]] = field(default_factory=dict)
    weight_history: List[Tuple[float, float, float]] = field(default_factory=list)
    stalls: int = 0
    in_stall: bool = False
    stalled_slots: int = 0
    pressure_events: int = 0
    throttled_slots: int = 0
    lookups: int = 0
    misses: int = 0
    utility: Optional[float] = None

    def __post_init__(self):
        if self.departure <= self.arrival:
            raise ConfigError(f"Client {self.client_id}: departure {self.departure} "
                              f"must follow arrival {self.arrival}", field='departure')

    @property
    def current_bitrate(self) -> Optional[float]:
        return self.current_key.bitrate if self.current_key else None

    def is_active(self, slot: int) -> bool:
        """Downloading in this slot (the arrival slot only initialises)."""
        return self.arrival < slot <= self.departure

    def is_chunk_boundary(self, slot: int) -> bool:
        return slot > self.arrival and (slot - self.arrival - 1) % self.slots_per_chunk == 0

    def chunk_index_at(self, slot: int) -> int:
        return chunk_index_at(self, slot)

    def playout_index_at(self, slot: int) -> Optional[int]:
        return playout_index_at(self, slot)

    def playout_bitrate(self, slot: int) -> Optional[float]:
        index = self.playout_index_at(slot)
        if index is None or index > len(self.bitrate_history):
            return self.current_bitrate
        return self.bitrate_history[index - 1]

    def record_allocation(self, server: int, bitrate: float) -> None:
        per_server = self.server_bitrate_slots.setdefault(server, {})
        per_server[bitrate] = per_server.get(bitrate, 0) + 1


def _check_in_session(session: ClientSession, slot: int) -> None:
    if not session.arrival <= slot <= session.departure:
        raise OutOfSessionError(session.client_id, slot, session.arrival, session.departure)


def chunk_index_at(session: ClientSession, slot: int) -> int:
    """Download-chunk index ceil((t - A_i) / C), at least 1."""
    _check_in_session(session, slot)
    return max(1, math.ceil((slot - session.arrival) / session.slots_per_chunk))


def playout_index_at(session: ClientSession, slot: int) -> Optional[int]:
    """Playout-chunk index ceil((t - A_i - L_i) / C); None before playback starts."""
    _check_in_session(session, slot)
    if session.startup_delay is None:
        return None
    elapsed = slot - session.arrival - session.startup_delay
    if elapsed <= 0:
        return None
    return math.ceil(elapsed / session.slots_per_chunk)


@dataclass(frozen=True)
class LedgerRow:
    slot: int
    client: int
    server: int
    key: ChunkKey
    origin: bool
    throughput: float          # effective, Mbps
    rbs: int
    r_bar: float               # slot-start peer average
    boundary: bool = False
    stalled: bool = False
    throttled: bool = False
    buffer: float = 0.0


class SlotLedger:
    """Per-slot audit trail from which every metric derives."""

    def __init__(self, slot_len: float = 1.0):
        self.slot_len = slot_len
        self.rows: List[LedgerRow] = []
        self.cache_stats: Dict[int, Any] = {}
        self.pressure_events = 0
        self._by_slot: Dict[int, List[LedgerRow]] = defaultdict(list)
        self._by_client: Dict[int, List[LedgerRow]] = defaultdict(list)

    def add(self, row: LedgerRow) -> None:
        self.rows.append(row)
        self._by_slot[row.slot].append(row)
        self._by_client[row.client].append(row)

    def rows_for_slot(self, slot: int) -> List[LedgerRow]:
        return self._by_slot.get(slot, [])

    def rows_for_client(self, client: int) -> List[LedgerRow]:
        return self._by_client.get(client, [])

    def rb_usage(self) -> Dict[Tuple[int, int], int]:
        """(server, slot) -> resource blocks consumed."""
        usage: Dict[Tuple[int, int], int] = defaultdict(int)
        for row in self.rows:
            usage[(row.server, row.slot)] += row.rbs
        return dict(usage)

    def __len__(self) -> int:
        return len(self.rows)
