#!/usr/bin/env python3
"""
Edge Caches
Per-server chunk caches and their replacement policies: the retention-based
heuristic (RBCRH), LRU, LFU, a one-slot-lookahead oracle (OPT1) and fixed
contents filled once at start.
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Collection, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from error_handling import PreconditionError
from model import BitrateLadder, CachePolicy, ChunkKey, ClientSession, VideoCatalog
from workload import RetentionCurve, retention_at

logger = logging.getLogger(__name__)

SNAPSHOT_COLUMNS = ['server', 'video', 'chunk', 'bitrate', 'weight', 'value',
                    'last_access', 'access_count']

EPSILON = 1e-9


@dataclass
class CacheEntry:
    key: ChunkKey
    weight: float
    last_access: int
    access_count: int = 1
    value: float = 0.0
    order: int = 0


@dataclass
class CacheStats:
    hits: int = 0
    misses: int = 0
    evictions: int = 0
    client_misses: Dict[int, int] = field(default_factory=dict)

    @property
    def lookups(self) -> int:
        return self.hits + self.misses

    def record(self, client: Optional[int], hit: bool) -> None:
        if hit:
            self.hits += 1
            return
        self.misses += 1
        if client is not None:
            self.client_misses[client] = self.client_misses.get(client, 0) + 1


@dataclass
class UpdateReport:
    server: int
    slot: int
    inserted: List[ChunkKey] = field(default_factory=list)
    evicted: List[ChunkKey] = field(default_factory=list)
    rejected: List[ChunkKey] = field(default_factory=list)


class EdgeCache:
    """Chunk cache of one edge server; capacity and weights in Mb."""

    def __init__(self, server_id: int, capacity: float, chunk_len: float,
                 policy: CachePolicy = CachePolicy.RBCRH):
        self.server_id = server_id
        self.capacity = capacity
        self.chunk_len = chunk_len
        self.policy = policy
        self.entries: Dict[ChunkKey, CacheEntry] = {}
        self.stats = CacheStats()
        self._order = 0

    @property
    def used(self) -> float:
        return sum(entry.weight for entry in self.entries.values())

    def weight_of(self, key: ChunkKey) -> float:
        return key.weight(self.chunk_len)

    def fits(self, weight: float, used: Optional[float] = None) -> bool:
        used = self.used if used is None else used
        return used + weight <= self.capacity + EPSILON

    def contains(self, key: ChunkKey, slot: Optional[int] = None, client: Optional[int] = None,
                 commit: bool = False) -> bool:
        """
        Exact-triple membership.

        A committed request (``commit=True``) is counted as a hit or miss and,
        under LRU/LFU, refreshes the entry's recency and frequency. Probes made
        while evaluating candidate bitrates leave everything untouched.
        """
        entry = self.entries.get(key)
        hit = entry is not None
        if commit:
            self.stats.record(client, hit)
            if hit and self.policy in (CachePolicy.LRU, CachePolicy.LFU):
                entry.access_count += 1
                if slot is not None:
                    entry.last_access = slot
        return hit

    def insert(self, key: ChunkKey, slot: int, value: float = 0.0) -> None:
        self._order += 1
        self.entries[key] = CacheEntry(key, self.weight_of(key), slot, 1, value, self._order)

    def evict(self, key: ChunkKey) -> None:
        del self.entries[key]
        self.stats.evictions += 1

    def keys(self) -> List[ChunkKey]:
        return list(self.entries)


def candidate_set(server: int, slot: int, client: int,
                  sessions: Mapping[int, ClientSession]) -> List[int]:
    """
    Clients on the same server watching the same video at an earlier or equal
    download chunk than ``client`` (excluding ``client`` itself).
    """
    me = sessions[client]
    return chunk_candidates(me.video_id, me.chunk_index_at(slot), server, slot, sessions,
                            exclude={client})


def chunk_candidates(video: int, chunk_index: int, server: int, slot: int,
                     sessions: Mapping[int, ClientSession],
                     exclude: Collection[int] = ()) -> List[int]:
    """Candidate clients relative to a chunk position rather than a requester."""
    result = []
    for client_id, session in sessions.items():
        if client_id in exclude or not session.is_active(slot):
            continue
        if session.server != server or session.video_id != video:
            continue
        if session.chunk_index_at(slot) <= chunk_index:
            result.append(client_id)
    return sorted(result)


def p_reach(curve: RetentionCurve, j_chunk: int, i_chunk: int) -> float:
    """Chance that a viewer now at ``j_chunk`` is still watching at ``i_chunk``."""
    if j_chunk > i_chunk:
        raise PreconditionError(f"p_reach needs j_chunk <= i_chunk (got {j_chunk} > {i_chunk})",
                                {'j_chunk': j_chunk, 'i_chunk': i_chunk})
    value = 1.0 - (retention_at(curve, j_chunk) - retention_at(curve, i_chunk))
    return min(1.0, max(0.0, value))


def p_acc(session: ClientSession, server: int, bitrate: float) -> float:
    """Share of the client's allocated slots on ``server`` spent at ``bitrate``."""
    history = session.server_bitrate_slots.get(server, {})
    total = sum(history.values())
    if total == 0:
        return 0.0
    return history.get(bitrate, 0) / total


def chunk_value(key: ChunkKey, server: int, slot: int, sessions: Mapping[int, ClientSession],
                curve: RetentionCurve, ladder_size: int, exclude: Collection[int] = ()) -> float:
    """
    Caching probability of one chunk under independent events:
    1 - (1 - P_act(p)/|R|) * prod_j (1 - P_reach(j) * P_acc(j)).
    """
    miss_all = 1.0 - retention_at(curve, key.chunk_index) / ladder_size
    for client_id in chunk_candidates(key.video, key.chunk_index, server, slot, sessions, exclude):
        session = sessions[client_id]
        event = p_reach(curve, session.chunk_index_at(slot), key.chunk_index) * p_acc(session, server, key.bitrate)
        miss_all *= 1.0 - event
    return min(1.0, max(0.0, 1.0 - miss_all))


def p_cache(client: int, server: int, slot: int, sessions: Mapping[int, ClientSession],
            curve: RetentionCurve, ladder: BitrateLadder) -> float:
    """Caching probability of the chunk ``client`` is downloading at ``slot``."""
    session = sessions[client]
    key = session.current_key
    if key is None:
        key = ChunkKey(session.video_id, session.chunk_index_at(slot), ladder.r_max)
    return chunk_value(key, server, slot, sessions, curve, len(ladder), exclude={client})


def _rank(value: float, key: ChunkKey) -> Tuple[float, float, int, int]:
    return (-value, -key.bitrate, key.chunk_index, key.video)


def _dedupe(keys: Iterable[ChunkKey]) -> List[ChunkKey]:
    return list(dict.fromkeys(keys))


def _holders(key: ChunkKey, server: int, sessions: Mapping[int, ClientSession]) -> List[int]:
    """Clients on ``server`` whose current download is ``key``."""
    return [client_id for client_id, session in sessions.items()
            if session.server == server and session.current_key == key]


def rbcrh_update(cache: EdgeCache, slot: int, downloads: Sequence[ChunkKey],
                 sessions: Mapping[int, ClientSession], curves: Mapping[int, RetentionCurve],
                 ladder_size: int) -> UpdateReport:
    """
    Rebuild the cache from residents and this slot's origin downloads, in
    descending caching value, skipping chunks that would overflow.
    """
    report = UpdateReport(cache.server_id, slot)
    candidates = _dedupe(list(cache.entries) + list(downloads))
    # clients already fetching a chunk do not count toward its value
    values = {key: chunk_value(key, cache.server_id, slot, sessions, curves[key.video], ladder_size,
                               exclude=_holders(key, cache.server_id, sessions))
              for key in candidates}
    ranked = sorted(candidates, key=lambda key: _rank(values[key], key))

    keep = []
    used = 0.0
    for key in ranked:
        weight = cache.weight_of(key)
        if cache.fits(weight, used):
            keep.append(key)
            used += weight
        elif key not in cache.entries:
            report.rejected.append(key)

    kept = set(keep)
    for key in list(cache.entries):
        if key not in kept:
            cache.evict(key)
            report.evicted.append(key)
    for key in keep:
        if key in cache.entries:
            cache.entries[key].value = values[key]
        else:
            cache.insert(key, slot, values[key])
            report.inserted.append(key)
    return report


def _classic_update(cache: EdgeCache, slot: int, downloads: Sequence[ChunkKey], victim_rank) -> UpdateReport:
    report = UpdateReport(cache.server_id, slot)
    for key in _dedupe(downloads):
        if key in cache.entries:
            continue
        weight = cache.weight_of(key)
        if weight > cache.capacity + EPSILON:
            report.rejected.append(key)
            continue
        while not cache.fits(weight):
            victim = min(cache.entries.values(), key=victim_rank)
            cache.evict(victim.key)
            report.evicted.append(victim.key)
        cache.insert(key, slot)
        report.inserted.append(key)
    return report


def lru_update(cache: EdgeCache, slot: int, downloads: Sequence[ChunkKey]) -> UpdateReport:
    """Insert downloads, evicting the stalest entries first."""
    return _classic_update(cache, slot, downloads, lambda e: (e.last_access, e.order))


def lfu_update(cache: EdgeCache, slot: int, downloads: Sequence[ChunkKey]) -> UpdateReport:
    """Insert downloads, evicting the least-accessed entries first (ties: stalest)."""
    return _classic_update(cache, slot, downloads, lambda e: (e.access_count, e.last_access, e.order))


def best_next_slot_subset(items: Sequence[ChunkKey], demand: Mapping[ChunkKey, int],
                          weights: Mapping[ChunkKey, float], capacity: float) -> Tuple[int, List[ChunkKey]]:
    """
    0/1 knapsack: the subset of requested items serving the most next-slot
    requests within capacity; ties go to the lighter subset.
    """
    requested = [key for key in items if demand.get(key, 0) > 0]
    # weight -> (served, chosen)
    states: Dict[float, Tuple[int, Tuple[ChunkKey, ...]]] = {0.0: (0, ())}
    for key in requested:
        weight = weights[key]
        for used, (served, chosen) in list(states.items()):
            new_used = round(used + weight, 9)
            if new_used > capacity + EPSILON:
                continue
            candidate = (served + demand[key], chosen + (key,))
            current = states.get(new_used)
            if current is None or candidate[0] > current[0]:
                states[new_used] = candidate
    best_used = min(states, key=lambda used: (-states[used][0], used))
    served, chosen = states[best_used]
    return served, list(chosen)


def opt1_update(cache: EdgeCache, slot: int, downloads: Sequence[ChunkKey],
                next_requests: Sequence[ChunkKey]) -> UpdateReport:
    """
    Keep the resident/downloaded chunks that serve the most requests of the
    next slot, then top up newest first: this slot's downloads (latest
    first), then residents by most recent access.
    """
    report = UpdateReport(cache.server_id, slot)
    residents = list(cache.entries)
    by_recency = sorted(cache.entries.values(), key=lambda e: (e.last_access, e.order), reverse=True)
    items = _dedupe(list(reversed(downloads)) + [entry.key for entry in by_recency])
    weights = {key: cache.weight_of(key) for key in items}
    demand = Counter(next_requests)

    _, chosen = best_next_slot_subset(items, demand, weights, cache.capacity)
    keep = list(chosen)
    used = sum(weights[key] for key in keep)
    chosen_set = set(chosen)
    for key in items:
        if key in chosen_set:
            continue
        if cache.fits(weights[key], used):
            keep.append(key)
            used += weights[key]
        elif key not in cache.entries:
            report.rejected.append(key)

    kept = set(keep)
    for key in residents:
        if key not in kept:
            cache.evict(key)
            report.evicted.append(key)
    for key in keep:
        if key not in cache.entries:
            cache.insert(key, slot, float(demand.get(key, 0)))
            report.inserted.append(key)
        else:
            cache.entries[key].value = float(demand.get(key, 0))
    return report


def fixed_fill(cache: EdgeCache, catalog: VideoCatalog, ladder: BitrateLadder, chunk_len: float,
               rng: np.random.Generator, fill_ratio: float = 1.0) -> UpdateReport:
    """Fill with random distinct (video, chunk, bitrate) triples up to fill_ratio * Q."""
    report = UpdateReport(cache.server_id, 0)
    triples = [ChunkKey(video.video_id, index, bitrate)
               for video in catalog.videos
               for index in range(1, video.num_chunks(chunk_len) + 1)
               for bitrate in ladder]
    budget = cache.capacity * fill_ratio
    used = cache.used
    for position in rng.permutation(len(triples)):
        key = triples[int(position)]
        weight = cache.weight_of(key)
        if key not in cache.entries and used + weight <= budget + EPSILON:
            cache.insert(key, 0)
            used += weight
            report.inserted.append(key)
    return report


def update_cache(cache: EdgeCache, slot: int, downloads: Sequence[ChunkKey],
                 sessions: Mapping[int, ClientSession], curves: Mapping[int, RetentionCurve],
                 ladder_size: int, next_requests: Optional[Sequence[ChunkKey]] = None) -> UpdateReport:
    """Dispatch to the cache's replacement policy."""
    if cache.policy is CachePolicy.RBCRH:
        report = rbcrh_update(cache, slot, downloads, sessions, curves, ladder_size)
    elif cache.policy is CachePolicy.LRU:
        report = lru_update(cache, slot, downloads)
    elif cache.policy is CachePolicy.LFU:
        report = lfu_update(cache, slot, downloads)
    elif cache.policy is CachePolicy.OPT1:
        report = opt1_update(cache, slot, downloads, next_requests or [])
    else:
        report = UpdateReport(cache.server_id, slot)

    if report.inserted or report.evicted:
        logger.debug(f"Server {cache.server_id} slot {slot} {cache.policy.value}: "
                     f"+{len(report.inserted)} -{len(report.evicted)} used {cache.used:.1f}/{cache.capacity:.1f} Mb")
    return report


def snapshot_frame(caches: Iterable[EdgeCache]) -> pd.DataFrame:
    """Cache contents in the debug dump layout."""
    rows = []
    for cache in caches:
        for entry in cache.entries.values():
            rows.append({
                'server': cache.server_id,
                'video': entry.key.video,
                'chunk': entry.key.chunk_index,
                'bitrate': entry.key.bitrate,
                'weight': entry.weight,
                'value': entry.value,
                'last_access': entry.last_access,
                'access_count': entry.access_count,
            })
    return pd.DataFrame(rows, columns=SNAPSHOT_COLUMNS)
