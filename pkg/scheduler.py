#!/usr/bin/env python3
"""
Slot Scheduler
The per-slot simulation loop and the cache-aware bitrate allocation
(startup and steady phases) for every active client.

Each slot is split into a side-effect-free plan (server mapping, effective
throughput, resource-block charges and bitrate decisions) and a commit that
applies the plan to sessions, buffers, caches and the ledger. The split lets
the one-slot-lookahead cache policy dry-run the next slot.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from cache import EdgeCache, fixed_fill, update_cache
from error_handling import ConfigError, PreconditionError
from metrics import avg_quality, fairness_deviation, switching
from model import (BitrateLadder, CachePolicy, ChunkKey, ClientSession, LedgerRow,
                   ScenarioConfig, SlotLedger)
from radio import (INFEASIBLE, SnrTrace, effective_throughput, generate_trace, load_trace,
                   rb_cost, theoretical_throughput)
from workload import (ArrivalPlan, RetentionCurve, build_arrival_plan, curves_for_catalog,
                      load_arrival_plan)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Weights:
    rho: float
    omega: float
    gamma: float
    beta: float = 1.0

    def __post_init__(self):
        for name in ('rho', 'omega', 'gamma', 'beta'):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise PreconditionError(f"Weight {name} must be in [0, 1] (got {value})")


@dataclass(frozen=True)
class Decision:
    """Outcome of one chunk request. ``tier`` 0 is the first-chunk rule, None the R_min fallback."""
    client: int
    slot: int
    chunk_index: int
    bitrate: float
    origin: bool
    utility: float
    rbs: int
    weights: Weights
    tier: Optional[int] = None
    pressure: bool = False
    throttled: bool = False


@dataclass
class SlotStep:
    """What one active client does in one slot."""
    client: int
    server: int
    boundary: bool
    key: ChunkKey
    origin: bool
    thr_per_rb: float
    throughput: float
    rbs: int
    r_bar: Optional[float]
    throttled: bool = False
    decision: Optional[Decision] = None


@dataclass
class World:
    cfg: ScenarioConfig
    seed: int
    trace: SnrTrace
    plan: ArrivalPlan
    curves: Dict[int, RetentionCurve]
    sessions: Dict[int, ClientSession]
    caches: Dict[int, EdgeCache]
    ledger: SlotLedger
    total_utility: float = 0.0
    slot: int = 0
    updates: Dict[int, int] = field(default_factory=dict)


def build_world(cfg: ScenarioConfig, seed: int, trace: Optional[SnrTrace] = None,
                plan: Optional[ArrivalPlan] = None) -> World:
    """
    Initialise trace, workload, sessions and caches for one replication.

    A given ``trace`` or ``plan`` replaces the configured/generated one.

    Raises:
        ConfigError: an imported plan that does not match the scenario
    """
    if trace is None and cfg.trace_path:
        trace = load_trace(cfg.trace_path, cfg.num_clients, cfg.num_servers, cfg.num_slots)
    elif trace is None:
        trace = generate_trace(cfg, seed)

    if plan is None:
        plan = load_arrival_plan(cfg.plan_path) if cfg.plan_path else build_arrival_plan(cfg, seed)
    if len(plan) != cfg.num_clients:
        raise ConfigError(f"Arrival plan has {len(plan)} clients, scenario has {cfg.num_clients}",
                          field='plan_path')

    sessions = {}
    for i in range(len(plan)):
        client_id = i + 1
        if plan.videos[i] not in cfg.catalog.ids:
            raise ConfigError(f"Arrival plan assigns unknown video {plan.videos[i]} to client {client_id}",
                              field='plan_path')
        sessions[client_id] = ClientSession(client_id, plan.videos[i], plan.arrivals[i], plan.departures[i],
                                            slots_per_chunk=cfg.slots_per_chunk)

    caches = {}
    for server in range(1, cfg.num_servers + 1):
        cache = EdgeCache(server, cfg.cache_size, cfg.chunk_len, cfg.cache_policy)
        if cfg.cache_policy is CachePolicy.FIXED:
            rng = np.random.default_rng(np.random.SeedSequence([seed, 3, server]))
            fixed_fill(cache, cfg.catalog, cfg.ladder, cfg.chunk_len, rng, cfg.fixed_fill_ratio)
        caches[server] = cache

    return World(cfg, seed, trace, plan, curves_for_catalog(cfg), sessions, caches, SlotLedger(cfg.slot_len))


def map_server(session: ClientSession, slot: int, trace: SnrTrace) -> int:
    """Highest-SNR server at chunk boundaries, otherwise the current one."""
    if session.server is None or session.is_chunk_boundary(slot):
        return trace.best_server(session.client_id, slot)
    return session.server


def startup_buffer_step(session: ClientSession, thr_hat: float, slot_len: float,
                        buffer_cap: float, slot: int) -> bool:
    """Fill without playout; returns True when the buffer first fills."""
    session.buffer = min(buffer_cap, session.buffer + thr_hat * slot_len)
    if session.buffer >= buffer_cap and not session.buffer_full:
        session.buffer_full = True
        session.startup_delay = slot - session.arrival
        return True
    return False


def steady_buffer_step(session: ClientSession, thr_hat: float, bitrate: float,
                       slot_len: float, buffer_cap: float) -> bool:
    """Fill minus playout drain; returns True when the slot ends stalled."""
    level = session.buffer + (thr_hat - bitrate) * slot_len
    stalled = level <= 0.0
    if stalled:
        session.stalled_slots += 1
        if not session.in_stall:
            session.stalls += 1
        level = 0.0
    session.in_stall = stalled
    session.buffer = min(buffer_cap, level)
    return stalled


def estimate_throughput(session: ClientSession, server: int, slot: int, current: float) -> float:
    """Mean effective throughput of the previous chunk on ``server``, else ``current``."""
    previous = session.chunk_index_at(slot) - 1
    samples = [thr for _, chunk, srv, thr in session.thr_history if chunk == previous and srv == server]
    if not samples:
        return current
    return sum(samples) / len(samples)


def switching_threshold(session: ClientSession, ladder: BitrateLadder, buffer_cap: float) -> float:
    """Switch a buffer-based rule would make: |ladder[ceil(B/B_max |R|)] - r_prev|."""
    r_prev = session.current_bitrate
    if r_prev is None:
        return ladder.span
    position = max(1, min(len(ladder), math.ceil(session.buffer / buffer_cap * len(ladder) - 1e-9)))
    return abs(ladder.at(position) - r_prev)


def self_tune_weights(bitrate: float, r_prev: float, r_bar: float, ladder: BitrateLadder,
                      beta: float = 1.0) -> Weights:
    span = ladder.span
    if span <= 0:
        return Weights(1.0, 0.0, 0.0, beta)

    def clamp(value: float) -> float:
        return min(1.0, max(0.0, value))

    return Weights(
        rho=clamp(1.0 - (ladder.r_max - bitrate) / span),
        omega=clamp(abs(bitrate - r_prev) / span),
        gamma=clamp(abs(bitrate - r_bar) / span),
        beta=beta,
    )


def candidate_utility(bitrate: float, r_prev: float, r_bar: float, cached: bool,
                      weights: Weights, beta: Optional[float] = None) -> float:
    """beta * QE - (1 - beta) * Data, with Data = 0 for cached chunks."""
    beta = weights.beta if beta is None else beta
    quality = (weights.rho * bitrate
               - weights.omega * abs(bitrate - r_prev)
               - weights.gamma * abs(bitrate - r_bar))
    data = 0.0 if cached else bitrate
    return beta * quality - (1.0 - beta) * data


def peer_average(sessions: Mapping[int, ClientSession], client: int, slot: int) -> Optional[float]:
    """Mean committed bitrate of the other active clients; None without peers."""
    rates = [s.current_bitrate for cid, s in sessions.items()
             if cid != client and s.is_active(slot) and s.current_bitrate is not None]
    if not rates:
        return None
    return sum(rates) / len(rates)


def select_bitrate(session: ClientSession, slot: int, cache: EdgeCache, cfg: ScenarioConfig,
                   thr_per_rb: float, thr_hat: float, rb_remaining: int,
                   r_bar: Optional[float]) -> Decision:
    """
    Cache-aware bitrate choice for a chunk request.

    The first chunk gets the highest bitrate whose RB cost fits. Later chunks
    scan the ladder top-down in three tiers (switching and fairness limits,
    switching limit only, feasibility only) and keep the utility maximiser of
    the first non-empty tier. With no feasible bitrate the client falls back
    to R_min and the decision is flagged as constraint pressure.

    Args:
        session: Requesting client (at a chunk boundary)
        slot: Current slot
        cache: Cache of the client's server
        cfg: Scenario
        thr_per_rb: Theoretical throughput per RB on the client's server
        thr_hat: Effective (PF-share) throughput this slot
        rb_remaining: Unconsumed RBs of the server this slot
        r_bar: Peers' average bitrate at slot start, None without peers

    Returns:
        Decision (rbs capped at rb_remaining, ``throttled`` when capped)
    """
    ladder = cfg.ladder
    beta = cfg.effective_beta
    chunk_index = session.chunk_index_at(slot)

    def key_for(bitrate: float) -> ChunkKey:
        return ChunkKey(session.video_id, chunk_index, bitrate)

    def decide(bitrate: float, r_prev: float, tier: Optional[int], pressure: bool = False) -> Decision:
        reference = r_prev if r_bar is None else r_bar
        cached = cache.contains(key_for(bitrate))
        weights = self_tune_weights(bitrate, r_prev, reference, ladder, beta)
        cost = rb_cost(bitrate, thr_per_rb)
        rbs = 0 if cost == INFEASIBLE else min(int(cost), rb_remaining)
        return Decision(session.client_id, slot, chunk_index, bitrate, not cached,
                        candidate_utility(bitrate, r_prev, reference, cached, weights),
                        rbs, weights, tier, pressure, cost > rb_remaining)

    r_prev = session.current_bitrate
    if chunk_index == 1 or r_prev is None:
        for bitrate in ladder.descending():
            if rb_cost(bitrate, thr_per_rb) <= rb_remaining:
                return decide(bitrate, bitrate, 0)
        return decide(ladder.r_min, ladder.r_min, None, pressure=True)

    reference = r_prev if r_bar is None else r_bar
    delta_s = switching_threshold(session, ladder, cfg.buffer_cap)
    est = estimate_throughput(session, cache.server_id, slot, thr_hat)
    if cfg.feasibility_gate == "strict":
        ceiling = max(est, thr_hat) * cfg.slot_len
    else:
        ceiling = max(est * cfg.slot_len, thr_hat * cfg.slot_len, session.buffer)

    feasible = [r for r in ladder.descending()
                if rb_cost(r, thr_per_rb) <= rb_remaining and r * cfg.slot_len <= ceiling + 1e-9]

    def switch_ok(r: float) -> bool:
        return abs(r - r_prev) <= delta_s + 1e-9

    def fair_ok(r: float) -> bool:
        if ladder.span <= 0:
            return True
        return 1.0 - abs(r - reference) / ladder.span >= cfg.fairness_threshold - 1e-9

    tiers = (
        (1, lambda r: switch_ok(r) and fair_ok(r)),
        (2, switch_ok),
        (3, lambda r: True),
    )
    for tier, passes in tiers:
        best = None
        for bitrate in feasible:
            if not passes(bitrate):
                continue
            candidate = decide(bitrate, r_prev, tier)
            if best is None or candidate.utility > best.utility:
                best = candidate
        if best is not None:
            return best

    return decide(ladder.r_min, r_prev, None, pressure=True)


def _charge(cost: float, remaining: int) -> Tuple[int, float, bool]:
    """RBs granted, throughput fraction and throttled flag for a locked bitrate."""
    if cost == INFEASIBLE:
        return 0, 0.0, True
    cost = int(cost)
    if cost <= remaining:
        return cost, 1.0, False
    return remaining, (remaining / cost if cost else 0.0), True


def plan_slot(world: World, slot: int) -> List[SlotStep]:
    """
    Decide slot ``slot`` for every active client without touching any state.

    Mid-chunk clients are charged first at their locked bitrate (ascending id),
    then chunk requests are decided against what is left of each server's
    budget (ascending id).
    """
    cfg = world.cfg
    active = [s for cid, s in sorted(world.sessions.items()) if s.is_active(slot)]
    if not active:
        return []

    servers = {s.client_id: map_server(s, slot, world.trace) for s in active}
    thr_rb = {s.client_id: theoretical_throughput(world.trace.snr(s.client_id, servers[s.client_id], slot), cfg.radio)
              for s in active}

    committed = [(s.client_id, s.current_bitrate) for s in active if s.current_bitrate is not None]
    rate_sum = sum(rate for _, rate in committed)

    def r_bar_for(client: int) -> Optional[float]:
        own = world.sessions[client].current_bitrate
        count = len(committed) - (1 if own is not None else 0)
        if count == 0:
            return None
        return (rate_sum - (own or 0.0)) / count

    steps: List[SlotStep] = []
    for server in sorted(set(servers.values())):
        members = [s for s in active if servers[s.client_id] == server]
        shares = effective_throughput(server, slot, [(s.client_id, thr_rb[s.client_id]) for s in members],
                                      cfg.rb_per_slot)
        remaining = cfg.rb_per_slot

        for session in members:
            if session.is_chunk_boundary(slot):
                continue
            client = session.client_id
            granted, fraction, throttled = _charge(rb_cost(session.current_bitrate, thr_rb[client]), remaining)
            remaining -= granted
            steps.append(SlotStep(client, server, False, session.current_key, session.current_origin,
                                  thr_rb[client], shares[client] * fraction, granted, r_bar_for(client),
                                  throttled))

        for session in members:
            if not session.is_chunk_boundary(slot):
                continue
            client = session.client_id
            decision = select_bitrate(session, slot, world.caches[server], cfg, thr_rb[client],
                                      shares[client], remaining, r_bar_for(client))
            cost = rb_cost(decision.bitrate, thr_rb[client])
            _, fraction, _ = _charge(cost, remaining)
            remaining -= decision.rbs
            key = ChunkKey(session.video_id, decision.chunk_index, decision.bitrate)
            steps.append(SlotStep(client, server, True, key, decision.origin, thr_rb[client],
                                  shares[client] * fraction, decision.rbs, r_bar_for(client),
                                  decision.throttled, decision))

    steps.sort(key=lambda step: step.client)
    return steps


def client_utility(session: ClientSession, ledger: SlotLedger, beta: float) -> float:
    """beta (rho AQ - omega E - gamma F) - (1 - beta) BT with per-client mean weights."""
    if session.weight_history:
        rho, omega, gamma = (float(np.mean(column)) for column in zip(*session.weight_history))
    else:
        rho, omega, gamma = 1.0, 0.0, 0.0
    magnitude, _ = switching(session)
    quality = (rho * avg_quality(session) - omega * magnitude
               - gamma * fairness_deviation(ledger, session.client_id))
    return beta * quality - (1.0 - beta) * session.backhaul_bits


def commit_slot(world: World, slot: int, steps: Sequence[SlotStep]) -> None:
    """Apply a slot plan to sessions, ledger, utility and caches."""
    cfg = world.cfg
    downloads: Dict[int, List[ChunkKey]] = {}

    for step in steps:
        session = world.sessions[step.client]
        session.server = step.server
        origin = step.origin
        if step.boundary:
            decision = step.decision
            hit = world.caches[step.server].contains(step.key, slot, step.client, commit=True)
            origin = not hit
            session.lookups += 1
            if origin:
                session.misses += 1
            session.current_key = step.key
            session.current_origin = origin
            session.bitrate_history.append(step.key.bitrate)
            session.origin_flags[step.key.chunk_index] = origin
            session.weight_history.append((decision.weights.rho, decision.weights.omega, decision.weights.gamma))
            if decision.pressure:
                session.pressure_events += 1
                world.ledger.pressure_events += 1
        if step.throttled:
            session.throttled_slots += 1
            world.ledger.pressure_events += 1

        session.record_allocation(step.server, step.key.bitrate)
        session.thr_history.append((slot, step.key.chunk_index, step.server, step.throughput))
        if origin:
            session.backhaul_bits += step.key.bitrate * cfg.slot_len
            downloads.setdefault(step.server, []).append(step.key)

        stalled = False
        if not session.buffer_full:
            startup_buffer_step(session, step.throughput, cfg.slot_len, cfg.buffer_cap, slot)
        else:
            stalled = steady_buffer_step(session, step.throughput, session.playout_bitrate(slot),
                                         cfg.slot_len, cfg.buffer_cap)

        r_bar = step.key.bitrate if step.r_bar is None else step.r_bar
        world.ledger.add(LedgerRow(slot, step.client, step.server, step.key, origin, step.throughput,
                                   step.rbs, r_bar, step.boundary, stalled, step.throttled, session.buffer))

        if slot == session.departure:
            session.utility = client_utility(session, world.ledger, cfg.effective_beta)
            world.total_utility += session.utility

    if cfg.cache_policy is CachePolicy.FIXED or not downloads:
        return

    next_requests: Dict[int, List[ChunkKey]] = {}
    if cfg.cache_policy is CachePolicy.OPT1 and slot < cfg.num_slots:
        # every triple transferred next slot, mid-chunk ones included
        for step in plan_slot(world, slot + 1):
            next_requests.setdefault(step.server, []).append(step.key)

    for server in sorted(downloads):
        update_cache(world.caches[server], slot, downloads[server], world.sessions, world.curves,
                     len(cfg.ladder), next_requests.get(server, []))
        world.updates[server] = world.updates.get(server, 0) + 1


def run_slot(world: World, slot: int) -> List[SlotStep]:
    steps = plan_slot(world, slot)
    commit_slot(world, slot, steps)
    world.slot = slot
    return steps


def check_invariants(world: World) -> List[str]:
    """RB budgets, cache capacities and backhaul accounting; returns violations."""
    cfg = world.cfg
    problems = []
    for (server, slot), used in world.ledger.rb_usage().items():
        if used > cfg.rb_per_slot:
            problems.append(f"server {server} slot {slot}: {used} RBs > {cfg.rb_per_slot}")
    for cache in world.caches.values():
        if cache.used > cache.capacity + 1e-6:
            problems.append(f"server {cache.server_id}: cache {cache.used:.3f} Mb > {cache.capacity} Mb")
    ledger_backhaul = sum(row.key.bitrate * cfg.slot_len for row in world.ledger.rows if row.origin)
    session_backhaul = sum(s.backhaul_bits for s in world.sessions.values())
    if abs(ledger_backhaul - session_backhaul) > 1e-6 * max(1.0, session_backhaul):
        problems.append(f"backhaul mismatch: ledger {ledger_backhaul:.3f} Mb, sessions {session_backhaul:.3f} Mb")
    return problems


def run(world: World) -> SlotLedger:
    """Run every slot of the scenario and return the ledger."""
    for slot in range(world.slot + 1, world.cfg.num_slots + 1):
        run_slot(world, slot)

    world.ledger.cache_stats = {server: cache.stats for server, cache in world.caches.items()}

    stalls = sum(s.stalls for s in world.sessions.values())
    if stalls:
        logger.warning(f"Seed {world.seed}: {stalls} stall events")
    if world.ledger.pressure_events:
        logger.warning(f"Seed {world.seed}: {world.ledger.pressure_events} constraint-pressure events "
                       f"(R_min fallbacks and RB throttling)")
    for problem in check_invariants(world):
        logger.error(f"Invariant violated: {problem}")

    logger.debug(f"Seed {world.seed}: {len(world.ledger)} ledger rows, total utility {world.total_utility:.2f}")
    return world.ledger
