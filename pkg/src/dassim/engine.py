"""Discrete-time dissemination of the block through the topic meshes.

Each step runs, in order: delivery of due messages, enqueueing of newly held
cells for forwarding, custody-restricted reconstruction, bandwidth-limited
sending, and bucket refill. Sending from step ``s`` arrives at the first step
whose start time is at least ``send time + latencyMs`` (never the same step).
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .block import BlockAvailability, new_released_block
from .config import SimConfig, derive_seed, exact, round_half_away, validate
from .metrics import RunMetrics, theoretical_total
from .overlay import PRODUCER, Overlay, NodePopulation, build_overlay, generate_population

COMPLETE = "complete"
TIMEOUT = "timeout"
STALLED = "stalled"


def step_budget_bits(uplink_mbps: float, step_duration_ms: int) -> int:
    """Bits a node may send per step: Mbps * 10^6 * step_ms / 1000."""
    return round_half_away(exact(uplink_mbps) * 10**6 * step_duration_ms / 1000)


@dataclass
class StepReport:
    step: int
    time_ms: int
    arrivals: int
    acquired: int
    repaired: int
    sent: int
    in_flight: int


@dataclass
class World:
    """All mutable state of one run.

    Node-indexed arrays include the producer at index 0.
    """

    cfg: SimConfig
    truth: BlockAvailability
    population: NodePopulation
    overlay: Overlay
    # directed mesh edges, grouped by (source, topic) and sorted by target
    edge_src: np.ndarray
    edge_dst: np.ndarray
    edge_topic: np.ndarray
    edge_rev: np.ndarray
    known: np.ndarray
    sub_slot: np.ndarray
    slot_start: np.ndarray
    slot_end: np.ndarray
    # per-node availability and custody bookkeeping
    held: np.ndarray
    row_cnt: np.ndarray
    col_cnt: np.ndarray
    row_mult: np.ndarray
    col_mult: np.ndarray
    have: np.ndarray
    need: np.ndarray
    malicious: np.ndarray
    # forwarding queues
    log: np.ndarray
    log_start: np.ndarray
    log_len: np.ndarray
    log_cur: np.ndarray
    bucket: np.ndarray
    step_bits: np.ndarray
    sent_cells: np.ndarray
    # messages in flight, bucketed by arrival step modulo n_slots
    msg_edge: np.ndarray
    msg_pos: np.ndarray
    msg_count: np.ndarray
    work_node: np.ndarray
    work_line: np.ndarray
    stats: np.ndarray
    target: int
    step_index: int = 0
    now_ms: int = 0
    reports: list = field(default_factory=list)

    @property
    def n_nodes(self) -> int:
        return self.held.shape[0]

    @property
    def delivered(self) -> int:
        return int(self.stats[K.DELIVERED])

    @property
    def missing(self) -> int:
        return self.target - self.delivered

    @property
    def ready_fraction(self) -> float:
        custodians = self.n_nodes - 1
        return float(self.stats[K.READY]) / custodians if custodians else 1.0

    @property
    def in_flight(self) -> int:
        return int(self.msg_count.sum())

    def queues_empty(self) -> bool:
        return bool((self.log_cur >= self.log_len).all())

    def quiescent(self) -> bool:
        return self.in_flight == 0 and self.queues_empty()

    def avail(self, node: int) -> BlockAvailability:
        """Snapshot of what ``node`` holds."""
        bits = self.held[node].reshape(self.cfg.n_rows, self.cfg.n_cols).astype(bool)
        return BlockAvailability(bits, self.cfg.row_size_k, self.cfg.col_size_k)

    def pending(self, node: int) -> np.ndarray:
        """Cells still in ``node``'s send queue, FIFO order."""
        start = self.log_start[node]
        return self.log[start + self.log_cur[node] : start + self.log_len[node]].copy()

    def network_avail(self) -> BlockAvailability:
        """Cells held by at least one node, producer included."""
        bits = self.held.any(axis=0).reshape(self.cfg.n_rows, self.cfg.n_cols)
        return BlockAvailability(bits, self.cfg.row_size_k, self.cfg.col_size_k)

    @property
    def arrival_delay(self) -> int:
        return max(1, math.ceil(self.cfg.latency_ms / self.cfg.step_duration_ms))


def _directed_edges(overlay: Overlay, n_nodes: int, n_topics: int):
    src, dst, top = [], [], []
    for topic, mesh in overlay.meshes.items():
        e = mesh.edges
        if len(e):
            src += [e[:, 0], e[:, 1]]
            dst += [e[:, 1], e[:, 0]]
            top.append(np.full(2 * len(e), topic, dtype=np.int64))
        src.append(np.full(len(mesh.producer_peers), PRODUCER, dtype=np.int64))
        dst.append(mesh.producer_peers.astype(np.int64))
        top.append(np.full(len(mesh.producer_peers), topic, dtype=np.int64))
    if not src:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty, empty
    src, dst, top = np.concatenate(src), np.concatenate(dst), np.concatenate(top)
    key = (src * n_topics + top) * n_nodes + dst
    order = np.argsort(key, kind="stable")
    src, dst, top, key = src[order], dst[order], top[order], key[order]
    rkey = (dst * n_topics + top) * n_nodes + src
    idx = np.searchsorted(key, rkey)
    idx_c = np.minimum(idx, len(key) - 1)
    rev = np.where((key[idx_c] == rkey) & (src != PRODUCER), idx_c, -1)
    return src, dst, top, rev


def seed_producer(world: World) -> int:
    """Queue every released cell at the producer.

    Cells are queued along diagonals so that consecutive cells belong to
    different rows and columns, spreading the producer's uplink round-robin
    over the topics. Returns the number of transmissions queued.
    """
    cfg = world.cfg
    r = np.arange(cfg.n_rows)
    order = np.concatenate(
        [r * cfg.n_cols + (r + j) % cfg.n_cols for j in range(cfg.n_cols)]
    )
    order = order[world.truth.bits.reshape(-1)[order]]
    start = world.log_start[PRODUCER]
    world.log[start : start + len(order)] = order
    world.log_len[PRODUCER] = len(order)
    world.log_cur[PRODUCER] = 0
    fanout = world.slot_end - world.slot_start
    slots = world.sub_slot[PRODUCER]
    per_row = np.where(slots[: cfg.n_rows] >= 0, fanout[slots[: cfg.n_rows]], 0)
    per_col = np.where(slots[cfg.n_rows :] >= 0, fanout[slots[cfg.n_rows :]], 0)
    bits = world.truth.bits
    return int((bits.sum(axis=1) * per_row).sum() + (bits.sum(axis=0) * per_col).sum())


def build_world(cfg: SimConfig) -> World:
    """Validate ``cfg`` and construct the initial world for its seed."""
    cfg = validate(cfg)
    seed = cfg.seed
    truth = new_released_block(cfg, np.random.default_rng(derive_seed(seed, "withholding", 0)))
    population = generate_population(
        cfg,
        np.random.default_rng(derive_seed(seed, "custody", 0)),
        np.random.default_rng(derive_seed(seed, "malicious", 0)),
    )
    overlay = build_overlay(population, seed)
    return world_from_parts(cfg, truth, population, overlay)


def world_from_parts(
    cfg: SimConfig, truth: BlockAvailability, population: NodePopulation, overlay: Overlay
) -> World:
    """Assemble engine state from an explicit block, population and overlay."""
    n = len(population)
    n_rows, n_cols = cfg.n_rows, cfg.n_cols
    n_topics = n_rows + n_cols
    n_cells = n_rows * n_cols

    src, dst, top, rev = _directed_edges(overlay, n, n_topics)
    n_edges = len(src)
    words = (max(n_rows, n_cols) + 63) // 64
    pair = src * n_topics + top
    uniq, first = np.unique(pair, return_index=True)
    slot_start = first.astype(np.int64)
    slot_end = np.append(first[1:], n_edges).astype(np.int64)
    sub_slot = np.full((n, n_topics), -1, dtype=np.int64)
    sub_slot[uniq // n_topics, uniq % n_topics] = np.arange(len(uniq))

    row_mult = population.row_multiplicity()
    col_mult = population.col_multiplicity()
    need = (row_mult.sum(axis=1) * n_cols + col_mult.sum(axis=1) * n_rows).astype(np.int64)
    malicious = np.array([node.malicious for node in population.nodes], dtype=np.uint8)

    n_custody_rows = (row_mult > 0).sum(axis=1)
    n_custody_cols = (col_mult > 0).sum(axis=1)
    capacity = (
        n_custody_rows * n_cols + n_custody_cols * n_rows - n_custody_rows * n_custody_cols
    ).astype(np.int64)
    capacity[malicious == 1] = 0
    capacity[PRODUCER] = n_cells
    log_start = np.concatenate([[0], np.cumsum(capacity)[:-1]]).astype(np.int64)

    cell_bits = cfg.cell_bits
    step_bits = np.array(
        [step_budget_bits(node.uplink_mbps, cfg.step_duration_ms) for node in population.nodes],
        dtype=np.int64,
    )
    per_step = ((step_bits + cell_bits - 1) // cell_bits)[malicious == 0].sum()
    msg_capacity = int(max(1, min(per_step, n_edges * max(n_rows, n_cols))))
    delay = max(1, math.ceil(cfg.latency_ms / cfg.step_duration_ms))
    n_slots = delay + 1

    held = np.zeros((n, n_cells), dtype=np.uint8)
    held[PRODUCER] = truth.bits.reshape(-1)
    world = World(
        cfg=cfg,
        truth=truth,
        population=population,
        overlay=overlay,
        edge_src=src,
        edge_dst=dst,
        edge_topic=top,
        edge_rev=rev.astype(np.int64),
        known=np.zeros((n_edges, words), dtype=np.uint64),
        sub_slot=sub_slot,
        slot_start=slot_start,
        slot_end=slot_end,
        held=held,
        row_cnt=np.zeros((n, n_rows), dtype=np.int64),
        col_cnt=np.zeros((n, n_cols), dtype=np.int64),
        row_mult=row_mult.astype(np.int64),
        col_mult=col_mult.astype(np.int64),
        have=np.zeros(n, dtype=np.int64),
        need=need,
        malicious=malicious,
        log=np.zeros(int(capacity.sum()), dtype=np.int64 if n_cells > 2**31 - 1 else np.int32),
        log_start=log_start,
        log_len=np.zeros(n, dtype=np.int64),
        log_cur=np.zeros(n, dtype=np.int64),
        bucket=step_bits.copy(),
        step_bits=step_bits,
        sent_cells=np.zeros(n, dtype=np.int64),
        msg_edge=np.zeros((n_slots, msg_capacity), dtype=np.int64 if n_edges > 2**31 - 1 else np.int32),
        msg_pos=np.zeros((n_slots, msg_capacity), dtype=np.int32),
        msg_count=np.zeros(n_slots, dtype=np.int64),
        work_node=np.zeros(max(1, n * n_topics), dtype=np.int64),
        work_line=np.zeros(max(1, n * n_topics), dtype=np.int64),
        stats=np.zeros(K.N_STATS, dtype=np.int64),
        target=int(need.sum()),
    )
    seed_producer(world)
    return world


def step(world: World) -> StepReport:
    """Advance the world by one step and report what happened in it."""
    cfg = world.cfg
    w = world
    n_slots = len(w.msg_count)
    slot = w.step_index % n_slots
    before = w.stats.copy()
    K.deliver_and_repair(
        slot, w.msg_edge, w.msg_pos, w.msg_count,
        w.edge_dst, w.edge_topic, w.edge_rev, w.known,
        w.held, w.row_cnt, w.col_cnt, w.row_mult, w.col_mult, w.have, w.need,
        cfg.n_rows, cfg.n_cols, cfg.row_size_k, cfg.col_size_k, w.malicious,
        w.log, w.log_start, w.log_len, w.work_node, w.work_line, w.stats,
    )
    arrival = (w.step_index + w.arrival_delay) % n_slots
    K.send(
        arrival, w.msg_edge, w.msg_pos, w.msg_count,
        w.sub_slot, w.slot_start, w.slot_end, w.known,
        cfg.n_rows, cfg.n_cols, cfg.cell_bits, w.malicious,
        w.log, w.log_start, w.log_len, w.log_cur, w.bucket, w.step_bits,
        w.sent_cells, w.stats,
    )
    diff = w.stats - before
    report = StepReport(
        step=w.step_index,
        time_ms=w.now_ms,
        arrivals=int(diff[K.ARRIVALS]),
        acquired=int(diff[K.ACQUIRED]),
        repaired=int(diff[K.REPAIRED]),
        sent=int(diff[K.SENT]),
        in_flight=w.in_flight,
    )
    w.step_index += 1
    w.now_ms += cfg.step_duration_ms
    return report


def run_to_completion(world: World, on_step=None) -> RunMetrics:
    """Step until all custody is held, the slot ends, or nothing can move.

    ``on_step(world, report)`` is called after every step, for tracing.
    """
    started = time.perf_counter()
    metrics = RunMetrics(theoretical_total=theoretical_total(world.cfg), target=world.target)
    metrics.record(0, 0, world.missing, world.delivered, world.ready_fraction)
    while True:
        report = step(world)
        if on_step is not None:
            on_step(world, report)
        metrics.record(
            world.step_index, world.now_ms, world.missing, world.delivered, world.ready_fraction
        )
        if world.missing == 0:
            reason = COMPLETE
        elif world.now_ms >= world.cfg.slot_duration_ms:
            reason = TIMEOUT
        elif world.quiescent():
            reason = STALLED
        else:
            continue
        break
    metrics.termination_reason = reason
    metrics.wall_clock_seconds = time.perf_counter() - started
    metrics.empty_topics = list(world.overlay.empty_topics)
    return metrics


def simulate(cfg: SimConfig) -> RunMetrics:
    return run_to_completion(build_world(cfg))
