from collections import deque

import numpy as np
import pytest

from dassim import _kernels as K
from dassim.block import BlockAvailability
from dassim.config import SimConfig
from dassim.engine import (
    COMPLETE,
    STALLED,
    TIMEOUT,
    build_world,
    run_to_completion,
    seed_producer,
    step,
    step_budget_bits,
    world_from_parts,
)
from dassim.metrics import count_delivered
from dassim.overlay import PRODUCER, NodePopulation, NodeSpec, Overlay, TopicMesh

from .conftest import small_world

HUGE_BW = 1e9


def test_step_budget_bits():
    assert step_budget_bits(10, 50) == 500_000
    assert step_budget_bits(200, 50) == 10**7
    assert step_budget_bits(12.5, 30) == 375_000


def test_whole_cells_and_carry_per_step():
    # integer division oracle: 500000 = 122 * 4096 + 288
    cells, carry = divmod(500_000, 512 * 8)
    assert (cells, carry) == (122, 288)
    cfg = SimConfig(nb_nodes=20, bw_uplink_producer=10, custody_row=5, custody_col=5)
    world = build_world(cfg)
    step(world)
    assert world.sent_cells[PRODUCER] == 122
    assert world.bucket[PRODUCER] == carry + 500_000
    step(world)
    assert world.sent_cells[PRODUCER] == 122
    assert world.bucket[PRODUCER] == 2 * carry + 500_000


def test_producer_first_step_is_bandwidth_limited():
    cfg = SimConfig(nb_nodes=200)
    world = build_world(cfg)
    queued = seed_producer(world)
    fanout = sum(len(m.producer_peers) for m in world.overlay.meshes.values())
    assert queued == fanout * 100
    report = step(world)
    assert world.sent_cells[PRODUCER] == 10**7 // 4096 == 2441
    assert report.arrivals == 0
    assert world.log_cur[PRODUCER] < world.log_len[PRODUCER]


def test_total_withholding_stalls_after_one_step():
    world = build_world(small_world(failure_rate=1.0))
    assert seed_producer(world) == 0
    metrics = run_to_completion(world)
    assert metrics.termination_reason == STALLED
    assert metrics.steps[-1] == 1
    assert metrics.final_delivered == 0


def _hand_world(n_rows, n_cols, custody, meshes, cfg_kw=None, malicious=()):
    """World over an explicit overlay; ``custody`` maps node -> (rows, cols)."""
    kw = dict(
        nb_nodes=len(custody) + 1, row_size_n=n_cols, col_size_n=n_rows,
        row_size_k=n_cols, col_size_k=n_rows, custody_row=1, custody_col=0,
        bw_uplink_producer=HUGE_BW, bw_uplink1=HUGE_BW, bw_uplink2=HUGE_BW,
        latency_ms=0, class1_ratio=1.0,
    )
    kw.update(cfg_kw or {})
    cfg = SimConfig(**kw)
    nodes = [NodeSpec(PRODUCER, 0, 0, frozenset(), frozenset(), cfg.bw_uplink_producer)]
    for node_id in sorted(custody):
        rows, cols = custody[node_id]
        nodes.append(NodeSpec(node_id, 1, 1, frozenset(rows), frozenset(cols), cfg.bw_uplink1,
                              node_id in malicious, (tuple(rows),), (tuple(cols),)))
    pop = NodePopulation(cfg, nodes)
    overlay = Overlay(pop, meshes)
    truth = BlockAvailability(np.ones((n_rows, n_cols), dtype=bool), cfg.row_size_k, cfg.col_size_k)
    return world_from_parts(cfg, truth, pop, overlay)


def _mesh(topic, subs, edges, peers):
    return TopicMesh(topic, np.array(subs), np.array(edges, dtype=np.int64).reshape(-1, 2),
                     np.array(peers))


def test_two_hop_path():
    # producer -> A(1) -> B(2) -> C(3), a single cell
    custody = {1: ([0], []), 2: ([0], []), 3: ([0], [])}
    world = _hand_world(1, 1, custody, {0: _mesh(0, [1, 2, 3], [(1, 2), (2, 3)], [1])})
    first = {}
    for _ in range(6):
        step(world)
        for node in (1, 2, 3):
            if world.held[node, 0] and node not in first:
                first[node] = world.step_index - 1
    assert first[3] - first[1] == 2
    assert first == {1: 1, 2: 2, 3: 3}


def test_single_subscriber_gets_row_after_latency():
    custody = {1: ([0], [])}
    meshes = {0: _mesh(0, [1], [], [1])}
    world = _hand_world(1, 8, custody, meshes, cfg_kw=dict(latency_ms=100))
    for _ in range(2):
        step(world)
        assert world.held[1].sum() == 0
    step(world)
    assert world.held[1].sum() == 8
    assert world.now_ms - 50 == 100


def test_malicious_node_holds_but_never_forwards():
    custody = {1: ([0], []), 2: ([0], [])}
    meshes = {0: _mesh(0, [1, 2], [(1, 2)], [1])}
    world = _hand_world(1, 4, custody, meshes, malicious={1})
    metrics = run_to_completion(world)
    assert world.held[1].sum() == 4
    assert world.held[2].sum() == 0
    assert world.log_len[1] == 0
    assert metrics.termination_reason == STALLED


def test_quiescent_step_reports_nothing():
    world = build_world(small_world(failure_rate=1.0))
    step(world)
    report = step(world)
    assert (report.arrivals, report.sent, report.in_flight) == (0, 0, 0)


def _acquisition_oracle(world):
    """Step at which each (node, cell) is first held under unlimited bandwidth.

    BFS over the union of a cell's row and column meshes, starting from the
    producer's peers, which hold the cell one step after the producer sends.
    """
    cfg = world.cfg
    n_rows, n_cols = cfg.n_rows, cfg.n_cols
    first = {}
    for r in range(n_rows):
        for c in range(n_cols):
            adj = {}
            sources = set()
            for topic in (r, n_rows + c):
                mesh = world.overlay.meshes.get(topic)
                if mesh is None:
                    continue
                sources.update(int(p) for p in mesh.producer_peers)
                for u, v in mesh.edges:
                    adj.setdefault(int(u), set()).add(int(v))
                    adj.setdefault(int(v), set()).add(int(u))
            dist = {s: 1 for s in sources}
            todo = deque(sorted(sources))
            while todo:
                u = todo.popleft()
                for v in adj.get(u, ()):
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        todo.append(v)
            for node, d in dist.items():
                first[node, r * n_cols + c] = d
    return first


def test_unlimited_bandwidth_trace_matches_bfs_oracle():
    cfg = SimConfig(
        nb_nodes=20, row_size_n=4, col_size_n=4, row_size_k=4, col_size_k=4,
        custody_row=1, custody_col=1, net_degree=3, latency_ms=0,
        bw_uplink_producer=HUGE_BW, bw_uplink1=HUGE_BW, bw_uplink2=HUGE_BW, seed=3,
    )
    world = build_world(cfg)
    first = _acquisition_oracle(world)
    metrics = run_to_completion(world)
    assert metrics.termination_reason == COMPLETE
    rm, cm = world.row_mult, world.col_mult
    for k, delivered in zip(metrics.steps, metrics.delivered):
        expected = sum(
            rm[u, cell // 4] + cm[u, cell % 4] for (u, cell), s in first.items() if s < k
        )
        assert delivered == expected
    missing = metrics.missing
    assert missing[0] == missing[1] == metrics.target
    assert all(a > b for a, b in zip(missing[1:], missing[2:]))
    assert missing[-1] == 0


def test_run_invariants_on_small_world():
    for seed in range(10):
        cfg = small_world(seed=seed, failure_rate=0.2, malicious_rate=0.1)
        world = build_world(cfg)
        cell_bits = cfg.cell_bits
        last_missing = world.missing
        while True:
            bucket = world.bucket.copy()
            report = step(world)
            sent_bits = world.sent_cells * cell_bits
            assert (sent_bits <= bucket).all()
            assert (bucket < world.step_bits + cell_bits).all()
            assert world.sent_cells[world.malicious == 1].sum() == 0
            assert report.sent == world.sent_cells.sum()
            assert world.delivered == count_delivered(world.population, world.held)
            assert world.missing <= last_missing
            last_missing = world.missing
            for u in range(world.n_nodes):
                logged = world.log[world.log_start[u] : world.log_start[u] + world.log_len[u]]
                assert world.held[u, logged].all()
                assert len(set(logged.tolist())) == len(logged)
            if world.missing == 0 or world.quiescent() or world.now_ms >= cfg.slot_duration_ms:
                break


def test_repair_stays_within_custody():
    cfg = small_world(seed=2, failure_rate=0.3)
    world = build_world(cfg)
    run_to_completion(world)
    from dassim.block import reconstruct_fixpoint

    for node in world.population.nodes[1:]:
        avail = world.avail(node.node_id)
        rows = np.zeros(cfg.n_rows, dtype=bool)
        cols = np.zeros(cfg.n_cols, dtype=bool)
        rows[list(node.custody_rows)] = True
        cols[list(node.custody_cols)] = True
        # only custody lines ever carry cells to a node
        assert not avail.bits[~rows][:, ~cols].any()
        # and the node left nothing repairable on the table
        assert reconstruct_fixpoint(avail.copy(), rows=node.custody_rows, cols=node.custody_cols) == 0


def test_withheld_cells_are_repaired_when_rows_stay_recoverable():
    cfg = small_world(seed=8, failure_rate=0.25)
    world = build_world(cfg)
    assert world.truth.count() < 256
    metrics = run_to_completion(world)
    assert (world.truth.bits.sum(axis=1) >= cfg.row_size_k).all()
    assert (world.truth.bits.sum(axis=0) >= cfg.col_size_k).all()
    assert metrics.termination_reason == COMPLETE
    assert world.stats[K.REPAIRED] > 0


def test_timeout():
    cfg = SimConfig(nb_nodes=300, custody_row=10, custody_col=10, slot_duration_ms=200)
    metrics = run_to_completion(build_world(cfg))
    assert metrics.termination_reason == TIMEOUT
    assert metrics.times_ms[-1] == 200
    assert len(metrics.steps) == 5


def test_runs_are_deterministic():
    cfg = small_world(seed=21, failure_rate=0.1)
    w1, w2 = build_world(cfg), build_world(cfg)
    m1, m2 = run_to_completion(w1), run_to_completion(w2)
    assert list(m1.rows()) == list(m2.rows())
    assert np.array_equal(w1.held, w2.held)
    assert np.array_equal(w1.known, w2.known)


def test_pending_queue_is_fifo_suffix():
    cfg = SimConfig(nb_nodes=100, custody_row=3, custody_col=3)
    world = build_world(cfg)
    for _ in range(4):
        step(world)
    for u in range(1, world.n_nodes):
        pend = world.pending(u)
        start = world.log_start[u]
        assert np.array_equal(pend, world.log[start + world.log_cur[u] : start + world.log_len[u]])


@pytest.mark.parametrize("latency, delay", [(0, 1), (49, 1), (50, 1), (51, 2), (250, 5)])
def test_arrival_delay(latency, delay):
    world = build_world(small_world(latency_ms=latency))
    assert world.arrival_delay == delay
    assert len(world.msg_count) == delay + 1
