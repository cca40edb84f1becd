"""Node population, custody assignment and per-topic mesh overlays.

Node 0 is the block producer. It holds the released block, is attached to
every topic mesh and has no custody of its own. Nodes 1..nbNodes-1 are the
custodians. Topics are numbered rows first: topic ``r`` carries row ``r`` and
topic ``n_rows + c`` carries column ``c``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .config import SimConfig, derive_seed, round_half_away

PRODUCER = 0
PRODUCER_CLASS = 0


class EmptyTopic(Exception):
    """A topic has no subscribers; its cells cannot be delivered to anyone."""

    def __init__(self, topic: int):
        super().__init__(f"topic {topic} has no subscribers")
        self.topic = topic


@dataclass(frozen=True)
class NodeSpec:
    node_id: int
    node_class: int
    validator_count: int
    custody_rows: frozenset
    custody_cols: frozenset
    uplink_mbps: float
    malicious: bool = False
    # per-validator assignments, kept for multiplicity counting
    validator_rows: tuple = ()
    validator_cols: tuple = ()


@dataclass
class NodePopulation:
    cfg: SimConfig
    nodes: list[NodeSpec]

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def n_topics(self) -> int:
        return self.cfg.n_rows + self.cfg.n_cols

    def row_multiplicity(self) -> np.ndarray:
        """(nodes, rows) array: how many of a node's validators custody each row."""
        out = np.zeros((len(self.nodes), self.cfg.n_rows), dtype=np.int32)
        for node in self.nodes:
            for rows in node.validator_rows:
                out[node.node_id, list(rows)] += 1
        return out

    def col_multiplicity(self) -> np.ndarray:
        out = np.zeros((len(self.nodes), self.cfg.n_cols), dtype=np.int32)
        for node in self.nodes:
            for cols in node.validator_cols:
                out[node.node_id, list(cols)] += 1
        return out

    def subscribers(self, topic: int) -> np.ndarray:
        """Sorted ids of custodians subscribed to ``topic``."""
        n_rows = self.cfg.n_rows
        if topic < n_rows:
            ids = [n.node_id for n in self.nodes if topic in n.custody_rows]
        else:
            ids = [n.node_id for n in self.nodes if topic - n_rows in n.custody_cols]
        return np.array(ids, dtype=np.int64)

    def all_subscribers(self) -> list[np.ndarray]:
        """Subscriber lists for every topic, in one pass over the population."""
        n_rows = self.cfg.n_rows
        lists: list[list[int]] = [[] for _ in range(self.n_topics)]
        for node in self.nodes:
            for r in sorted(node.custody_rows):
                lists[r].append(node.node_id)
            for c in sorted(node.custody_cols):
                lists[n_rows + c].append(node.node_id)
        return [np.array(ids, dtype=np.int64) for ids in lists]


def generate_population(
    cfg: SimConfig, rng_custody: np.random.Generator, rng_malicious: np.random.Generator
) -> NodePopulation:
    """Producer plus nbNodes-1 custodians with classes, custody and malicious flags.

    The first round(class1Ratio * (nbNodes-1)) custodians are class 1, the
    rest class 2. Every validator draws its custody rows and columns
    uniformly without replacement; a node custodies the union.
    """
    n_custodians = cfg.nb_nodes - 1
    n_class1 = round_half_away(cfg.class1_ratio * n_custodians)
    n_malicious = round_half_away(cfg.malicious_rate * n_custodians)
    malicious = set(
        (rng_malicious.choice(n_custodians, size=n_malicious, replace=False) + 1).tolist()
    )

    nodes = [
        NodeSpec(
            node_id=PRODUCER,
            node_class=PRODUCER_CLASS,
            validator_count=0,
            custody_rows=frozenset(),
            custody_cols=frozenset(),
            uplink_mbps=cfg.bw_uplink_producer,
        )
    ]
    for node_id in range(1, cfg.nb_nodes):
        cls = 1 if node_id <= n_class1 else 2
        vpn = cfg.vpn1 if cls == 1 else cfg.vpn2
        v_rows, v_cols = [], []
        for _ in range(vpn):
            v_rows.append(tuple(sorted(rng_custody.choice(cfg.n_rows, cfg.custody_row, replace=False).tolist())))
            v_cols.append(tuple(sorted(rng_custody.choice(cfg.n_cols, cfg.custody_col, replace=False).tolist())))
        nodes.append(
            NodeSpec(
                node_id=node_id,
                node_class=cls,
                validator_count=vpn,
                custody_rows=frozenset().union(*v_rows),
                custody_cols=frozenset().union(*v_cols),
                uplink_mbps=cfg.bw_uplink1 if cls == 1 else cfg.bw_uplink2,
                malicious=node_id in malicious,
                validator_rows=tuple(v_rows),
                validator_cols=tuple(v_cols),
            )
        )
    return NodePopulation(cfg, nodes)


@dataclass
class TopicMesh:
    """Undirected mesh among a topic's subscribers plus the producer's fan-out.

    ``edges`` holds global node ids with u < v, sorted.
    """

    topic: int
    subscribers: np.ndarray
    edges: np.ndarray
    producer_peers: np.ndarray

    def degrees(self) -> dict[int, int]:
        deg = {int(s): 0 for s in self.subscribers}
        for u, v in self.edges:
            deg[int(u)] += 1
            deg[int(v)] += 1
        return deg

    def neighbors(self) -> dict[int, list[int]]:
        adj: dict[int, list[int]] = {int(s): [] for s in self.subscribers}
        for u, v in self.edges:
            adj[int(u)].append(int(v))
            adj[int(v)].append(int(u))
        return {k: sorted(v) for k, v in adj.items()}

    def is_connected(self) -> bool:
        return _n_components(len(self.subscribers), self._local_edges()) <= 1

    def _local_edges(self) -> np.ndarray:
        if len(self.edges) == 0:
            return np.zeros((0, 2), dtype=np.int64)
        return np.searchsorted(self.subscribers, self.edges)


def _n_components(n: int, edges: np.ndarray) -> int:
    return _components(n, edges)[0]


def _components(n: int, edges: np.ndarray):
    if n == 0:
        return 0, np.zeros(0, dtype=np.int32)
    e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    graph = coo_matrix((np.ones(len(e)), (e[:, 0], e[:, 1])), shape=(n, n))
    return connected_components(graph, directed=False)


def _random_mesh(n: int, degree: int, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Random near-regular graph on n local vertices.

    Open (under-degree) vertices are shuffled and paired off in rounds. Once
    a round adds nothing, single legal pairs are drawn uniformly until none
    remain. Vertices still short of the target are then joined to random
    non-adjacent vertices, which may push those by one over ``degree``.
    Finally components are bridged one edge at a time.
    """
    target = min(degree, n - 1)
    adj: list[set[int]] = [set() for _ in range(n)]
    deg = np.zeros(n, dtype=np.int64)

    def link(a: int, b: int) -> None:
        adj[a].add(b)
        adj[b].add(a)
        deg[a] += 1
        deg[b] += 1

    while True:
        open_ = np.flatnonzero(deg < target)
        if len(open_) < 2:
            break
        perm = rng.permutation(open_).tolist()
        added = 0
        for a, b in zip(perm[0::2], perm[1::2]):
            if b not in adj[a]:
                link(a, b)
                added += 1
        if added:
            continue
        legal = [
            (a, b)
            for i, a in enumerate(open_.tolist())
            for b in open_[i + 1 :].tolist()
            if b not in adj[a]
        ]
        if not legal:
            break
        link(*legal[rng.integers(len(legal))])

    for a in np.flatnonzero(deg < target).tolist():
        while deg[a] < target:
            cands = [b for b in range(n) if b != a and b not in adj[a] and deg[b] <= degree]
            if not cands:
                break
            link(a, cands[rng.integers(len(cands))])

    while True:
        edges = np.array([(a, b) for a in range(n) for b in adj[a] if a < b], dtype=np.int64)
        n_comp, labels = _components(n, edges)
        if n_comp <= 1:
            break
        ca, cb = rng.choice(n_comp, size=2, replace=False)
        ends = []
        for comp in (ca, cb):
            members = np.flatnonzero(labels == comp)
            low = members[deg[members] == deg[members].min()]
            ends.append(int(low[rng.integers(len(low))]))
        link(*ends)

    return sorted((a, b) for a in range(n) for b in adj[a] if a < b)


def build_topic_mesh(
    population: NodePopulation,
    topic: int,
    rng: np.random.Generator,
    subscribers: np.ndarray | None = None,
) -> TopicMesh:
    """Mesh for one topic among the nodes whose custody includes it.

    Raises EmptyTopic when nobody subscribes.
    """
    if subscribers is None:
        subscribers = population.subscribers(topic)
    subscribers = np.sort(np.asarray(subscribers, dtype=np.int64))
    if len(subscribers) == 0:
        raise EmptyTopic(topic)
    degree = population.cfg.net_degree
    local = _random_mesh(len(subscribers), degree, rng)
    edges = subscribers[np.array(local, dtype=np.int64).reshape(-1, 2)]
    fanout = min(degree, len(subscribers))
    peers = np.sort(rng.choice(subscribers, size=fanout, replace=False))
    return TopicMesh(topic, subscribers, edges, peers)


@dataclass
class Overlay:
    population: NodePopulation
    meshes: dict[int, TopicMesh]
    empty_topics: list[int] = field(default_factory=list)


def build_overlay(population: NodePopulation, run_seed: int) -> Overlay:
    """All topic meshes, each from its own topology sub-seed."""
    meshes: dict[int, TopicMesh] = {}
    empty: list[int] = []
    for topic, subs in enumerate(population.all_subscribers()):
        rng = np.random.default_rng(derive_seed(run_seed, "topology", topic))
        try:
            meshes[topic] = build_topic_mesh(population, topic, rng, subs)
        except EmptyTopic:
            empty.append(topic)
    return Overlay(population, meshes, empty)


def topic_label(topic: int, n_rows: int) -> str:
    return f"row {topic}" if topic < n_rows else f"col {topic - n_rows}"


def dump_topology(overlay: Overlay, path: str | Path) -> None:
    """Write one line per topic: subscribers, mesh edges and producer peers."""
    n_rows = overlay.population.cfg.n_rows
    with open(path, "w") as fh:
        for topic in range(overlay.population.n_topics):
            label = topic_label(topic, n_rows)
            mesh = overlay.meshes.get(topic)
            if mesh is None:
                fh.write(f"{label} | empty\n")
                continue
            fh.write(
                f"{label} | subscribers {_join(mesh.subscribers)} "
                f"| edges {' '.join(f'{u}-{v}' for u, v in mesh.edges)} "
                f"| producer {_join(mesh.producer_peers)}\n"
            )


def _join(ids: Iterable[int]) -> str:
    return " ".join(str(int(i)) for i in ids)
