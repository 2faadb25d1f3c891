"""In-memory relational graphs, hop-neighborhood queries, loaders and synthetic fixtures."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


class GraphValidationError(ValueError):
    pass


class GraphParseError(ValueError):
    def __init__(self, path, lineno: int, msg: str):
        super().__init__(f"{path}:{lineno}: {msg}")
        self.path = path
        self.lineno = lineno


class Level(str, enum.Enum):
    NODE = "node"
    EDGE = "edge"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Typed multigraph with dense node ids.

    ``edges`` is an ``(E, 3)`` integer array of ``(u, r, v)`` triples. When
    ``directed`` is false each edge is stored once and traversed both ways.
    """

    node_features: np.ndarray
    edges: np.ndarray
    num_relations: int = 1
    directed: bool = False
    _indptr: np.ndarray = field(init=False, repr=False)
    _nbr: np.ndarray = field(init=False, repr=False)
    _nbr_edge: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        x = np.asarray(self.node_features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise GraphValidationError("node_features must be a 2-d matrix")
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 3)
        n = x.shape[0]
        if n == 0:
            raise GraphValidationError("graph must have at least one node")
        if len(e):
            bad = (e[:, [0, 2]] < 0) | (e[:, [0, 2]] >= n)
            if bad.any():
                i = int(np.flatnonzero(bad.any(axis=1))[0])
                raise GraphValidationError(
                    f"edge {i} {tuple(e[i])} has an endpoint outside [0, {n})")
            badr = (e[:, 1] < 0) | (e[:, 1] >= self.num_relations)
            if badr.any():
                i = int(np.flatnonzero(badr)[0])
                raise GraphValidationError(
                    f"edge {i} relation {e[i, 1]} outside [0, {self.num_relations})")
        object.__setattr__(self, "node_features", _frozen(x))
        object.__setattr__(self, "edges", _frozen(e))

        # CSR adjacency used for traversal; symmetric unless directed.
        src, dst, eid = e[:, 0], e[:, 2], np.arange(len(e))
        if not self.directed:
            src, dst, eid = (np.concatenate([src, dst]), np.concatenate([dst, src]),
                             np.concatenate([eid, eid]))
        order = np.lexsort((dst, src))
        counts = np.bincount(src, minlength=n)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        object.__setattr__(self, "_indptr", _frozen(indptr))
        object.__setattr__(self, "_nbr", _frozen(dst[order]))
        object.__setattr__(self, "_nbr_edge", _frozen(eid[order]))

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.node_features.shape[1]

    def neighbors(self, v: int) -> np.ndarray:
        return self._nbr[self._indptr[v]:self._indptr[v + 1]]

    def incident_edges(self, v: int) -> np.ndarray:
        """Edge indices touching ``v`` (out-edges only for directed graphs)."""
        return self._nbr_edge[self._indptr[v]:self._indptr[v + 1]]

    def degree(self) -> np.ndarray:
        return np.diff(self._indptr)

    def check_nodes(self, nodes) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64).reshape(-1)
        if len(nodes) and ((nodes < 0) | (nodes >= self.num_nodes)).any():
            raise GraphValidationError(
                f"node ids {nodes[(nodes < 0) | (nodes >= self.num_nodes)].tolist()} "
                f"outside [0, {self.num_nodes})")
        return nodes

    def induced_edges(self, nodes) -> np.ndarray:
        """Indices of edges with both endpoints in ``nodes``."""
        mask = np.zeros(self.num_nodes, dtype=bool)
        mask[np.asarray(nodes, dtype=np.int64)] = True
        return np.flatnonzero(mask[self.edges[:, 0]] & mask[self.edges[:, 2]])


@dataclass(frozen=True)
class Datapoint:
    input_nodes: tuple[int, ...]
    level: Level = Level.NODE
    # Edge indices hidden from the datapoint's data graph (the classified edge
    # for relation-type tasks).
    hidden_edges: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "input_nodes", tuple(int(v) for v in self.input_nodes))
        object.__setattr__(self, "level", Level(self.level))
        object.__setattr__(self, "hidden_edges", tuple(int(e) for e in self.hidden_edges))
        want = 1 if self.level is Level.NODE else 2
        if len(self.input_nodes) != want:
            raise GraphValidationError(
                f"{self.level.value}-level datapoint needs {want} input nodes, "
                f"got {len(self.input_nodes)}")

    @classmethod
    def node(cls, v: int) -> "Datapoint":
        return cls((v,), Level.NODE)

    @classmethod
    def edge(cls, u: int, v: int, hidden_edges=()) -> "Datapoint":
        return cls((u, v), Level.EDGE, tuple(hidden_edges))


@dataclass(frozen=True, eq=False)
class NodeLabeling:
    """Class ids per node; ``-1`` marks unlabeled nodes."""

    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if ((y < -1) | (y >= self.num_classes)).any():
            raise GraphValidationError(f"class ids must lie in [0, {self.num_classes})")
        object.__setattr__(self, "labels", _frozen(y))

    def __getitem__(self, v) -> int:
        return int(self.labels[v])

    def members(self, c: int, restrict=None) -> np.ndarray:
        nodes = np.flatnonzero(self.labels == c)
        if restrict is not None:
            nodes = np.intersect1d(nodes, np.asarray(restrict, dtype=np.int64))
        return nodes

    def labeled_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.labels >= 0)


# --------------------------------------------------------------------------
# hop queries

def hop_distances(g: Graph, seeds, max_hops: int | None = None) -> np.ndarray:
    """Multi-source BFS distance to the nearest seed, ``-1`` when unreached."""
    seeds = np.unique(g.check_nodes(seeds))
    dist = np.full(g.num_nodes, -1, dtype=np.int64)
    dist[seeds] = 0
    frontier = seeds
    hop = 0
    while len(frontier) and (max_hops is None or hop < max_hops):
        hop += 1
        starts, stops = g._indptr[frontier], g._indptr[frontier + 1]
        lens = stops - starts
        if lens.sum() == 0:
            break
        idx = np.repeat(stops - np.cumsum(lens), lens) + np.arange(lens.sum())
        cand = np.unique(g._nbr[idx])
        frontier = cand[dist[cand] < 0]
        dist[frontier] = hop
    return dist


def exact_hop_neighbors(g: Graph, seeds, i: int) -> np.ndarray:
    """Sorted ids of nodes at shortest-path distance exactly ``i`` from ``seeds``."""
    if i < 0:
        raise GraphValidationError("hop count must be non-negative")
    seeds = g.check_nodes(seeds)
    if len(seeds) == 0:
        raise GraphValidationError("seed set must be nonempty")
    dist = hop_distances(g, seeds, i)
    return np.flatnonzero(dist == i)


def khop_union(g: Graph, seeds, k: int, fanout_cap: int | None = None,
               rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample the ``k``-hop ball around ``seeds``.

    Each frontier node contributes at most ``fanout_cap`` not-yet-visited
    neighbors, drawn uniformly without replacement. Returns the sorted node
    ids and the indices of all edges induced among them. With
    ``fanout_cap=None`` this is the exact ``k``-hop ball.
    """
    if k < 0:
        raise GraphValidationError("hop count must be non-negative")
    seeds = np.unique(g.check_nodes(seeds))
    if fanout_cap is None:
        dist = hop_distances(g, seeds, k)
        nodes = np.flatnonzero(dist >= 0)
        return nodes, g.induced_edges(nodes)
    if rng is None:
        raise ValueError("a random generator is required when fanout_cap is set")
    visited = np.zeros(g.num_nodes, dtype=bool)
    visited[seeds] = True
    frontier = seeds
    for _ in range(k):
        nxt = []
        for v in frontier:
            cand = np.unique(g.neighbors(v))
            cand = cand[~visited[cand]]
            if len(cand) > fanout_cap:
                cand = np.sort(rng.choice(cand, size=fanout_cap, replace=False))
            visited[cand] = True
            nxt.append(cand)
        frontier = np.concatenate(nxt) if nxt else np.empty(0, dtype=np.int64)
        if not len(frontier):
            break
    nodes = np.flatnonzero(visited)
    return nodes, g.induced_edges(nodes)


# --------------------------------------------------------------------------
# file loaders

def _read_rows(path: Path):
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if line and not line.startswith("#"):
                yield lineno, line


def load_features(path) -> np.ndarray:
    rows = []
    for lineno, line in _read_rows(Path(path)):
        try:
            rows.append([float(t) for t in line.split()])
        except ValueError as err:
            raise GraphParseError(path, lineno, f"bad feature value ({err})") from None
        if len(rows[-1]) != len(rows[0]):
            raise GraphParseError(path, lineno,
                                  f"expected {len(rows[0])} values, got {len(rows[-1])}")
    if not rows:
        raise GraphValidationError(f"{path}: feature file has no rows")
    return np.array(rows, dtype=np.float64)


def load_edges(path) -> np.ndarray:
    triples = []
    for lineno, line in _read_rows(Path(path)):
        parts = line.split("\t")
        if len(parts) != 3:
            raise GraphParseError(path, lineno, "expected u<TAB>r<TAB>v")
        try:
            triples.append([int(p) for p in parts])
        except ValueError:
            raise GraphParseError(path, lineno, "edge fields must be integers") from None
    return np.array(triples, dtype=np.int64).reshape(-1, 3)


def load_graph(edge_path, feature_path, directed: bool = False,
               num_relations: int | None = None) -> Graph:
    edges = load_edges(edge_path)
    x = load_features(feature_path)
    if num_relations is None:
        num_relations = int(edges[:, 1].max()) + 1 if len(edges) else 1
    return Graph(x, edges, num_relations=num_relations, directed=directed)


def load_labeling(path, num_nodes: int, num_classes: int | None = None) -> NodeLabeling:
    y = np.full(num_nodes, -1, dtype=np.int64)
    for lineno, line in _read_rows(Path(path)):
        parts = line.split("\t")
        try:
            v, c = int(parts[0]), int(parts[1])
        except (ValueError, IndexError):
            raise GraphParseError(path, lineno, "expected node_id<TAB>class_id") from None
        if not 0 <= v < num_nodes:
            raise GraphValidationError(f"{path}:{lineno}: node {v} outside [0, {num_nodes})")
        y[v] = c
    if num_classes is None:
        num_classes = int(y.max()) + 1 if (y >= 0).any() else 0
    return NodeLabeling(y, num_classes)


def save_graph(g: Graph, edge_path, feature_path) -> None:
    with open(edge_path, "w", encoding="utf-8") as fh:
        for u, r, v in g.edges:
            fh.write(f"{u}\t{r}\t{v}\n")
    np.savetxt(feature_path, g.node_features, fmt="%.17g")


def save_labeling(lab: NodeLabeling, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for v in lab.labeled_nodes():
            fh.write(f"{v}\t{lab.labels[v]}\n")


# --------------------------------------------------------------------------
# synthetic fixtures

def synth_planted_graph(num_blocks: int, nodes_per_block: int, p_in: float, p_out: float,
                        feature_noise: float = 0.0, seed=0) -> tuple[Graph, NodeLabeling]:
    """Stochastic block model with block-indicator features plus Gaussian noise."""
    if not 0.0 <= p_out <= p_in <= 1.0:
        raise GraphValidationError("need 0 <= p_out <= p_in <= 1")
    rng = np.random.default_rng(seed)
    n = num_blocks * nodes_per_block
    block = np.repeat(np.arange(num_blocks), nodes_per_block)
    iu, ju = np.triu_indices(n, k=1)
    p = np.where(block[iu] == block[ju], p_in, p_out)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], np.zeros(keep.sum(), dtype=np.int64), ju[keep]], axis=1)
    x = np.eye(num_blocks)[block] + feature_noise * rng.standard_normal((n, num_blocks))
    return Graph(x, edges), NodeLabeling(block, num_blocks)


def synth_relational_graph(num_nodes: int, edges_per_relation, feature_dim: int = 4,
                           directed: bool = True, seed=0) -> Graph:
    """Uniform random multigraph where relation ``r`` has ``edges_per_relation[r]`` edges."""
    rng = np.random.default_rng(seed)
    rows = []
    for r, count in enumerate(edges_per_relation):
        u = rng.integers(0, num_nodes, size=count)
        v = rng.integers(0, num_nodes, size=count)
        same = v == u
        v[same] = (v[same] + 1) % num_nodes
        rows.append(np.stack([u, np.full(count, r), v], axis=1))
    edges = np.concatenate(rows) if rows else np.empty((0, 3), dtype=np.int64)
    x = rng.standard_normal((num_nodes, feature_dim))
    return Graph(x, edges, num_relations=max(len(edges_per_relation), 1), directed=directed)
