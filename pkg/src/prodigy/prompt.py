"""Prompt graphs: contextualized data graphs, augmentation and the task graph."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING

import numpy as np

from .container import read_container, write_container
from .graph import Datapoint, Graph, Level, khop_union

if TYPE_CHECKING:
    from .tasks import FewShotPrompt

EXAMPLE, QUERY = 0, 1


class PromptValidationError(ValueError):
    pass


class TaskGraphInvariantError(PromptValidationError):
    def __init__(self, invariant: str, detail: str):
        super().__init__(f"{invariant}: {detail}")
        self.invariant = invariant


@dataclass(frozen=True, eq=False)
class DataGraph:
    local_nodes: np.ndarray
    features: np.ndarray
    local_edges: np.ndarray
    input_local: tuple[int, ...]
    dropped: frozenset = frozenset()
    # local indices of masked rows and their pre-mask contents
    masked_local: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    masked_original: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.local_nodes)
        if len(self.features) != n:
            raise PromptValidationError("feature rows must match local node count")
        if len(self.local_edges) and (self.local_edges[:, [0, 2]] >= n).any():
            raise PromptValidationError("local edge references a missing node")
        if self.masked_original is None:
            object.__setattr__(self, "masked_original",
                               np.zeros((0, self.features.shape[1])))

    @property
    def num_nodes(self) -> int:
        return len(self.local_nodes)

    @property
    def level(self) -> Level:
        return Level.NODE if len(self.input_local) == 1 else Level.EDGE

    @property
    def masked(self) -> frozenset:
        return frozenset(int(v) for v in self.local_nodes[self.masked_local])

    @property
    def aug_record(self) -> tuple[frozenset, frozenset]:
        return self.dropped, self.masked

    def equals(self, other: "DataGraph") -> bool:
        return (np.array_equal(self.local_nodes, other.local_nodes)
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.local_edges, other.local_edges)
                and self.input_local == other.input_local
                and self.dropped == other.dropped
                and np.array_equal(self.masked_local, other.masked_local)
                and np.array_equal(self.masked_original, other.masked_original))


@dataclass(frozen=True, eq=False)
class TaskGraph:
    """Bipartite data-node/label-node graph.

    ``edges`` rows are ``(data_index, label_index, is_example, is_true)``.
    Example edges are traversed both ways, query edges only label -> query.
    """

    roles: np.ndarray
    num_labels: int
    edges: np.ndarray

    @property
    def num_data(self) -> int:
        return len(self.roles)

    @property
    def example_index(self) -> np.ndarray:
        return np.flatnonzero(self.roles == EXAMPLE)

    @property
    def query_index(self) -> np.ndarray:
        return np.flatnonzero(self.roles == QUERY)

    @property
    def label_nodes(self) -> np.ndarray:
        return np.arange(self.num_labels)

    def example_labels(self) -> np.ndarray:
        ex = self.edges[(self.edges[:, 2] == 1) & (self.edges[:, 3] == 1)]
        out = np.full(self.num_data, -1, dtype=np.int64)
        out[ex[:, 0]] = ex[:, 1]
        return out[self.example_index]

    def validate(self, k: int | None = None) -> None:
        """Raise :class:`TaskGraphInvariantError` naming the first broken invariant."""
        m, e = self.num_labels, self.edges
        if e.ndim != 2 or e.shape[1] != 4:
            raise TaskGraphInvariantError("edge-table", "edges must have 4 columns")
        if len(e) and ((e[:, 0] < 0).any() or (e[:, 0] >= self.num_data).any()
                       or (e[:, 1] < 0).any() or (e[:, 1] >= m).any()):
            raise TaskGraphInvariantError("edge-endpoints", "edge references a missing node")
        n_ex = len(self.example_index)
        if k is not None and n_ex != m * k:
            raise TaskGraphInvariantError(
                "data-node-count", f"{n_ex} example nodes, expected m*k={m * k}")
        if len(e) != self.num_data * m:
            raise TaskGraphInvariantError(
                "edge-count", f"{len(e)} edges, expected (m*k+n)*m={self.num_data * m}")
        for i in range(self.num_data):
            rows = e[e[:, 0] == i]
            if len(rows) != m or len(np.unique(rows[:, 1])) != m:
                raise TaskGraphInvariantError(
                    "edges-per-data-node", f"data node {i} is not linked to all {m} labels")
            if self.roles[i] == EXAMPLE:
                if (rows[:, 2] != 1).any():
                    raise TaskGraphInvariantError(
                        "example-edge-flag", f"example node {i} has an edge with is_example=0")
                if rows[:, 3].sum() != 1:
                    raise TaskGraphInvariantError(
                        "one-true-edge", f"example node {i} has {rows[:, 3].sum()} true edges")
            else:
                if (rows[:, 2] != 0).any() or (rows[:, 3] != 0).any():
                    raise TaskGraphInvariantError(
                        "query-edge-flags", f"query node {i} has an example/true-marked edge")
        if k is not None:
            counts = np.bincount(self.example_labels(), minlength=m)
            if (counts != k).any():
                raise TaskGraphInvariantError(
                    "class-balance", f"examples per class {counts.tolist()}, expected {k}")


@dataclass(frozen=True, eq=False)
class PromptGraph:
    data_graphs: tuple[DataGraph, ...]
    task_graph: TaskGraph
    level: Level
    class_meta: tuple[int, ...]
    label_seed: int
    k: int

    def __post_init__(self):
        if len(self.data_graphs) != self.task_graph.num_data:
            raise PromptValidationError("one data graph per task-graph data node is required")

    @property
    def m(self) -> int:
        return self.task_graph.num_labels

    @property
    def n(self) -> int:
        return len(self.task_graph.query_index)


@dataclass(frozen=True)
class AugConfig:
    enabled: bool = True
    p_drop: float = 0.5
    p_mask: float = 0.5


NO_AUG = AugConfig(enabled=False)


def contextualize(g: Graph, dp: Datapoint, k: int, fanout_cap: int | None = None,
                  rng: np.random.Generator | None = None) -> DataGraph:
    nodes, eids = khop_union(g, dp.input_nodes, k, fanout_cap, rng)
    if dp.hidden_edges:
        eids = np.setdiff1d(eids, np.asarray(dp.hidden_edges, dtype=np.int64))
    e = g.edges[eids]
    local = np.stack([np.searchsorted(nodes, e[:, 0]), e[:, 1],
                      np.searchsorted(nodes, e[:, 2])], axis=1).reshape(-1, 3)
    inputs = tuple(int(i) for i in np.searchsorted(nodes, dp.input_nodes))
    return DataGraph(nodes, g.node_features[nodes].copy(), local, inputs)


def drop_node(dg: DataGraph, p: float, rng: np.random.Generator) -> DataGraph:
    if not 0.0 <= p <= 1.0:
        raise PromptValidationError("drop probability must lie in [0, 1]")
    n = dg.num_nodes
    keep = rng.random(n) >= p
    keep[list(dg.input_local)] = True
    if keep.all():
        return dg
    new_index = np.cumsum(keep) - 1
    e = dg.local_edges
    e = e[keep[e[:, 0]] & keep[e[:, 2]]]
    e = np.stack([new_index[e[:, 0]], e[:, 1], new_index[e[:, 2]]], axis=1).reshape(-1, 3)
    mkeep = keep[dg.masked_local]
    return DataGraph(
        local_nodes=dg.local_nodes[keep],
        features=dg.features[keep],
        local_edges=e,
        input_local=tuple(int(new_index[i]) for i in dg.input_local),
        dropped=dg.dropped | frozenset(int(v) for v in dg.local_nodes[~keep]),
        masked_local=new_index[dg.masked_local[mkeep]],
        masked_original=dg.masked_original[mkeep],
    )


def mask_node(dg: DataGraph, p: float, rng: np.random.Generator) -> DataGraph:
    if not 0.0 <= p <= 1.0:
        raise PromptValidationError("mask probability must lie in [0, 1]")
    hit = rng.random(dg.num_nodes) < p
    hit[dg.masked_local] = False
    if not hit.any():
        return dg
    new = np.flatnonzero(hit)
    x = dg.features.copy()
    originals = x[new].copy()
    x[new] = 0.0
    idx = np.concatenate([dg.masked_local, new])
    rows = np.concatenate([dg.masked_original, originals])
    order = np.argsort(idx, kind="stable")
    return replace(dg, features=x, masked_local=idx[order], masked_original=rows[order])


def build_task_graph(m: int, k: int, n: int, example_labels) -> TaskGraph:
    labels = np.asarray(example_labels, dtype=np.int64).reshape(-1)
    if len(labels) != m * k:
        raise PromptValidationError(f"need m*k={m * k} example labels, got {len(labels)}")
    if len(labels) and ((labels < 0) | (labels >= m)).any():
        raise PromptValidationError(f"example labels must lie in [0, {m})")
    counts = np.bincount(labels, minlength=m)
    if (counts != k).any():
        bad = int(np.flatnonzero(counts != k)[0])
        raise PromptValidationError(f"class {bad} has {counts[bad]} examples, expected {k}")
    num_data = m * k + n
    data = np.repeat(np.arange(num_data), m)
    lab = np.tile(np.arange(m), num_data)
    is_ex = (data < m * k).astype(np.int64)
    is_true = np.zeros_like(data)
    ex = data < m * k
    is_true[ex] = (lab[ex] == labels[data[ex]]).astype(np.int64)
    roles = np.where(np.arange(num_data) < m * k, EXAMPLE, QUERY)
    return TaskGraph(roles, m, np.stack([data, lab, is_ex, is_true], axis=1))


def assemble_prompt_graph(g: Graph, prompt: "FewShotPrompt", k_hops: int = 2,
                          fanout_cap: int | None = None, aug: AugConfig = NO_AUG,
                          rng: np.random.Generator | None = None) -> PromptGraph:
    """Contextualize, augment and join every datapoint of ``prompt``.

    Each datapoint gets its own child streams for sampling, dropping and
    masking, so turning augmentation off leaves the sampled neighborhoods
    unchanged.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    points = [dp for dp, _ in prompt.examples] + list(prompt.queries)
    seeds = rng.integers(0, 2**63 - 1, size=(len(points), 3))
    label_seed = int(rng.integers(0, 2**63 - 1))
    graphs = []
    for dp, (s_ctx, s_drop, s_mask) in zip(points, seeds):
        dg = contextualize(g, dp, k_hops, fanout_cap, np.random.default_rng(s_ctx))
        if aug.enabled:
            dg = drop_node(dg, aug.p_drop, np.random.default_rng(s_drop))
            dg = mask_node(dg, aug.p_mask, np.random.default_rng(s_mask))
        graphs.append(dg)
    tg = build_task_graph(prompt.m, prompt.k, len(prompt.queries),
                          [c for _, c in prompt.examples])
    return PromptGraph(tuple(graphs), tg, prompt.level, tuple(prompt.class_meta),
                       label_seed, prompt.k)


# --------------------------------------------------------------------------
# dump format

_MAGIC, _VERSION = b"PRDGPGRF", 1


def save_prompt_graph(pg: PromptGraph, path) -> None:
    dgs = pg.data_graphs
    ptr = np.cumsum([0] + [dg.num_nodes for dg in dgs])
    eptr = np.cumsum([0] + [len(dg.local_edges) for dg in dgs])
    mptr = np.cumsum([0] + [len(dg.masked_local) for dg in dgs])
    dptr = np.cumsum([0] + [len(dg.dropped) for dg in dgs])
    width = dgs[0].features.shape[1] if dgs else 0
    inputs = np.full((len(dgs), 2), -1, dtype=np.int64)
    for i, dg in enumerate(dgs):
        inputs[i, :len(dg.input_local)] = dg.input_local

    def cat(parts, shape):
        return np.concatenate(parts) if parts else np.zeros(shape)

    arrays = {
        "dg_node_ptr": ptr, "dg_nodes": cat([dg.local_nodes for dg in dgs], (0,)),
        "dg_features": cat([dg.features for dg in dgs], (0, width)),
        "dg_edge_ptr": eptr, "dg_edges": cat([dg.local_edges for dg in dgs], (0, 3)),
        "dg_inputs": inputs,
        "dg_mask_ptr": mptr, "dg_masked": cat([dg.masked_local for dg in dgs], (0,)),
        "dg_masked_original": cat([dg.masked_original for dg in dgs], (0, width)),
        "dg_drop_ptr": dptr,
        "dg_dropped": cat([np.array(sorted(dg.dropped), dtype=np.int64) for dg in dgs], (0,)),
        "tg_roles": pg.task_graph.roles, "tg_edges": pg.task_graph.edges,
    }
    meta = {"level": pg.level.value, "m": pg.m, "k": pg.k, "label_seed": str(pg.label_seed),
            "class_meta": list(pg.class_meta), "feature_dim": width}
    write_container(path, _MAGIC, _VERSION, meta, arrays)


def load_prompt_graph(path) -> PromptGraph:
    meta, a = read_container(path, _MAGIC, _VERSION)
    dgs = []
    p, ep, mp, dp = a["dg_node_ptr"], a["dg_edge_ptr"], a["dg_mask_ptr"], a["dg_drop_ptr"]
    for i in range(len(p) - 1):
        inp = a["dg_inputs"][i]
        dgs.append(DataGraph(
            local_nodes=a["dg_nodes"][p[i]:p[i + 1]].astype(np.int64),
            features=a["dg_features"][p[i]:p[i + 1]],
            local_edges=a["dg_edges"][ep[i]:ep[i + 1]].astype(np.int64).reshape(-1, 3),
            input_local=tuple(int(v) for v in inp[inp >= 0]),
            dropped=frozenset(int(v) for v in a["dg_dropped"][dp[i]:dp[i + 1]]),
            masked_local=a["dg_masked"][mp[i]:mp[i + 1]].astype(np.int64),
            masked_original=a["dg_masked_original"][mp[i]:mp[i + 1]],
        ))
    tg = TaskGraph(a["tg_roles"].astype(np.int64), int(meta["m"]),
                   a["tg_edges"].astype(np.int64).reshape(-1, 4))
    return PromptGraph(tuple(dgs), tg, Level(meta["level"]), tuple(meta["class_meta"]),
                       int(meta["label_seed"]), int(meta["k"]))
