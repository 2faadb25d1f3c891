"""Few-shot episode generation: neighbor matching, multi-task and downstream prompts."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .graph import Datapoint, Graph, Level, NodeLabeling, exact_hop_neighbors

MAX_RETRIES = 50


class TaskGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class FewShotPrompt:
    """An m-way k-shot episode.

    ``examples`` pairs each datapoint with its class index in ``[0, m)``;
    ``class_meta[c]`` records where class ``c`` came from (an anchor node for
    neighbor matching, a source label or relation id otherwise).
    """

    m: int
    k: int
    examples: tuple[tuple[Datapoint, int], ...]
    queries: tuple[Datapoint, ...]
    query_labels: tuple[int, ...] | None
    class_meta: tuple[int, ...]
    family: str = "NM"

    def __post_init__(self):
        counts = np.bincount([c for _, c in self.examples], minlength=self.m)
        if len(counts) != self.m or (counts != self.k).any():
            raise TaskGenerationError(f"need exactly k={self.k} examples for each of {self.m} classes")
        if self.query_labels is not None:
            if len(self.query_labels) != len(self.queries):
                raise TaskGenerationError("one label per query is required")
            if any(not 0 <= y < self.m for y in self.query_labels):
                raise TaskGenerationError(f"query labels must lie in [0, {self.m})")
        if len(self.class_meta) != self.m:
            raise TaskGenerationError("class_meta needs one entry per class")

    @property
    def n(self) -> int:
        return len(self.queries)

    @property
    def level(self) -> Level:
        points = [dp for dp, _ in self.examples] + list(self.queries)
        return points[0].level if points else Level.NODE

    def strip_labels(self) -> "FewShotPrompt":
        return replace(self, query_labels=None)

    def permute_classes(self, perm) -> "FewShotPrompt":
        """Relabel class ``c`` as ``perm[c]`` and reorder examples class-major."""
        perm = list(perm)
        inv = np.argsort(perm)
        examples = sorted(((dp, perm[c]) for dp, c in self.examples), key=lambda t: t[1])
        labels = None if self.query_labels is None else tuple(perm[y] for y in self.query_labels)
        meta = tuple(self.class_meta[i] for i in inv)
        return replace(self, examples=tuple(examples), query_labels=labels, class_meta=meta)

    def to_record(self) -> dict:
        return {
            "family": self.family, "m": self.m, "k": self.k, "level": self.level.value,
            "class_meta": list(self.class_meta),
            "examples": [{"nodes": list(dp.input_nodes), "label": c} for dp, c in self.examples],
            "queries": [list(dp.input_nodes) for dp in self.queries],
            "query_labels": None if self.query_labels is None else list(self.query_labels),
        }


def _draw(pool: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` draws from ``pool``: distinct until exhausted, then with replacement."""
    first = rng.permutation(pool)[:count]
    if len(first) == count:
        return first
    return np.concatenate([first, rng.choice(pool, size=count - len(first))])


def _assemble(m, k, q, per_class, class_meta, family) -> FewShotPrompt:
    examples, queries, labels = [], [], []
    for c, points in enumerate(per_class):
        examples += [(dp, c) for dp in points[:k]]
        queries += points[k:k + q]
        labels += [c] * q
    return FewShotPrompt(m, k, tuple(examples), tuple(queries), tuple(labels),
                         tuple(int(c) for c in class_meta), family)


def _nm_anchors(g: Graph, m: int, k: int, l: int, rng, valid_ring=None):
    """Pick ``m`` distinct anchors whose exact ``l``-hop ring can supply ``k`` examples."""
    if m < 2:
        raise TaskGenerationError("neighbor matching needs m >= 2")
    if l < 1:
        raise TaskGenerationError("neighbor matching needs l >= 1")
    anchors, rings, tried = [], [], set()
    rejects = 0
    while len(anchors) < m:
        free = g.num_nodes - len(tried)
        if free <= 0 or rejects > MAX_RETRIES:
            raise TaskGenerationError(
                f"could not find {m} anchors whose exact {l}-hop ring holds >= k={k} "
                f"usable nodes (gave up after {rejects} rejected anchors)")
        c = int(rng.integers(g.num_nodes))
        if c in tried:
            continue
        tried.add(c)
        ring = exact_hop_neighbors(g, [c], l)
        if valid_ring is not None:
            ring = valid_ring(ring)
        if len(ring) < k:
            rejects += 1
            continue
        anchors.append(c)
        rings.append(ring)
    return anchors, rings


def sample_nm_node(g: Graph, m: int, k: int, n: int, l: int = 2,
                   rng: np.random.Generator | None = None) -> FewShotPrompt:
    rng = np.random.default_rng() if rng is None else rng
    q = math.ceil(n / m)
    anchors, rings = _nm_anchors(g, m, k, l, rng)
    per_class = [[Datapoint.node(v) for v in _draw(ring, k + q, rng)] for ring in rings]
    return _assemble(m, k, q, per_class, anchors, "NM")


def _expand_to_edge(g: Graph, v: int, rng) -> Datapoint:
    inc = g.incident_edges(v)
    if g.directed:
        # include in-edges as well: any edge containing v qualifies
        inc = np.union1d(inc, np.flatnonzero(g.edges[:, 2] == v))
    e = int(rng.choice(inc))
    u, _, w = g.edges[e]
    return Datapoint.edge(v, int(w) if u == v else int(u))


def sample_nm_edge(g: Graph, m: int, k: int, n: int, l: int = 2,
                   rng: np.random.Generator | None = None) -> FewShotPrompt:
    rng = np.random.default_rng() if rng is None else rng
    q = math.ceil(n / m)
    touched = np.zeros(g.num_nodes, dtype=bool)
    touched[g.edges[:, 0]] = True
    touched[g.edges[:, 2]] = True
    anchors, rings = _nm_anchors(g, m, k, l, rng, valid_ring=lambda r: r[touched[r]])
    per_class = [[_expand_to_edge(g, int(v), rng) for v in _draw(ring, k + q, rng)]
                 for ring in rings]
    return _assemble(m, k, q, per_class, anchors, "NM")


def sample_mt_node(g: Graph, lab: NodeLabeling, m: int, k: int, n: int,
                   rng: np.random.Generator | None = None) -> FewShotPrompt:
    rng = np.random.default_rng() if rng is None else rng
    q = math.ceil(n / m)
    counts = np.bincount(lab.labels[lab.labels >= 0], minlength=lab.num_classes)
    usable = np.flatnonzero(counts >= k)
    if len(usable) < m:
        raise TaskGenerationError(
            f"only {len(usable)} classes have >= k={k} labeled nodes; need m={m}")
    classes = rng.choice(usable, size=m, replace=False)
    per_class = [[Datapoint.node(v) for v in _draw(lab.members(c), k + q, rng)]
                 for c in classes]
    return _assemble(m, k, q, per_class, classes, "MT")


def sample_mt_edge(g: Graph, m: int, k: int, n: int,
                   rng: np.random.Generator | None = None) -> FewShotPrompt:
    """Relation-type episodes; the classified edge is hidden from its data graph."""
    rng = np.random.default_rng() if rng is None else rng
    q = math.ceil(n / m)
    counts = np.bincount(g.edges[:, 1], minlength=g.num_relations)
    usable = np.flatnonzero(counts >= k)
    if len(usable) < m:
        raise TaskGenerationError(
            f"only {len(usable)} relation types have >= k={k} edges; need m={m}")
    rels = rng.choice(usable, size=m, replace=False)
    per_class = []
    for r in rels:
        eids = _draw(np.flatnonzero(g.edges[:, 1] == r), k + q, rng)
        per_class.append([Datapoint.edge(g.edges[e, 0], g.edges[e, 2], hidden_edges=(e,))
                          for e in eids])
    return _assemble(m, k, q, per_class, rels, "MT")


def split_nodes(lab: NodeLabeling, train_fraction: float, seed=0) -> dict[str, np.ndarray]:
    """Random train/test split of the labeled nodes."""
    rng = np.random.default_rng(seed)
    nodes = rng.permutation(lab.labeled_nodes())
    cut = int(round(train_fraction * len(nodes)))
    return {"train": np.sort(nodes[:cut]), "test": np.sort(nodes[cut:])}


def sample_downstream_eval(g: Graph, lab: NodeLabeling, split: dict, m: int, k: int,
                           pool_size: int = 10, num_tasks: int = 500, n: int = 4,
                           rng: np.random.Generator | None = None) -> list[FewShotPrompt]:
    """Evaluation prompts drawing examples from a fixed per-class train pool.

    The pool of ``pool_size`` train nodes per class is drawn once; every task
    then samples ``m`` classes, ``k`` examples per class from the pool and
    ``ceil(n / m)`` queries per class from the test split.
    """
    rng = np.random.default_rng() if rng is None else rng
    if k > pool_size:
        raise TaskGenerationError(f"k={k} exceeds pool_size={pool_size}")
    train, test = np.asarray(split["train"]), np.asarray(split["test"])
    if not len(test):
        raise TaskGenerationError("test split is empty")
    pools, test_members = {}, {}
    for c in range(lab.num_classes):
        members = lab.members(c, train)
        tmem = lab.members(c, test)
        if len(members) >= pool_size and len(tmem):
            pools[c] = np.sort(rng.choice(members, size=pool_size, replace=False))
            test_members[c] = tmem
    classes = sorted(pools)
    if len(classes) < m:
        raise TaskGenerationError(
            f"only {len(classes)} classes have a pool of {pool_size} train nodes "
            f"and test nodes; need m={m}")
    q = math.ceil(n / m)
    tasks = []
    for _ in range(num_tasks):
        chosen = rng.choice(classes, size=m, replace=False)
        per_class = []
        for c in chosen:
            ex = rng.choice(pools[c], size=k, replace=False)
            qs = _draw(test_members[c], q, rng)
            per_class.append([Datapoint.node(v) for v in np.concatenate([ex, qs])])
        tasks.append(_assemble(m, k, q, per_class, chosen, "eval"))
    return tasks
