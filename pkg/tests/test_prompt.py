import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import make_graph, random_graph
from prodigy.container import ContainerError
from prodigy.graph import Datapoint
from prodigy.prompt import (NO_AUG, AugConfig, PromptValidationError, TaskGraph,
                            TaskGraphInvariantError, assemble_prompt_graph, build_task_graph,
                            contextualize, drop_node, load_prompt_graph, mask_node,
                            save_prompt_graph)
from prodigy.tasks import FewShotPrompt


def _dg(n=10, seed=0):
    g = random_graph(n, 0.4, seed)
    return contextualize(g, Datapoint.node(0), 3)


# ---------------------------------------------------------------- contextualize

def test_contextualize_node(path5):
    dg = contextualize(path5, Datapoint.node(0), 1)
    assert dg.num_nodes == 2 and len(dg.local_edges) == 1
    assert dg.local_nodes[list(dg.input_local)].tolist() == [0]


def test_contextualize_edge(path5):
    dg = contextualize(path5, Datapoint.edge(1, 3), 1)
    # union of the 1-hop balls of 1 and 3
    assert dg.local_nodes.tolist() == [0, 1, 2, 3, 4] and len(dg.input_local) == 2
    assert dg.local_nodes[list(dg.input_local)].tolist() == [1, 3]


def test_contextualize_isolated():
    g = make_graph(3, [(1, 2)])
    dg = contextualize(g, Datapoint.node(0), 3)
    assert dg.num_nodes == 1 and len(dg.local_edges) == 0


def test_hidden_edge_removed(path5):
    dg = contextualize(path5, Datapoint.edge(1, 2, hidden_edges=(1,)), 1)
    pairs = {(dg.local_nodes[u], dg.local_nodes[v]) for u, _, v in dg.local_edges}
    assert (1, 2) not in pairs and len(pairs) == 2


# ---------------------------------------------------------------- augmentation

def test_drop_zero_is_identity():
    dg = _dg()
    assert drop_node(dg, 0.0, np.random.default_rng(0)).equals(dg)


def test_drop_one_keeps_only_inputs():
    dg = _dg()
    out = drop_node(dg, 1.0, np.random.default_rng(0))
    assert out.num_nodes == 1 and len(out.local_edges) == 0
    assert out.local_nodes.tolist() == [0]
    assert out.dropped == frozenset(dg.local_nodes.tolist()) - {0}


def test_drop_deterministic():
    dg = _dg()
    a = drop_node(dg, 0.5, np.random.default_rng(3))
    b = drop_node(dg, 0.5, np.random.default_rng(3))
    assert a.equals(b)


@settings(max_examples=50, deadline=None)
@given(p=st.floats(0.0, 0.99), seed=st.integers(0, 10**6))
def test_inputs_survive_drop(p, seed):
    g = random_graph(20, 0.3, seed)
    dg = contextualize(g, Datapoint.edge(0, 1), 2)
    out = drop_node(dg, p, np.random.default_rng(seed))
    assert out.local_nodes[list(out.input_local)].tolist() == [0, 1]
    kept = set(out.local_nodes.tolist())
    for u, _, v in out.local_edges:
        assert out.local_nodes[u] in kept and out.local_nodes[v] in kept


def test_mask_zero_unchanged():
    dg = _dg()
    out = mask_node(dg, 0.0, np.random.default_rng(0))
    assert np.array_equal(out.features, dg.features) and len(out.masked_local) == 0


def test_mask_one_zeros_everything():
    dg = _dg()
    out = mask_node(dg, 1.0, np.random.default_rng(0))
    assert not out.features.any()
    assert np.array_equal(out.masked_original, dg.features)


def test_mask_half_rows():
    dg = _dg()
    out = mask_node(dg, 0.5, np.random.default_rng(1))
    hit = np.zeros(dg.num_nodes, dtype=bool)
    hit[out.masked_local] = True
    assert 0 < hit.sum() < dg.num_nodes
    assert not out.features[hit].any()
    assert np.array_equal(out.features[~hit], dg.features[~hit])
    assert np.array_equal(out.masked_original, dg.features[hit])
    assert out.masked == frozenset(dg.local_nodes[hit].tolist())


def test_drop_after_mask_keeps_side_table_aligned():
    dg = mask_node(_dg(12, 4), 0.5, np.random.default_rng(2))
    out = drop_node(dg, 0.5, np.random.default_rng(9))
    for i, row in zip(out.masked_local, out.masked_original):
        g_id = out.local_nodes[i]
        j = int(np.flatnonzero(dg.local_nodes == g_id)[0])
        assert np.array_equal(row, dg.masked_original[list(dg.masked_local).index(j)])


# ---------------------------------------------------------------- task graph

def test_task_graph_counts():
    tg = build_task_graph(3, 3, 2, [0, 0, 0, 1, 1, 1, 2, 2, 2])
    assert (tg.num_data, tg.num_labels, len(tg.edges)) == (11, 3, 33)
    assert tg.edges[:, 3].sum() == 9
    tg.validate(3)


def test_task_graph_minimal():
    tg = build_task_graph(1, 1, 1, [0])
    assert (tg.num_data, tg.num_labels, len(tg.edges), tg.edges[:, 3].sum()) == (2, 1, 2, 1)


def test_task_graph_unbalanced():
    with pytest.raises(PromptValidationError):
        build_task_graph(2, 1, 0, [0, 0])


@settings(max_examples=100, deadline=None)
@given(m=st.integers(1, 10), k=st.integers(1, 5), n=st.integers(0, 20),
       seed=st.integers(0, 10**6))
def test_task_graph_invariants_fuzz(m, k, n, seed):
    labels = np.random.default_rng(seed).permutation(np.repeat(np.arange(m), k))
    tg = build_task_graph(m, k, n, labels)
    tg.validate(k)
    assert len(tg.edges) == (m * k + n) * m
    true = tg.edges[tg.edges[:, 3] == 1]
    assert sorted(true[:, 0].tolist()) == list(range(m * k))
    assert (labels[true[:, 0]] == true[:, 1]).all()


@pytest.mark.parametrize("corrupt,name", [
    (lambda e: e[:-1], "edge-count"),
    (lambda e: _set(e, 1, 3, 1), "one-true-edge"),
    (lambda e: _set(e, 12, 2, 1), "query-edge-flags"),
    (lambda e: _set(e, 0, 2, 0), "example-edge-flag"),
])
def test_invariant_violations_named(corrupt, name):
    tg = build_task_graph(2, 3, 2, [0, 0, 0, 1, 1, 1])
    bad = TaskGraph(tg.roles, 2, corrupt(tg.edges.copy()))
    with pytest.raises(TaskGraphInvariantError) as err:
        bad.validate(3)
    assert err.value.invariant == name


def _set(e, row, col, val):
    e[row, col] = val
    return e


# ---------------------------------------------------------------- assembly

def _path_prompt():
    ex = ((Datapoint.node(1), 0), (Datapoint.node(3), 1))
    return FewShotPrompt(2, 1, ex, (Datapoint.node(0), Datapoint.node(4)), (0, 1), (0, 4))


def test_assemble_counts(path5):
    pg = assemble_prompt_graph(path5, _path_prompt(), 1, None, NO_AUG, np.random.default_rng(0))
    assert len(pg.data_graphs) == 4 and pg.task_graph.num_data == 4 and pg.m == 2


def test_zero_probability_aug_equals_plain(path5):
    prompt = _path_prompt()
    plain = assemble_prompt_graph(path5, prompt, 2, None, NO_AUG, np.random.default_rng(3))
    aug = assemble_prompt_graph(path5, prompt, 2, None, AugConfig(True, 0.0, 0.0),
                                np.random.default_rng(3))
    assert all(a.equals(b) for a, b in zip(plain.data_graphs, aug.data_graphs))
    assert plain.label_seed == aug.label_seed


def test_assemble_deterministic():
    g = random_graph(30, 0.2, 1)
    prompt = _path_prompt()
    a = assemble_prompt_graph(g, prompt, 2, 3, AugConfig(), np.random.default_rng(8))
    b = assemble_prompt_graph(g, prompt, 2, 3, AugConfig(), np.random.default_rng(8))
    assert all(x.equals(y) for x, y in zip(a.data_graphs, b.data_graphs))
    assert np.array_equal(a.task_graph.edges, b.task_graph.edges)


def test_dump_roundtrip(tmp_path):
    g = random_graph(30, 0.2, 1)
    pg = assemble_prompt_graph(g, _path_prompt(), 2, 3, AugConfig(), np.random.default_rng(2))
    save_prompt_graph(pg, tmp_path / "p.bin")
    back = load_prompt_graph(tmp_path / "p.bin")
    assert all(x.equals(y) for x, y in zip(pg.data_graphs, back.data_graphs))
    assert np.array_equal(pg.task_graph.edges, back.task_graph.edges)
    assert (back.label_seed, back.class_meta, back.k) == (pg.label_seed, pg.class_meta, pg.k)


def test_dump_corruption_detected(tmp_path):
    pg = assemble_prompt_graph(make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4)]), _path_prompt(),
                               1, None, NO_AUG, np.random.default_rng(0))
    path = tmp_path / "p.bin"
    save_prompt_graph(pg, path)
    raw = bytearray(path.read_bytes())
    raw[-3] ^= 0xFF
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerError):
        load_prompt_graph(path)
