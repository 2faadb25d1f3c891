"""
Anatomy of a prompt graph
=========================

A few-shot prompt becomes two layers of graphs: one small data graph per
datapoint, and a bipartite task graph joining datapoints to label nodes.
"""

import numpy as np

from prodigy import Datapoint, assemble_prompt_graph, sample_mt_node, synth_planted_graph
from prodigy.prompt import NO_AUG

# a planted graph: three blocks of 15 nodes, features centred on the block one-hot
g, labels = synth_planted_graph(3, 15, 0.4, 0.02, 0.5, seed=0)
print(g.num_nodes, "nodes,", g.num_edges, "edges, feature width", g.feature_dim)

# a 3-way 2-shot episode with 4 queries (rounded up to one per class)
rng = np.random.default_rng(0)
prompt = sample_mt_node(g, labels, m=3, k=2, n=4, rng=rng)
print("examples:", [(dp.input_nodes[0], c) for dp, c in prompt.examples])
print("queries: ", [dp.input_nodes[0] for dp in prompt.queries], "->", prompt.query_labels)

# labels are stripped before the model ever sees the prompt
pg = assemble_prompt_graph(g, prompt.strip_labels(), k_hops=2, fanout_cap=4,
                           aug=NO_AUG, rng=rng)
for dg in pg.data_graphs[:3]:
    print("data graph around", dg.local_nodes[list(dg.input_local)], "has", dg.num_nodes, "nodes")

# task graph rows: (data node, label node, is_example, is_true)
tg = pg.task_graph
print("data nodes", tg.num_data, "label nodes", tg.num_labels, "edges", len(tg.edges))
print(tg.edges[:6])
tg.validate(prompt.k)

# an edge-level datapoint hides its own edge from its context
dp = Datapoint.edge(*g.edges[0, [0, 2]], hidden_edges=(0,))
print("edge datapoint", dp)
