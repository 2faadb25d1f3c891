"""
Accuracy against the number of shots
====================================

Train on the bundled toy graph, score 3-way prompts with 1 to 5 shots and draw
the curve. Reports and the plot land in ``runs/shot_curve``.
"""

from pathlib import Path

import numpy as np
import torch

from prodigy import (ModelConfig, TaskConfig, TrainConfig, evaluate_in_context, load_graph,
                     load_labeling, pretrain, sample_downstream_eval, split_nodes)
from prodigy.config import toy_config_path
from prodigy.plotting import plot_curve

torch.set_num_threads(1)
out = Path("runs/shot_curve")
out.mkdir(parents=True, exist_ok=True)

toy = toy_config_path().parent
g = load_graph(toy / "edges.tsv", toy / "features.txt")
lab = load_labeling(toy / "labels.tsv", g.num_nodes)

task = TaskConfig(m=3, k=3, n=4, l=2, k_hops=2, fanout_cap=5)
cfg = ModelConfig(d_in=g.feature_dim, d=32, attn_init="identity")
model = pretrain(g, lab, cfg, TrainConfig(steps=300, seed=0), task).model

split = split_nodes(lab, 0.5, seed=0)
paths = []
for k in (1, 2, 3, 5):
    tasks = sample_downstream_eval(g, lab, split, 3, k, 10, 200, 4, np.random.default_rng(k))
    report = evaluate_in_context(model, g, tasks, 2, 5, seed=0, config={"m": 3, "k": k})
    print(f"{k} shots: {report.mean:.3f}")
    paths.append(out / f"report_k{k}.json")
    report.save(paths[-1])

csv_path = plot_curve("shots_curve", paths, out / "shots.png")
print(csv_path.read_text())
