"""In-context evaluation and the NoPretrain / Contrastive / Finetune baselines."""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .graph import Datapoint, Graph, Level
from .model import DataGraphEncoder, ModelConfig, PromptGraphModel, baseline_nopretrain
from .prompt import NO_AUG, AugConfig, assemble_prompt_graph, contextualize, drop_node, mask_node
from .tasks import FewShotPrompt
from .train import TaskConfig, TrainConfig, TrainConfigError

__all__ = [
    "EvalReport", "evaluate_in_context", "evaluate_predictions", "baseline_nopretrain",
    "baseline_contrastive_pretrain", "baseline_contrastive_classify", "baseline_finetune",
    "HeadConfig", "embed_datapoints",
]


@dataclass
class EvalReport:
    accuracies: list[float]
    config: dict = field(default_factory=dict)

    @property
    def num_tasks(self) -> int:
        return len(self.accuracies)

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies)) if self.accuracies else float("nan")

    @property
    def stderr(self) -> float:
        """Sample standard deviation over tasks divided by sqrt(num_tasks)."""
        if len(self.accuracies) < 2:
            return 0.0
        return float(np.std(self.accuracies, ddof=1) / np.sqrt(len(self.accuracies)))

    def to_dict(self) -> dict:
        return {"mean_accuracy": self.mean, "stderr": self.stderr, "stderr_kind": "sample",
                "num_tasks": self.num_tasks, "config": self.config,
                "per_task_accuracy": list(self.accuracies)}

    def save(self, path, per_task_csv=None) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True))
        if per_task_csv is not None:
            with open(per_task_csv, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["task", "accuracy"])
                w.writerows(enumerate(self.accuracies))

    @classmethod
    def load(cls, path) -> "EvalReport":
        d = json.loads(Path(path).read_text())
        return cls(list(d["per_task_accuracy"]), d.get("config", {}))


def _task_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), 7919, int(index)])


def _score(pred, task: FewShotPrompt) -> float:
    return float(np.mean(np.asarray(pred) == np.asarray(task.query_labels)))


def evaluate_predictions(predict, tasks, config: dict | None = None, jobs: int = 1) -> EvalReport:
    """Score ``predict(task_without_labels, index)`` against each task's query labels.

    Tasks are independent; ``jobs > 1`` scores them on a thread pool and the
    result is the same as the serial run because every task owns its RNG.
    """
    def one(i):
        return _score(predict(tasks[i].strip_labels(), i), tasks[i])

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            accs = list(pool.map(one, range(len(tasks))))
    else:
        accs = [one(i) for i in range(len(tasks))]
    return EvalReport(accs, dict(config or {}))


def evaluate_in_context(model: PromptGraphModel, g: Graph, tasks, k_hops: int = 2,
                        fanout_cap: int | None = None, seed: int = 0, label_features=None,
                        config: dict | None = None, jobs: int = 1) -> EvalReport:
    """Run each prompt through the model in inference mode, no augmentation, no updates."""
    model.eval()

    def predict(task, i):
        pg = assemble_prompt_graph(g, task, k_hops, fanout_cap, NO_AUG, _task_rng(seed, i))
        with torch.no_grad():
            logits = model(pg, label_features).logits.numpy()
        return np.argmax(logits, axis=1)

    echo = {"m": tasks[0].m if tasks else None, "k": tasks[0].k if tasks else None,
            "num_tasks": len(tasks), "seed": seed, **(config or {})}
    return evaluate_predictions(predict, tasks, echo, jobs)


# --------------------------------------------------------------------------
# encoder-only baselines

def embed_datapoints(encoder: DataGraphEncoder, g: Graph, points, k_hops: int = 2,
                     fanout_cap: int | None = None, rng=None) -> torch.Tensor:
    rng = np.random.default_rng(0) if rng is None else rng
    graphs = [contextualize(g, dp, k_hops, fanout_cap, rng) for dp in points]
    return encoder.embed(graphs)


def _nt_xent(z1, z2, temperature):
    z1, z2 = F.normalize(z1, dim=1), F.normalize(z2, dim=1)
    sim = z1 @ z2.T / temperature
    target = torch.arange(len(z1))
    return 0.5 * (F.cross_entropy(sim, target) + F.cross_entropy(sim.T, target))


def baseline_contrastive_pretrain(g: Graph, model_cfg: ModelConfig, train_cfg: TrainConfig,
                                  task: TaskConfig | None = None, aug: AugConfig | None = None,
                                  batch_size: int = 32) -> DataGraphEncoder:
    """Two-view contrastive pretraining of the data-graph encoder alone.

    Each sampled datapoint is contextualized once and augmented twice; the
    two views are positives and the other batch members are negatives.
    """
    task = task or TaskConfig()
    aug = aug or AugConfig()
    if batch_size < 2:
        raise TrainConfigError("contrastive pretraining needs batch_size >= 2 for negatives")
    gen = torch.Generator().manual_seed(int(train_cfg.seed))
    enc = DataGraphEncoder(model_cfg)
    enc.reset_parameters(gen)
    opt = torch.optim.AdamW(enc.parameters(), lr=train_cfg.lr, weight_decay=train_cfg.weight_decay)
    edge = model_cfg.level is Level.EDGE
    for step in range(train_cfg.steps):
        rng = np.random.default_rng([int(train_cfg.seed), int(step), 104729])
        views = contrastive_views(g, edge, batch_size, task, aug, rng)
        z = enc.embed(views)
        loss = _nt_xent(z[:batch_size], z[batch_size:], model_cfg.temperature)
        opt.zero_grad()
        loss.backward()
        if train_cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(enc.parameters(), train_cfg.grad_clip)
        opt.step()
    return enc


def contrastive_views(g: Graph, edge: bool, batch_size: int, task: TaskConfig,
                      aug: AugConfig, rng) -> list:
    """``2 * batch_size`` augmented data graphs: all first views, then all second views."""
    if edge:
        eids = rng.choice(g.num_edges, size=batch_size, replace=g.num_edges < batch_size)
        points = [Datapoint.edge(g.edges[e, 0], g.edges[e, 2], hidden_edges=(e,)) for e in eids]
    else:
        nodes = rng.choice(g.num_nodes, size=batch_size, replace=g.num_nodes < batch_size)
        points = [Datapoint.node(v) for v in nodes]
    base = [contextualize(g, dp, task.k_hops, task.fanout_cap, rng) for dp in points]

    def augment(dg):
        if not aug.enabled:
            return dg
        return mask_node(drop_node(dg, aug.p_drop, rng), aug.p_mask, rng)

    return [augment(dg) for dg in base] + [augment(dg) for dg in base]


def _split_prompt(task: FewShotPrompt):
    return [dp for dp, _ in task.examples], [c for _, c in task.examples], list(task.queries)


def class_mean_scores(example_emb, example_labels, query_emb, m: int) -> np.ndarray:
    """Cosine of each query to each class-mean embedding, shape ``(queries, m)``."""
    ex = torch.as_tensor(example_emb)
    y = torch.as_tensor(example_labels, dtype=torch.long)
    means = torch.stack([ex[y == c].mean(dim=0) for c in range(m)])
    cos = F.normalize(torch.as_tensor(query_emb), dim=1, eps=1e-12) @ \
        F.normalize(means, dim=1, eps=1e-12).T
    return cos.detach().numpy()


def classify_by_class_mean(example_emb, example_labels, query_emb, m: int) -> np.ndarray:
    """Arg-max of :func:`class_mean_scores`; ties go to the lowest class."""
    return np.argmax(class_mean_scores(example_emb, example_labels, query_emb, m), axis=1)


def baseline_contrastive_classify(encoder: DataGraphEncoder, task: FewShotPrompt, g: Graph,
                                  k_hops: int = 2, fanout_cap: int | None = None,
                                  rng=None) -> np.ndarray:
    ex_points, ex_labels, queries = _split_prompt(task)
    with torch.no_grad():
        emb = embed_datapoints(encoder, g, ex_points + queries, k_hops, fanout_cap, rng)
    return classify_by_class_mean(emb[:len(ex_points)], ex_labels, emb[len(ex_points):], task.m)


@dataclass
class HeadConfig:
    epochs: int = 100
    lr: float = 1e-2
    seed: int = 0


def fit_linear_head(example_emb, example_labels, m: int, cfg: HeadConfig | None = None):
    """Full-batch cross-entropy fit of an m-way linear head; returns ``(weight, bias)``.

    Weights start small and random, biases at zero.
    """
    cfg = cfg or HeadConfig()
    x = torch.as_tensor(example_emb).detach()
    y = torch.as_tensor(example_labels, dtype=torch.long)
    gen = torch.Generator().manual_seed(int(cfg.seed))
    W = (0.01 * torch.randn(x.shape[1], m, generator=gen, dtype=x.dtype)).requires_grad_()
    b = torch.zeros(m, dtype=x.dtype, requires_grad=True)
    opt = torch.optim.Adam([W, b], lr=cfg.lr)
    for _ in range(cfg.epochs):
        opt.zero_grad()
        F.cross_entropy(x @ W + b, y).backward()
        opt.step()
    return W.detach(), b.detach()


def baseline_finetune(encoder: DataGraphEncoder, task: FewShotPrompt, g: Graph,
                      head_cfg: HeadConfig | None = None, k_hops: int = 2,
                      fanout_cap: int | None = None, rng=None) -> np.ndarray:
    """Fit a fresh linear head on the prompt's examples over frozen embeddings."""
    ex_points, ex_labels, queries = _split_prompt(task)
    with torch.no_grad():
        emb = embed_datapoints(encoder, g, ex_points + queries, k_hops, fanout_cap, rng)
    W, b = fit_linear_head(emb[:len(ex_points)], ex_labels, task.m, head_cfg)
    return np.argmax((emb[len(ex_points):] @ W + b).numpy(), axis=1)
