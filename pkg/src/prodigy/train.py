"""In-context pretraining: episode mixing, the combined loss, AdamW updates and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .container import ContainerError, read_container, write_container
from .graph import Graph, Level, NodeLabeling
from .model import DataGraphEncoder, ModelConfig, PromptGraphModel
from .prompt import AugConfig, PromptGraph, assemble_prompt_graph
from .tasks import (FewShotPrompt, sample_mt_edge, sample_mt_node, sample_nm_edge,
                    sample_nm_node)

log = logging.getLogger(__name__)

METRIC_FIELDS = ["step", "family", "loss_ce", "loss_attr", "query_acc", "wall_ms"]


class TrainConfigError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class TrainConfig:
    steps: int = 1000
    batch_size: int = 1
    lr: float = 1e-3
    weight_decay: float = 1e-3
    nm_to_mt_ratio: tuple[int, int] = (1, 1)
    attr_weight: float = 1.0
    checkpoint_every: int = 500
    grad_clip: float | None = None
    seed: int = 0

    def __post_init__(self):
        self.nm_to_mt_ratio = tuple(int(c) for c in self.nm_to_mt_ratio)
        if self.lr <= 0:
            raise TrainConfigError("lr must be positive")
        if len(self.nm_to_mt_ratio) != 2 or min(self.nm_to_mt_ratio) < 0 \
                or sum(self.nm_to_mt_ratio) == 0:
            raise TrainConfigError("nm_to_mt_ratio needs two non-negative counts, not both 0")
        if self.attr_weight < 0:
            raise TrainConfigError("attr_weight must be non-negative")
        if self.batch_size < 1 or self.steps < 0 or self.checkpoint_every < 1:
            raise TrainConfigError("steps, batch_size and checkpoint_every must be positive")


@dataclass
class TaskConfig:
    """Episode shape and data-graph sampling for pretraining."""

    m: int = 30
    k: int = 3
    n: int = 4
    l: int = 2
    k_hops: int = 2
    fanout_cap: int | None = None
    level: str = "node"


@dataclass
class Episode:
    family: str
    prompt: FewShotPrompt
    graph: PromptGraph


@dataclass
class TrainState:
    model: PromptGraphModel
    optimizer: torch.optim.Optimizer
    step: int
    seed: int
    telemetry: list = field(default_factory=list)


# --------------------------------------------------------------------------
# episodes

def episode_family(cfg: TrainConfig, index: int) -> str:
    """Deterministic round-robin over the NM:MT ratio."""
    nm, mt = cfg.nm_to_mt_ratio
    return "NM" if index % (nm + mt) < nm else "MT"


def episode_rng(seed: int, step: int, index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(step), int(index)])


def sample_episode(g: Graph, lab: NodeLabeling | None, family: str, task: TaskConfig,
                   rng: np.random.Generator) -> FewShotPrompt:
    edge = Level(task.level) is Level.EDGE
    if family == "NM":
        sampler = sample_nm_edge if edge else sample_nm_node
        return sampler(g, task.m, task.k, task.n, task.l, rng)
    if edge:
        usable = int((np.bincount(g.edges[:, 1], minlength=g.num_relations) >= task.k).sum())
        return sample_mt_edge(g, min(task.m, usable), task.k, task.n, rng)
    if lab is None:
        raise TrainConfigError("multi-task episodes need a node labeling")
    counts = np.bincount(lab.labels[lab.labels >= 0], minlength=lab.num_classes)
    usable = int((counts >= task.k).sum())
    return sample_mt_node(g, lab, min(task.m, usable), task.k, task.n, rng)


def make_episode(g, lab, family, task: TaskConfig, aug: AugConfig, rng) -> Episode:
    prompt = sample_episode(g, lab, family, task, rng)
    pg = assemble_prompt_graph(g, prompt.strip_labels(), task.k_hops, task.fanout_cap, aug, rng)
    return Episode(family, prompt, pg)


# --------------------------------------------------------------------------
# loss

def compute_loss(model: PromptGraphModel, episodes, attr_weight: float = 1.0,
                 label_features=None):
    """Per-family mean query cross-entropy, summed over families, plus weighted attribute loss."""
    if not episodes:
        raise TrainConfigError("batch must contain at least one episode")
    ce = {}
    correct = total = 0
    attr = []
    for ep in episodes:
        out = model(ep.graph, label_features)
        y = torch.as_tensor(ep.prompt.query_labels, dtype=torch.long)
        if len(y) and ((y < 0) | (y >= out.logits.shape[1])).any():
            raise ValueError("query label outside the prompt's classes")
        ce.setdefault(ep.family, []).append(
            F.cross_entropy(out.logits, y, reduction="none"))
        correct += int((out.logits.argmax(dim=1) == y).sum())
        total += len(y)
        attr.append(out.attr_losses)
    fam_ce = {f: torch.cat(v).mean() for f, v in ce.items()}
    ce_total = sum(fam_ce.values())
    attr_mean = torch.cat(attr).mean()
    loss = ce_total + attr_weight * attr_mean if attr_weight else ce_total
    metrics = {"family": "+".join(sorted(fam_ce)), "loss_ce": float(ce_total.detach()),
               "loss_attr": float(attr_mean.detach()), "query_acc": correct / max(total, 1),
               **{f"ce_{f}": float(v.detach()) for f, v in fam_ce.items()}}
    return loss, metrics


# --------------------------------------------------------------------------
# checkpoints

_MAGIC, _VERSION = b"PRDGCKPT", 1


def save_checkpoint(path, model, optimizer=None, meta: dict | None = None) -> None:
    """Write model parameters, buffers, optimizer moments and run metadata."""
    arrays = {f"model/{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    dtypes = {}
    opt_meta = None
    if optimizer is not None:
        sd = optimizer.state_dict()
        for pid, st in sd["state"].items():
            for key, val in st.items():
                name = f"opt/{pid}/{key}"
                t = torch.as_tensor(val)
                dtypes[name] = str(t.dtype).replace("torch.", "")
                arrays[name] = t.detach().cpu().numpy()
        opt_meta = sd["param_groups"]
    kind = "prompt_model" if isinstance(model, PromptGraphModel) else "encoder"
    full = {"kind": kind, "model_config": model.cfg.to_dict(), "optimizer": opt_meta,
            "opt_dtypes": dtypes, **(meta or {})}
    write_container(path, _MAGIC, _VERSION, full, arrays)


def load_checkpoint(path):
    """Return ``(model, optimizer_state_dict or None, meta)``."""
    try:
        meta, arrays = read_container(path, _MAGIC, _VERSION)
    except (ContainerError, OSError) as err:
        raise CheckpointError(str(err)) from None
    cfg = ModelConfig(**meta["model_config"])
    model = PromptGraphModel(cfg) if meta["kind"] == "prompt_model" else DataGraphEncoder(cfg)
    state = {k[len("model/"):]: torch.as_tensor(v) for k, v in arrays.items()
             if k.startswith("model/")}
    try:
        model.load_state_dict(state)
    except RuntimeError as err:
        raise CheckpointError(f"{path}: parameter mismatch ({err})") from None
    opt_state = None
    if meta.get("optimizer") is not None:
        st: dict = {}
        for name, val in arrays.items():
            if name.startswith("opt/"):
                _, pid, key = name.split("/", 2)
                dtype = getattr(torch, meta["opt_dtypes"][name])
                st.setdefault(int(pid), {})[key] = torch.as_tensor(val).to(dtype)
        opt_state = {"state": st, "param_groups": meta["optimizer"]}
    return model, opt_state, meta


def _make_optimizer(model, cfg: TrainConfig):
    return torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def _run_meta(state, train_cfg, task, aug):
    return {"step": state.step, "seed": state.seed, "train_config": asdict(train_cfg),
            "task_config": asdict(task), "aug_config": asdict(aug),
            # episode streams are derived from (seed, step, index), so this is the full RNG state
            "rng_state": {"kind": "derived", "seed": state.seed, "step": state.step}}


# --------------------------------------------------------------------------
# loop

def _write_metrics(path: Path, rows) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=METRIC_FIELDS, extrasaction="ignore")
        if new:
            w.writeheader()
        w.writerows(rows)


def _dump_episodes(out_dir, step, episodes, loss) -> Path | None:
    if out_dir is None:
        return None
    path = Path(out_dir) / f"nonfinite_step{step}.json"
    path.write_text(json.dumps({"step": step, "loss": repr(loss),
                                "episodes": [ep.prompt.to_record() for ep in episodes]},
                               indent=1))
    return path


def train_steps(state: TrainState, g: Graph, lab, train_cfg: TrainConfig, task: TaskConfig,
                aug: AugConfig, out_dir=None, label_features=None) -> TrainState:
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    model, opt = state.model, state.optimizer
    last_saved = None
    while state.step < train_cfg.steps:
        s = state.step
        t0 = time.perf_counter()
        model.train()
        episodes = []
        for i in range(train_cfg.batch_size):
            fam = episode_family(train_cfg, s * train_cfg.batch_size + i)
            episodes.append(make_episode(g, lab, fam, task, aug, episode_rng(state.seed, s, i)))
        loss, metrics = compute_loss(model, episodes, train_cfg.attr_weight, label_features)
        if not torch.isfinite(loss):
            dump = _dump_episodes(out, s, episodes, float(loss.detach()))
            raise TrainingError(f"non-finite loss at step {s}; episodes dumped to {dump}")
        opt.zero_grad()
        loss.backward()
        if train_cfg.grad_clip:
            torch.nn.utils.clip_grad_norm_(model.parameters(), train_cfg.grad_clip)
        opt.step()
        state.step = s + 1
        row = {"step": state.step, **metrics,
               "wall_ms": round(1000 * (time.perf_counter() - t0), 3)}
        state.telemetry.append(row)
        if out is not None:
            _write_metrics(out / "metrics.csv", [row])
            if state.step % train_cfg.checkpoint_every == 0:
                save_checkpoint(out / f"ckpt_{state.step}.bin", model, opt,
                                _run_meta(state, train_cfg, task, aug))
                last_saved = state.step
        if state.step % 100 == 0:
            log.info("step %d loss %.4f acc %.3f", state.step, float(loss.detach()),
                     metrics["query_acc"])
    if out is not None and last_saved != state.step:
        save_checkpoint(out / f"ckpt_{state.step}.bin", model, opt,
                        _run_meta(state, train_cfg, task, aug))
    return state


def pretrain(g: Graph, lab: NodeLabeling | None, model_cfg: ModelConfig,
             train_cfg: TrainConfig, task: TaskConfig | None = None,
             aug: AugConfig | None = None, out_dir=None, label_features=None) -> TrainState:
    """Pretrain a prompt-graph model; deterministic given ``train_cfg.seed``."""
    task = task or TaskConfig()
    aug = aug or AugConfig()
    if train_cfg.nm_to_mt_ratio[1] > 0 and lab is None and Level(task.level) is Level.NODE:
        raise TrainConfigError("multi-task pretraining requested without a node labeling")
    torch.manual_seed(train_cfg.seed)
    model = PromptGraphModel(model_cfg, seed=train_cfg.seed)
    state = TrainState(model, _make_optimizer(model, train_cfg), 0, train_cfg.seed)
    return train_steps(state, g, lab, train_cfg, task, aug, out_dir, label_features)


def resume(checkpoint, g: Graph, train_cfg: TrainConfig, lab: NodeLabeling | None = None,
           out_dir=None, label_features=None) -> TrainState:
    """Restore a checkpoint and continue until ``train_cfg.steps``."""
    model, opt_state, meta = load_checkpoint(checkpoint)
    if meta.get("kind") != "prompt_model" or opt_state is None:
        raise CheckpointError(f"{checkpoint}: not a resumable pretraining checkpoint")
    if int(meta["seed"]) != train_cfg.seed:
        raise CheckpointError(
            f"seed {train_cfg.seed} differs from checkpoint seed {meta['seed']}")
    opt = _make_optimizer(model, train_cfg)
    opt.load_state_dict(opt_state)
    task = TaskConfig(**meta["task_config"])
    aug = AugConfig(**meta["aug_config"])
    state = TrainState(model, opt, int(meta["step"]), train_cfg.seed)
    return train_steps(state, g, lab, train_cfg, task, aug, out_dir, label_features)


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
