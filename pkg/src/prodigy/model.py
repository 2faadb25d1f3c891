"""Two-stage prompt-graph network.

Data graphs are encoded by mean-aggregation message passing and pooled into
one vector per datapoint; the task graph then runs single-head attention
message passing between data nodes and label nodes, and queries are scored
by cosine similarity against the label nodes.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .graph import Level
from .prompt import EXAMPLE, QUERY, DataGraph, PromptGraph, TaskGraph, TaskGraphInvariantError

DTYPE = torch.float64
ROLE_EXAMPLE, ROLE_QUERY, ROLE_LABEL = EXAMPLE, QUERY, 2
EDGE_FEATURES = 3  # (is_example, is_true, is_self)


class ModelConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    d_in: int
    d: int = 256
    layers_D: int = 2
    layers_T: int | None = None
    rounds: int = 1
    readout: str = "single_node"
    tf_edge_policy: str = "positive_and_query"
    label_init: str = "seeded_gaussian"
    temperature: float = 0.1
    num_relations: int = 1
    directed: bool = False
    label_feature_dim: int | None = None
    attr_hidden: int | None = None
    bn_scope: str = "graph"
    attn_init: str = "uniform"

    def __post_init__(self):
        if self.layers_T is None:
            self.layers_T = 1 if self.readout == "single_node" else 2
        if self.d <= 0 or self.d_in <= 0:
            raise ModelConfigError("feature widths must be positive")
        if self.layers_D < 1 or self.layers_T < 1 or self.rounds < 1:
            raise ModelConfigError("depths and rounds must be >= 1")
        if self.temperature <= 0:
            raise ModelConfigError("temperature must be positive")
        if self.readout not in ("single_node", "pair_pool"):
            raise ModelConfigError(f"unknown readout {self.readout!r}")
        if self.tf_edge_policy not in ("all", "positive_and_query"):
            raise ModelConfigError(f"unknown tf_edge_policy {self.tf_edge_policy!r}")
        if self.bn_scope not in ("graph", "role"):
            raise ModelConfigError(f"unknown bn_scope {self.bn_scope!r}")
        if self.attn_init not in ("uniform", "identity"):
            raise ModelConfigError(f"unknown attn_init {self.attn_init!r}")
        if self.label_init not in ("seeded_gaussian", "provided_features"):
            raise ModelConfigError(f"unknown label_init {self.label_init!r}")

    @property
    def edge_feature_dim(self) -> int:
        return (self.num_relations if self.num_relations > 1 else 0) + int(self.directed)

    @property
    def level(self) -> Level:
        return Level.NODE if self.readout == "single_node" else Level.EDGE

    def to_dict(self) -> dict:
        return asdict(self)


# --------------------------------------------------------------------------
# batching

@dataclass
class GraphBatch:
    """Several data graphs merged into one disjoint graph."""

    x: torch.Tensor
    src: torch.Tensor
    dst: torch.Tensor
    edge_attr: torch.Tensor
    graph_of: torch.Tensor
    inputs: torch.Tensor  # (num_graphs, 1 or 2) merged node indices
    offsets: np.ndarray
    num_graphs: int

    @property
    def num_nodes(self) -> int:
        return self.x.shape[0]


def collate(graphs, cfg: ModelConfig) -> GraphBatch:
    sizes = [dg.num_nodes for dg in graphs]
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    x = np.concatenate([dg.features for dg in graphs]) if graphs else np.zeros((0, cfg.d_in))
    if x.shape[1] != cfg.d_in:
        raise ModelConfigError(f"feature width {x.shape[1]} does not match d_in={cfg.d_in}")
    edges = [dg.local_edges + np.array([off, 0, off]) for dg, off in zip(graphs, offsets)]
    e = np.concatenate(edges) if edges else np.zeros((0, 3), dtype=np.int64)
    u, r, v = e[:, 0], e[:, 1], e[:, 2]
    src, dst = np.concatenate([u, v]), np.concatenate([v, u])
    parts = []
    if cfg.num_relations > 1:
        onehot = np.eye(cfg.num_relations)[r]
        parts.append(np.concatenate([onehot, onehot]))
    if cfg.directed:
        parts.append(np.concatenate([np.zeros(len(e)), np.ones(len(e))])[:, None])
    attr = np.concatenate(parts, axis=1) if parts else np.zeros((2 * len(e), 0))
    width = max(len(dg.input_local) for dg in graphs) if graphs else 1
    inputs = np.array([[off + i for i in dg.input_local] for dg, off in zip(graphs, offsets)]
                      ).reshape(len(graphs), width)
    return GraphBatch(
        x=torch.as_tensor(x, dtype=DTYPE),
        src=torch.as_tensor(src, dtype=torch.long),
        dst=torch.as_tensor(dst, dtype=torch.long),
        edge_attr=torch.as_tensor(attr, dtype=DTYPE),
        graph_of=torch.as_tensor(np.repeat(np.arange(len(graphs)), sizes), dtype=torch.long),
        inputs=torch.as_tensor(inputs, dtype=torch.long),
        offsets=offsets,
        num_graphs=len(graphs),
    )


# --------------------------------------------------------------------------
# modules

def _reset_linear(lin: nn.Linear, gen: torch.Generator) -> None:
    bound = 1.0 / np.sqrt(lin.in_features)
    with torch.no_grad():
        lin.weight.uniform_(-bound, bound, generator=gen)
        if lin.bias is not None:
            lin.bias.uniform_(-bound, bound, generator=gen)


class MeanConv(nn.Module):
    """h_v <- ReLU(W_self h_v + W_nbr mean_{u->v}[h_u || e_uv] + b)."""

    def __init__(self, d_in: int, d_out: int, edge_dim: int):
        super().__init__()
        self.self_lin = nn.Linear(d_in, d_out, dtype=DTYPE)
        self.nbr_lin = nn.Linear(d_in + edge_dim, d_out, bias=False, dtype=DTYPE)

    def forward(self, h, src, dst, edge_attr):
        msg = torch.cat([h[src], edge_attr], dim=1)
        agg = torch.zeros(h.shape[0], msg.shape[1], dtype=h.dtype).index_add(0, dst, msg)
        deg = torch.zeros(h.shape[0], dtype=h.dtype).index_add(
            0, dst, torch.ones(len(dst), dtype=h.dtype))
        agg = agg / deg.clamp(min=1.0)[:, None]
        return F.relu(self.self_lin(h) + self.nbr_lin(agg))


class DataGraphEncoder(nn.Module):
    """Node encoder over data graphs plus the per-graph readout."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        widths = [cfg.d_in] + [cfg.d] * cfg.layers_D
        self.convs = nn.ModuleList(
            MeanConv(a, b, cfg.edge_feature_dim) for a, b in zip(widths[:-1], widths[1:]))
        self.edge_proj = (nn.Linear(3 * cfg.d, cfg.d, dtype=DTYPE)
                          if cfg.readout == "pair_pool" else None)

    def encode(self, batch: GraphBatch) -> torch.Tensor:
        h = batch.x
        for conv in self.convs:
            h = conv(h, batch.src, batch.dst, batch.edge_attr)
        return h

    def readout(self, E: torch.Tensor, batch: GraphBatch) -> torch.Tensor:
        if self.cfg.readout == "single_node":
            if batch.inputs.shape[1] != 1:
                raise ValueError("single-node readout needs node-level data graphs")
            return E[batch.inputs[:, 0]]
        if batch.inputs.shape[1] != 2:
            raise ValueError("pair readout needs edge-level data graphs")
        pooled = torch.full((batch.num_graphs, E.shape[1]), -torch.inf, dtype=E.dtype)
        pooled = pooled.scatter_reduce(0, batch.graph_of[:, None].expand_as(E), E, "amax")
        cat = torch.cat([E[batch.inputs[:, 0]], E[batch.inputs[:, 1]], pooled], dim=1)
        return self.edge_proj(cat)

    def embed(self, graphs, return_nodes: bool = False):
        batch = collate(graphs, self.cfg)
        E = self.encode(batch)
        G = self.readout(E, batch)
        return (G, E, batch) if return_nodes else G

    def reset_parameters(self, gen: torch.Generator) -> None:
        for mod in self.modules():
            if isinstance(mod, nn.Linear):
                _reset_linear(mod, gen)


class RoleBatchNorm(nn.Module):
    """Batch norm over task-graph nodes.

    With ``scope="graph"`` statistics pool every node of the task graph; with
    ``scope="role"`` they are kept separately for examples, queries and
    labels. A group with a single member is passed through unnormalized
    (scale and shift only).
    """

    def __init__(self, d: int, scope: str = "graph", momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.scope = scope
        num_roles = 3 if scope == "role" else 1
        self.weight = nn.Parameter(torch.ones(d, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(d, dtype=DTYPE))
        self.register_buffer("running_mean", torch.zeros(num_roles, d, dtype=DTYPE))
        self.register_buffer("running_var", torch.ones(num_roles, d, dtype=DTYPE))
        self.momentum, self.eps = momentum, eps

    def forward(self, x, roles):
        if self.scope != "role":
            roles = torch.zeros_like(roles)
        out = torch.empty_like(x)
        for r in range(self.running_mean.shape[0]):
            idx = torch.nonzero(roles == r).flatten()
            if len(idx) == 0:
                continue
            xr = x[idx]
            if self.training:
                if len(idx) == 1:
                    out[idx] = xr
                    continue
                mean, var = xr.mean(0), xr.var(0, unbiased=False)
                with torch.no_grad():
                    self.running_mean[r].mul_(1 - self.momentum).add_(self.momentum * mean)
                    self.running_var[r].mul_(1 - self.momentum).add_(
                        self.momentum * xr.var(0, unbiased=True))
            else:
                mean, var = self.running_mean[r], self.running_var[r]
            out[idx] = (xr - mean) / torch.sqrt(var + self.eps)
        return out * self.weight + self.bias


class TaskGraphAttention(nn.Module):
    """One attention message-passing layer over the task graph.

    beta_ij = MLP(W_q h_i || W_k h_j || e_ij), alpha = softmax of beta over the
    in-neighbors of i plus i itself, h_i <- ReLU(BN(h_i + W_o sum_j alpha_ij W_v h_j)).
    """

    def __init__(self, d: int, bn_scope: str = "graph"):
        super().__init__()
        self.wq = nn.Linear(d, d, bias=False, dtype=DTYPE)
        self.wk = nn.Linear(d, d, bias=False, dtype=DTYPE)
        self.wv = nn.Linear(d, d, bias=False, dtype=DTYPE)
        self.wo = nn.Linear(d, d, bias=False, dtype=DTYPE)
        self.score = nn.Sequential(nn.Linear(2 * d + EDGE_FEATURES, d, dtype=DTYPE), nn.ReLU(),
                                   nn.Linear(d, 1, dtype=DTYPE))
        self.bn = RoleBatchNorm(d, bn_scope)

    def forward(self, h, arcs, roles):
        src, dst, e = arcs
        beta = self.score(torch.cat([self.wq(h)[dst], self.wk(h)[src], e], dim=1)).squeeze(1)
        top = torch.full((h.shape[0],), -torch.inf, dtype=h.dtype)
        top = top.scatter_reduce(0, dst, beta.detach(), "amax")
        w = torch.exp(beta - top[dst])
        den = torch.zeros(h.shape[0], dtype=h.dtype).index_add(0, dst, w)
        alpha = w / den[dst]
        msg = torch.zeros_like(h).index_add(0, dst, alpha[:, None] * self.wv(h)[src])
        return F.relu(self.bn(h + self.wo(msg), roles)), alpha


def task_arcs(tg: TaskGraph, policy: str = "all"):
    """Directed arcs (src, dst, edge features) of the task graph plus self-loops.

    Data nodes are numbered first, then label nodes. Example edges run both
    ways; query edges only label -> query.
    """
    D, m = tg.num_data, tg.num_labels
    e = tg.edges
    if policy == "positive_and_query":
        e = e[(e[:, 2] == 0) | (e[:, 3] == 1)]
    data, lab = e[:, 0], e[:, 1] + D
    ex = e[:, 2] == 1
    q = tg.query_index
    if len(q) and np.bincount(data[~ex], minlength=D)[q].min() < m:
        raise TaskGraphInvariantError("query-in-degree", "a query lost its label -> query arcs")
    feats = np.stack([e[:, 2], e[:, 3], np.zeros(len(e))], axis=1).astype(np.float64)
    n_all = D + m
    src = np.concatenate([lab, data[ex], np.arange(n_all)])
    dst = np.concatenate([data, lab[ex], np.arange(n_all)])
    attr = np.concatenate([feats, feats[ex], np.tile([0.0, 0.0, 1.0], (n_all, 1))])
    return (torch.as_tensor(src, dtype=torch.long), torch.as_tensor(dst, dtype=torch.long),
            torch.as_tensor(attr, dtype=DTYPE))


def task_roles(tg: TaskGraph) -> torch.Tensor:
    return torch.as_tensor(np.concatenate([tg.roles, np.full(tg.num_labels, ROLE_LABEL)]),
                           dtype=torch.long)


@dataclass
class ForwardOutput:
    logits: torch.Tensor
    attr_losses: torch.Tensor
    H: torch.Tensor
    diagnostics: dict = field(default_factory=dict)
    attention: list = field(default_factory=list)


class PromptGraphModel(nn.Module):
    def __init__(self, cfg: ModelConfig, seed: int = 0):
        super().__init__()
        self.cfg = cfg
        self.encoder = DataGraphEncoder(cfg)
        self.task_layers = nn.ModuleList(TaskGraphAttention(cfg.d, cfg.bn_scope) for _ in range(cfg.layers_T))
        hidden = cfg.attr_hidden or cfg.d
        self.attr_head = nn.Sequential(nn.Linear(cfg.d, hidden, dtype=DTYPE), nn.ReLU(),
                                       nn.Linear(hidden, cfg.d_in, dtype=DTYPE))
        self.label_proj = None
        if cfg.label_init == "provided_features" and cfg.label_feature_dim not in (None, cfg.d):
            self.label_proj = nn.Linear(cfg.label_feature_dim, cfg.d, dtype=DTYPE)
        self.reset_parameters(seed)

    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(int(seed))
        for mod in self.modules():
            if isinstance(mod, nn.Linear):
                _reset_linear(mod, gen)
            elif isinstance(mod, RoleBatchNorm):
                with torch.no_grad():
                    mod.weight.fill_(1.0)
                    mod.bias.zero_()
                    mod.running_mean.zero_()
                    mod.running_var.fill_(1.0)
        if self.cfg.attn_init == "identity":
            # value and output maps start as the identity, so a label node
            # begins as its init plus the mean of its examples
            eye = torch.eye(self.cfg.d, dtype=DTYPE)
            with torch.no_grad():
                for layer in self.task_layers:
                    layer.wv.weight.copy_(eye)
                    layer.wo.weight.copy_(eye)

    # single-graph helpers -------------------------------------------------

    def encode_data_graph(self, dg: DataGraph) -> torch.Tensor:
        return self.encoder.encode(collate([dg], self.cfg))

    def readout_edge(self, E: torch.Tensor, dg: DataGraph) -> torch.Tensor:
        return readout_edge(self, E, dg)

    def attr_loss(self, dg: DataGraph, E: torch.Tensor) -> torch.Tensor:
        return attr_loss(self, dg, E)

    # composition ----------------------------------------------------------

    def task_message_pass(self, tg: TaskGraph, data_embeds, label_embeds,
                          return_attention: bool = False):
        if data_embeds.shape[0] != tg.num_data or label_embeds.shape[0] != tg.num_labels:
            raise ValueError("embeddings are not aligned with the task graph")
        arcs = task_arcs(tg, self.cfg.tf_edge_policy)
        roles = task_roles(tg)
        h = torch.cat([data_embeds, label_embeds], dim=0)
        attn = []
        for layer in self.task_layers:
            h, alpha = layer(h, arcs, roles)
            attn.append((arcs[1], alpha))
        return (h, attn) if return_attention else h

    def forward(self, pg: PromptGraph, label_features=None) -> ForwardOutput:
        batch = collate(pg.data_graphs, self.cfg)
        E = self.encoder.encode(batch)
        G = self.encoder.readout(E, batch)
        L = init_label_embeddings(self.cfg, pg.m, pg.class_meta, pg.label_seed,
                                  label_features, self.label_proj)
        tg = pg.task_graph
        D = tg.num_data
        h, attention = G, []
        labels = L
        for r in range(self.cfg.rounds):
            data_in = h if r == 0 else h + G
            H, attn = self.task_message_pass(tg, data_in, labels, return_attention=True)
            h, labels = H[:D], H[D:]
            attention.extend(attn)
        H = torch.cat([h, labels], dim=0)
        logits, zero = predict_logits(H[torch.as_tensor(tg.query_index)], labels,
                                      self.cfg.temperature, return_zero_count=True)
        attr = torch.stack([_attr_loss_rows(self, dg, E[batch.offsets[i]:batch.offsets[i + 1]])
                            for i, dg in enumerate(pg.data_graphs)])
        return ForwardOutput(logits, attr, H, {"zero_norm_rows": zero}, attention)


def init_label_embeddings(cfg: ModelConfig, m: int, class_meta, label_seed: int,
                          label_features=None, proj: nn.Module | None = None) -> torch.Tensor:
    """Initial label-node embeddings, one row per class.

    ``seeded_gaussian`` rows are N(0, 1/d) draws keyed by the prompt's label
    seed and the class identity, so reordering classes reorders rows.
    ``provided_features`` looks up ``label_features[class_meta[c]]``.
    """
    if cfg.label_init == "seeded_gaussian":
        rows = [np.random.default_rng([int(label_seed), int(c)]).normal(0.0, np.sqrt(1.0 / cfg.d),
                                                                       cfg.d)
                for c in class_meta[:m]]
        return torch.as_tensor(np.array(rows).reshape(m, cfg.d), dtype=DTYPE)
    if label_features is None:
        raise ModelConfigError("label_init='provided_features' needs class feature vectors")
    feats = torch.as_tensor(np.asarray(label_features)[list(class_meta[:m])], dtype=DTYPE)
    if proj is not None:
        return proj(feats)
    if feats.shape[1] != cfg.d:
        raise ModelConfigError(f"class features have width {feats.shape[1]}, expected {cfg.d}")
    return feats


def readout_node(E: torch.Tensor, dg: DataGraph) -> torch.Tensor:
    if dg.level is not Level.NODE:
        raise ValueError("readout_node needs a node-level data graph")
    return E[dg.input_local[0]]


def readout_edge(model, E: torch.Tensor, dg: DataGraph) -> torch.Tensor:
    if dg.level is not Level.EDGE:
        raise ValueError("readout_edge needs an edge-level data graph")
    enc = model.encoder if isinstance(model, PromptGraphModel) else model
    v1, v2 = dg.input_local
    return enc.edge_proj(torch.cat([E[v1], E[v2], E.max(dim=0).values]))


def predict_logits(H_query, H_labels, temperature: float = 1.0, return_zero_count=False):
    """Cosine similarity of every query row against every label row, divided by temperature.

    Zero-norm rows get cosine 0 against everything.
    """
    eps = 1e-12
    qn = H_query.norm(dim=1, keepdim=True)
    ln = H_labels.norm(dim=1, keepdim=True)
    zero = int((qn <= eps).sum() + (ln <= eps).sum())
    cos = (H_query / qn.clamp(min=eps)) @ (H_labels / ln.clamp(min=eps)).T
    out = cos / temperature
    return (out, zero) if return_zero_count else out


def _attr_loss_rows(model, dg: DataGraph, E: torch.Tensor) -> torch.Tensor:
    if len(dg.masked_local) == 0:
        return torch.zeros((), dtype=E.dtype)
    idx = torch.as_tensor(dg.masked_local, dtype=torch.long)
    target = torch.as_tensor(dg.masked_original, dtype=E.dtype)
    err = ((model.attr_head(E[idx]) - target) ** 2).mean(dim=1)
    return err.sum() / dg.num_nodes


def attr_loss(model, dg: DataGraph, E: torch.Tensor) -> torch.Tensor:
    """Masked-feature reconstruction error: sum of per-row MSE over masked nodes / node count."""
    return _attr_loss_rows(model, dg, E)


def baseline_nopretrain(cfg: ModelConfig, seed: int = 0) -> PromptGraphModel:
    """Freshly initialized model of the same architecture."""
    return PromptGraphModel(cfg, seed=seed)
