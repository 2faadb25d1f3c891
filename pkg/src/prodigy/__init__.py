"""In-context few-shot learning over graphs with prompt graphs.

A few-shot prompt (m classes, k examples each, plus queries) is turned into a
prompt graph: one sampled neighborhood per datapoint, joined to label nodes
by a bipartite task graph. A GNN embeds each neighborhood, attention over the
task graph mixes examples, queries and labels, and queries are classified by
cosine similarity to the label nodes.
"""

from .graph import (Datapoint, Graph, Level, NodeLabeling, exact_hop_neighbors, hop_distances,
                    khop_union, load_graph, load_labeling, synth_planted_graph,
                    synth_relational_graph)
from .prompt import (NO_AUG, AugConfig, DataGraph, PromptGraph, TaskGraph,
                     assemble_prompt_graph, build_task_graph, contextualize, drop_node,
                     load_prompt_graph, mask_node, save_prompt_graph)
from .tasks import (FewShotPrompt, sample_downstream_eval, sample_mt_edge, sample_mt_node,
                    sample_nm_edge, sample_nm_node, split_nodes)
from .model import ModelConfig, PromptGraphModel, baseline_nopretrain, predict_logits
from .train import TaskConfig, TrainConfig, load_checkpoint, pretrain, resume, save_checkpoint
from .evaluation import (EvalReport, baseline_contrastive_classify, baseline_contrastive_pretrain,
                         baseline_finetune, evaluate_in_context)

__version__ = "0.1.0"
