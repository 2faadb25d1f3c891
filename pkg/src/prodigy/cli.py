"""Command line: pretrain, eval, gen-tasks, inspect, plot.

Exit status 0 on success, 1 on runtime or invariant failure, 2 on usage or
configuration errors.
"""

from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_run_config
from .container import ContainerError
from .evaluation import (HeadConfig, baseline_contrastive_classify,
                         baseline_contrastive_pretrain, baseline_finetune, evaluate_in_context,
                         evaluate_predictions)
from .graph import GraphParseError, GraphValidationError, load_graph, load_labeling
from .model import ModelConfig, ModelConfigError, PromptGraphModel, baseline_nopretrain
from .plotting import CURVES, PlotError, plot_curve
from .prompt import NO_AUG, PromptValidationError, assemble_prompt_graph, load_prompt_graph, \
    save_prompt_graph
from .tasks import TaskGenerationError, sample_downstream_eval, split_nodes
from .train import (CheckpointError, TrainConfigError, TrainingError, episode_family,
                    episode_rng, load_checkpoint, pretrain, resume, sample_episode,
                    save_checkpoint)

BASELINES = ("prodigy", "nopretrain", "contrastive", "finetune")
log = logging.getLogger("prodigy")


class UsageError(Exception):
    """Maps to exit status 2."""


# --------------------------------------------------------------------------
# shared plumbing

def _load_inputs(cfg: RunConfig, need_labels: bool = False):
    gp = cfg.graph
    for key in ("edges", "features", "labels", "label_features"):
        p = getattr(gp, key)
        if p and not Path(p).is_file():
            raise UsageError(f"graph {key} file not found: {p}")
    try:
        g = load_graph(gp.edges, gp.features, gp.directed, gp.num_relations)
        lab = load_labeling(gp.labels, g.num_nodes) if gp.labels else None
        lf = np.loadtxt(gp.label_features, ndmin=2) if gp.label_features else None
    except (GraphParseError, GraphValidationError, ValueError) as err:
        raise UsageError(str(err)) from None
    if need_labels and lab is None:
        raise UsageError("this command needs graph.labels in the config")
    return g, lab, lf


def _model_config(cfg: RunConfig, g, lf) -> ModelConfig:
    fields = dict(cfg.model)
    fields.setdefault("readout", "pair_pool" if cfg.task.level == "edge" else "single_node")
    if fields.get("d_in") not in (None, g.feature_dim):
        raise UsageError(f"model.d_in={fields['d_in']} but graph features have width "
                         f"{g.feature_dim}")
    fields["d_in"] = g.feature_dim
    fields.setdefault("num_relations", g.num_relations)
    fields.setdefault("directed", g.directed)
    if lf is not None:
        fields.setdefault("label_feature_dim", lf.shape[1])
    try:
        return ModelConfig(**fields)
    except (TypeError, ModelConfigError) as err:
        raise UsageError(f"model config: {err}") from None


def _out_dir(cfg: RunConfig, override) -> Path:
    out = Path(override or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --------------------------------------------------------------------------
# subcommands

def cmd_pretrain(args) -> int:
    cfg = load_run_config(args.config, _overrides(args), args.seed)
    g, lab, lf = _load_inputs(cfg)
    out = _out_dir(cfg, args.out)
    cfg.output_dir = str(out)
    cfg.write(out / "config.json")
    if args.resume:
        state = resume(args.resume, g, cfg.train, lab, out, lf)
        print(f"resumed to step {state.step}; outputs in {out}")
        return 0
    metrics = out / "metrics.csv"
    if metrics.exists():
        metrics.unlink()  # fresh run, fresh log
    if cfg.method == "contrastive":
        enc = baseline_contrastive_pretrain(g, _model_config(cfg, g, lf), cfg.train, cfg.task,
                                            cfg.aug, cfg.eval.contrastive_batch)
        path = out / f"ckpt_{cfg.train.steps}.bin"
        save_checkpoint(path, enc, None, {"step": cfg.train.steps, "seed": cfg.seed,
                                          "method": "contrastive"})
        print(f"wrote {path}")
        return 0
    state = pretrain(g, lab, _model_config(cfg, g, lf), cfg.train, cfg.task, cfg.aug, out, lf)
    print(f"trained {state.step} steps; outputs in {out}")
    return 0


def _eval_report_path(out: Path, baseline: str, m: int, k: int, explicit) -> Path:
    return Path(explicit) if explicit else out / f"report_{baseline}_m{m}_k{k}.json"


def cmd_eval(args) -> int:
    if args.baseline not in BASELINES:
        raise UsageError(f"unknown baseline {args.baseline!r}; valid: {', '.join(BASELINES)}")
    cfg = load_run_config(args.config, _overrides(args), args.seed)
    ep = cfg.eval
    for name in ("ways", "shots", "queries", "num_tasks", "pool_size"):
        if getattr(args, name) is not None:
            setattr(ep, name, getattr(args, name))
    g, lab, lf = _load_inputs(cfg, need_labels=True)

    model, meta = None, {}
    if args.checkpoint:
        try:
            model, _, meta = load_checkpoint(args.checkpoint)
        except CheckpointError as err:
            print(f"error: {err}", file=sys.stderr)
            return 1
        if model.cfg.d_in != g.feature_dim:
            raise UsageError(f"checkpoint expects feature width {model.cfg.d_in}, "
                             f"graph has {g.feature_dim}")
    elif args.baseline != "nopretrain":
        raise UsageError(f"baseline {args.baseline!r} needs --checkpoint")

    seed = cfg.seed
    split = split_nodes(lab, ep.train_fraction, seed)
    tasks = sample_downstream_eval(g, lab, split, ep.ways, ep.shots, ep.pool_size,
                                   ep.num_tasks, ep.queries, np.random.default_rng([seed, 31337]))
    echo = {"baseline": args.baseline, "m": ep.ways, "k": ep.shots, "n": ep.queries,
            "num_tasks": ep.num_tasks, "pool_size": ep.pool_size, "seed": seed,
            "train_fraction": ep.train_fraction,
            "checkpoint": str(args.checkpoint) if args.checkpoint else None,
            "checkpoint_step": meta.get("step")}
    k_hops, cap = cfg.task.k_hops, cfg.task.fanout_cap

    if args.baseline in ("prodigy", "nopretrain"):
        if args.baseline == "nopretrain":
            mcfg = model.cfg if model is not None else _model_config(cfg, g, lf)
            model = baseline_nopretrain(mcfg, seed)
        elif not isinstance(model, PromptGraphModel):
            raise UsageError("baseline 'prodigy' needs a prompt-graph checkpoint")
        report = evaluate_in_context(model, g, tasks, k_hops, cap, seed, lf, echo, args.jobs)
    else:
        enc = model.encoder if isinstance(model, PromptGraphModel) else model
        enc.eval()
        head = HeadConfig(ep.head_epochs, ep.head_lr, seed)

        def predict(task, i):
            rng = np.random.default_rng([seed, 7919, i])
            if args.baseline == "contrastive":
                return baseline_contrastive_classify(enc, task, g, k_hops, cap, rng)
            return baseline_finetune(enc, task, g, head, k_hops, cap, rng)

        report = evaluate_predictions(predict, tasks, echo, args.jobs)

    out = _out_dir(cfg, args.out_dir)
    path = _eval_report_path(out, args.baseline, ep.ways, ep.shots, args.out)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.save(path, path.with_suffix(".csv") if args.per_task else None)
    print(f"{args.baseline}: {ep.ways}-way {ep.shots}-shot accuracy "
          f"{report.mean:.4f} +/- {report.stderr:.4f} (stderr, {report.num_tasks} tasks) -> {path}")
    return 0


def cmd_gen_tasks(args) -> int:
    cfg = load_run_config(args.config, _overrides(args), args.seed)
    fam = args.family.upper()
    g, lab, _ = _load_inputs(cfg, need_labels=fam in ("MT", "EVAL") and cfg.task.level == "node")
    if fam == "EVAL":
        ep = cfg.eval
        prompts = sample_downstream_eval(g, lab, split_nodes(lab, ep.train_fraction, cfg.seed),
                                         ep.ways, ep.shots, ep.pool_size, args.count, ep.queries,
                                         np.random.default_rng([cfg.seed, 31337]))
    else:
        prompts = []
        for i in range(args.count):
            f = episode_family(cfg.train, i) if fam == "MIX" else fam
            prompts.append(sample_episode(g, lab, f, cfg.task, episode_rng(cfg.seed, i, 0)))
    sink = open(args.out, "w") if args.out else sys.stdout
    try:
        for p in prompts:
            sink.write(json.dumps(p.to_record(), sort_keys=True) + "\n")
    finally:
        if args.out:
            sink.close()
    if args.dump:
        d = Path(args.dump)
        d.mkdir(parents=True, exist_ok=True)
        aug = cfg.aug if args.augment else NO_AUG
        for i, p in enumerate(prompts):
            pg = assemble_prompt_graph(g, p.strip_labels(), cfg.task.k_hops, cfg.task.fanout_cap,
                                       aug, np.random.default_rng([cfg.seed, 4099, i]))
            save_prompt_graph(pg, d / f"prompt_{i:04d}.bin")
    return 0


def cmd_inspect(args) -> int:
    try:
        pg = load_prompt_graph(args.dump)
    except (ContainerError, OSError, KeyError, ValueError) as err:
        print(f"error: cannot read prompt dump {args.dump}: {err}", file=sys.stderr)
        return 1
    tg = pg.task_graph
    print(f"data nodes {tg.num_data} (examples {len(tg.example_index)}, queries "
          f"{len(tg.query_index)}), label nodes {tg.num_labels}, task edges {len(tg.edges)}, "
          f"level {pg.level.value}, data-graph nodes "
          f"{sum(dg.num_nodes for dg in pg.data_graphs)}")
    try:
        tg.validate(pg.k)
    except PromptValidationError as err:
        print(f"FAIL {err}")
        return 1
    print(f"OK m*k+n={tg.num_data} m={tg.num_labels} edges={len(tg.edges)}")
    return 0


def cmd_plot(args) -> int:
    paths = sorted({p for pattern in args.reports for p in glob.glob(pattern)})
    if not paths:
        raise UsageError(f"no reports match {' '.join(args.reports)}")
    try:
        csv_path = plot_curve(args.kind, paths, args.out)
    except PlotError as err:
        raise UsageError(str(err)) from None
    print(f"wrote {args.out} and {csv_path}")
    return 0


# --------------------------------------------------------------------------
# parser

def _overrides(args):
    out = list(getattr(args, "set", None) or [])
    if getattr(args, "steps", None) is not None:
        out.append(f"train.steps={args.steps}")
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="run config JSON (default: the bundled toy config)")
    p.add_argument("--seed", type=int, help="overrides the config seed and PRODIGY_SEED")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted override, e.g. --set train.lr=0.003 (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="prodigy", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="pretrain and write checkpoints + metrics.csv")
    _common(p)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--resume", help="continue from this checkpoint to train.steps")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("eval", help="few-shot evaluation on the downstream labels")
    _common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--baseline", default="prodigy", help=f"one of {', '.join(BASELINES)}")
    p.add_argument("--ways", type=int)
    p.add_argument("--shots", type=int)
    p.add_argument("--queries", type=int, help="queries per task")
    p.add_argument("--num-tasks", dest="num_tasks", type=int)
    p.add_argument("--pool-size", dest="pool_size", type=int)
    p.add_argument("--per-task", dest="per_task", action="store_true",
                   help="also write per-task accuracies as CSV")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", help="report path")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-tasks", help="stream sampled episodes as JSON lines")
    _common(p)
    p.add_argument("--family", default="nm", choices=["nm", "mt", "mix", "eval"])
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--out", help="JSONL path (default stdout)")
    p.add_argument("--dump", help="also write assembled prompt-graph dumps here")
    p.add_argument("--augment", action="store_true", help="apply the configured augmentation")
    p.set_defaults(func=cmd_gen_tasks)

    p = sub.add_parser("inspect", help="print counts and check task-graph invariants of a dump")
    p.add_argument("dump")
    p.set_defaults(func=cmd_inspect)

    p = sub.add_parser("plot", help="accuracy curve from eval reports")
    p.add_argument("kind", choices=sorted(CURVES))
    p.add_argument("reports", nargs="+", help="report paths or glob patterns")
    p.add_argument("--out", required=True, help="image path; points go to the .csv sibling")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, TrainConfigError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except (TrainingError, TaskGenerationError, CheckpointError, ContainerError,
            PromptValidationError, ModelConfigError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # anything else is a runtime failure, not a usage error
        log.debug("unhandled error", exc_info=True)
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
