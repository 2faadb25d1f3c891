import json
import shutil

import numpy as np
import pytest

from prodigy.cli import main
from prodigy.config import load_run_config, toy_config_path
from prodigy.evaluation import EvalReport
from prodigy.prompt import TaskGraph, load_prompt_graph, save_prompt_graph
from prodigy.train import read_metrics


@pytest.fixture
def cfg_path(tmp_path):
    """The bundled toy config with small, fast settings, copied next to its data."""
    src = toy_config_path().parent
    for name in ("edges.tsv", "features.txt", "labels.tsv"):
        shutil.copy(src / name, tmp_path / name)
    doc = json.loads(toy_config_path().read_text())
    doc["model"] = {"d": 8}
    doc["output_dir"] = str(tmp_path / "run")
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    return path


def _rows(path):
    return [{k: v for k, v in r.items() if k != "wall_ms"} for r in read_metrics(path)]


@pytest.fixture
def trained(cfg_path, tmp_path):
    assert main(["pretrain", "--config", str(cfg_path), "--steps", "10",
                 "--out", str(tmp_path / "run")]) == 0
    return tmp_path / "run"


# ---------------------------------------------------------------- pretrain

def test_pretrain_outputs(trained):
    assert sorted(p.name for p in trained.glob("ckpt_*.bin")) == ["ckpt_10.bin"]
    assert len(read_metrics(trained / "metrics.csv")) == 10
    echo = json.loads((trained / "config.json").read_text())
    assert echo["train"]["steps"] == 10 and echo["seed"] == 0


def test_config_echo_reproduces_run(trained, tmp_path):
    assert main(["pretrain", "--config", str(trained / "config.json"),
                 "--out", str(tmp_path / "again")]) == 0
    assert _rows(trained / "metrics.csv") == _rows(tmp_path / "again" / "metrics.csv")


def test_seed_flag_deterministic(cfg_path, tmp_path):
    for d in ("a", "b"):
        assert main(["pretrain", "--config", str(cfg_path), "--steps", "5", "--seed", "7",
                     "--out", str(tmp_path / d)]) == 0
    assert _rows(tmp_path / "a" / "metrics.csv") == _rows(tmp_path / "b" / "metrics.csv")
    assert json.loads((tmp_path / "a" / "config.json").read_text())["seed"] == 7


def test_env_seed_fallback(cfg_path, monkeypatch):
    doc = json.loads(cfg_path.read_text())
    del doc["seed"]
    cfg_path.write_text(json.dumps(doc))
    monkeypatch.setenv("PRODIGY_SEED", "11")
    assert load_run_config(cfg_path).seed == 11
    assert load_run_config(cfg_path, seed=3).seed == 3


def test_missing_graph_file(cfg_path, capsys):
    assert main(["pretrain", "--config", str(cfg_path), "--set", "graph.edges=nope.tsv"]) == 2
    assert "not found" in capsys.readouterr().err


@pytest.mark.parametrize("bad", [["--set", "train.lr"], ["--set", "train.bogus=1"],
                                 ["--set", "train.lr=-1"]])
def test_bad_config(cfg_path, bad):
    assert main(["pretrain", "--config", str(cfg_path), *bad]) == 2


def test_contrastive_method(cfg_path, tmp_path):
    assert main(["pretrain", "--config", str(cfg_path), "--steps", "2",
                 "--set", "method=contrastive", "--set", "eval.contrastive_batch=4",
                 "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "ckpt_2.bin").exists()


# ---------------------------------------------------------------- eval

def test_eval_default_report(trained, cfg_path):
    assert main(["eval", "--config", str(cfg_path), "--checkpoint",
                 str(trained / "ckpt_10.bin"), "--per-task"]) == 0
    rep = json.loads((trained / "report_prodigy_m3_k3.json").read_text())
    assert rep["num_tasks"] == 500 and len(rep["per_task_accuracy"]) == 500
    assert rep["config"]["k"] == 3 and rep["config"]["checkpoint_step"] == 10
    assert (trained / "report_prodigy_m3_k3.csv").exists()


def test_eval_echoes_flags(trained, cfg_path, tmp_path):
    out = tmp_path / "r.json"
    assert main(["eval", "--config", str(cfg_path), "--checkpoint", str(trained / "ckpt_10.bin"),
                 "--ways", "3", "--shots", "3", "--num-tasks", "50", "--out", str(out)]) == 0
    cfg = json.loads(out.read_text())["config"]
    assert (cfg["m"], cfg["k"], cfg["num_tasks"]) == (3, 3, 50)


@pytest.mark.parametrize("baseline", ["nopretrain", "contrastive", "finetune"])
def test_eval_baselines(trained, cfg_path, tmp_path, baseline):
    out = tmp_path / f"{baseline}.json"
    assert main(["eval", "--config", str(cfg_path), "--checkpoint", str(trained / "ckpt_10.bin"),
                 "--baseline", baseline, "--num-tasks", "5", "--jobs", "2",
                 "--out", str(out)]) == 0
    assert len(EvalReport.load(out).accuracies) == 5


def test_unknown_baseline(cfg_path, capsys):
    assert main(["eval", "--config", str(cfg_path), "--baseline", "bogus"]) == 2
    assert "prodigy, nopretrain, contrastive, finetune" in capsys.readouterr().err


def test_width_mismatch(trained, cfg_path, tmp_path):
    np.savetxt(tmp_path / "wide.txt", np.zeros((120, 5)))
    assert main(["eval", "--config", str(cfg_path), "--checkpoint", str(trained / "ckpt_10.bin"),
                 "--set", f"graph.features={tmp_path / 'wide.txt'}"]) == 2


def test_eval_repeatable(trained, cfg_path, tmp_path):
    outs = [tmp_path / f"{i}.json" for i in range(2)]
    for o in outs:
        assert main(["eval", "--config", str(cfg_path), "--checkpoint",
                     str(trained / "ckpt_10.bin"), "--num-tasks", "20", "--out", str(o)]) == 0
    assert outs[0].read_bytes() == outs[1].read_bytes()


# ---------------------------------------------------------------- plot

def _report(path, m, k, accs):
    EvalReport(accs, {"m": m, "k": k, "checkpoint_step": 100 * k}).save(path)


def test_shots_curve(tmp_path):
    for k in (1, 2, 3, 5):
        _report(tmp_path / f"r{k}.json", 3, k, [0.3 + 0.1 * k, 0.4 + 0.1 * k])
    out = tmp_path / "curve.png"
    assert main(["plot", "shots_curve", str(tmp_path / "r*.json"), "--out", str(out)]) == 0
    rows = (tmp_path / "curve.csv").read_text().splitlines()
    assert len(rows) == 5 and [float(r.split(",")[0]) for r in rows[1:]] == [1, 2, 3, 5]
    assert out.stat().st_size > 0


def test_steps_curve(tmp_path):
    for k in (1, 2):
        _report(tmp_path / f"r{k}.json", 3, k, [0.5, 0.6])
    assert main(["plot", "steps_curve", str(tmp_path / "r*.json"),
                 "--out", str(tmp_path / "s.svg")]) == 0
    assert "100.0" in (tmp_path / "s.csv").read_text()


def test_plot_guards(tmp_path):
    _report(tmp_path / "a.json", 3, 1, [0.5])
    assert main(["plot", "shots_curve", str(tmp_path / "a.json"), "--out",
                 str(tmp_path / "x.png")]) == 2
    _report(tmp_path / "b.json", 2, 3, [0.5])
    assert main(["plot", "shots_curve", str(tmp_path / "*.json"), "--out",
                 str(tmp_path / "x.png")]) == 2
    assert main(["plot", "shots_curve", str(tmp_path / "none*.json"), "--out",
                 str(tmp_path / "x.png")]) == 2


# ---------------------------------------------------------------- gen-tasks / inspect

def test_gen_tasks_count(cfg_path, tmp_path):
    out = tmp_path / "t.jsonl"
    assert main(["gen-tasks", "--config", str(cfg_path), "--count", "5", "--out", str(out)]) == 0
    recs = [json.loads(line) for line in out.read_text().splitlines()]
    assert len(recs) == 5 and all({"class_meta", "examples", "queries"} <= set(r) for r in recs)


def test_gen_tasks_deterministic(cfg_path, tmp_path):
    for name in ("a", "b"):
        assert main(["gen-tasks", "--config", str(cfg_path), "--family", "mix", "--count", "4",
                     "--seed", "3", "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()


def test_inspect_fresh_and_corrupted(cfg_path, tmp_path, capsys):
    assert main(["gen-tasks", "--config", str(cfg_path), "--count", "1",
                 "--out", str(tmp_path / "t.jsonl"), "--dump", str(tmp_path / "d")]) == 0
    dump = tmp_path / "d" / "prompt_0000.bin"
    capsys.readouterr()
    assert main(["inspect", str(dump)]) == 0
    # toy config: m=3, k=3, n=4 -> two queries per class
    assert "OK m*k+n=15 m=3 edges=45" in capsys.readouterr().out

    pg = load_prompt_graph(dump)
    e = pg.task_graph.edges.copy()
    row = int(np.flatnonzero((e[:, 0] == 0) & (e[:, 3] == 0))[0])
    e[row, 3] = 1
    from dataclasses import replace
    bad = replace(pg, task_graph=TaskGraph(pg.task_graph.roles, pg.m, e))
    save_prompt_graph(bad, tmp_path / "bad.bin")
    assert main(["inspect", str(tmp_path / "bad.bin")]) == 1
    assert "one-true-edge" in capsys.readouterr().out

    (tmp_path / "junk.bin").write_bytes(b"PRDGPGRF" + b"\x00" * 5)
    assert main(["inspect", str(tmp_path / "junk.bin")]) == 1


def test_usage_error_exit_code():
    assert main(["frobnicate"]) == 2
