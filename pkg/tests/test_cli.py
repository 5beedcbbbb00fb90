import json
import subprocess
import sys
import textwrap

import pytest

from archlab.cli.main import EXIT_ABORT, EXIT_INVALID, EXIT_OK, main
from archlab.cli.runner import RunManifest
from archlab.cli.spec import SpecError, parse_experiment, parse_matrix
from archlab.eval import save_tasks, toy_task_suite

RECIPE = """\
format_version: 1
name: recipe
model: {d_model: 16, n_heads: 2, d_ff: 24, decoder_layers: 1}
corpus: {synthetic: {n_docs: 300, seed: 0}}
stages:
  - {arch: CD, objective: FLM, budget: 512, seq_len: 32, batch_size: 4, validation_batches: 1}
  - {arch: ND, objective: MLM, budget: 256, seq_len: 32, batch_size: 4, validation_batches: 1}
  - {arch: ND, objective: MTF, budget: 256, seq_len: 32, batch_size: 4}
eval: {tasks: {toy: [continue], n_examples: 4}, marks: [0.5, 1.0]}
"""

MATRIX = """\
format_version: 1
name: m
budget: 256
model: {d_model: 16, n_heads: 2, d_ff: 24, decoder_layers: 1}
corpus: {synthetic: {n_docs: 300}}
stage: {seq_len: 32, batch_size: 4, validation_batches: 1}
eval: {tasks: {toy: [member], n_examples: 4}, marks: [1.0]}
"""


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(textwrap.dedent(text))
    return p


@pytest.fixture(scope="module")
def recipe_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("runs")
    spec = write(root, "spec.yaml", RECIPE)
    codes = [main(["run", "--spec", str(spec), "--out", str(root / d)]) for d in ("a", "b")]
    return root, codes


def test_run_is_bit_reproducible(recipe_runs):
    root, codes = recipe_runs
    assert codes == [EXIT_OK, EXIT_OK]
    a = RunManifest.load(root / "a" / "recipe" / "manifest.json")
    b = RunManifest.load(root / "b" / "recipe" / "manifest.json")
    assert a.status == "complete" and a.content_hash() == b.content_hash()
    for rel in ["checkpoints/02_ND_MTF.ckpt", "metrics/00_CD_FLM.jsonl", "reports/eval_mark_768.json"]:
        assert (root / "a" / "recipe" / rel).read_bytes() == (root / "b" / "recipe" / rel).read_bytes()


def test_run_layout(recipe_runs):
    run = recipe_runs[0] / "a" / "recipe"
    labels = [e["label"] for e in RunManifest.load(run / "manifest.json").evals]
    assert labels == ["mark_384", "mark_768", "after_02_ND_MTF"]
    assert (run / "spec.json").is_file()


def test_rerun_into_same_directory_is_rejected(recipe_runs, tmp_path):
    root, _ = recipe_runs
    spec = write(tmp_path, "spec.yaml", RECIPE)
    assert main(["run", "--spec", str(spec), "--out", str(root / "a")]) == EXIT_INVALID


def test_inspect_and_eval(recipe_runs, tmp_path, capsys):
    ckpt = recipe_runs[0] / "a" / "recipe" / "checkpoints" / "01_ND_MLM.ckpt"
    assert main(["inspect", str(ckpt)]) == EXIT_OK
    header = json.loads(capsys.readouterr().out)
    assert header["arch"] == "ND" and "tensors" not in header
    tasks = tmp_path / "tasks.json"
    save_tasks([toy_task_suite(4, 0)["first"]], tasks)
    out = tmp_path / "report.json"
    assert main(["eval", str(ckpt), "--tasks", str(tasks), "--out", str(out)]) == EXIT_OK
    assert json.loads(out.read_text())["policy"] == "median_then_mean"
    assert main(["eval", str(ckpt), "--tasks", str(tasks), "--precision", "low"]) == EXIT_INVALID


def test_report(recipe_runs, tmp_path):
    root, _ = recipe_runs
    out = tmp_path / "rep"
    assert main(["report", str(root / "a" / "recipe"), "--out", str(out)]) == EXIT_OK
    loss = (out / "loss_curves.csv").read_text().splitlines()
    assert loss[0] == "run,stage,stage_index,stage_tokens_seen,tokens_seen,val_loss"
    assert len(loss) > 3
    assert "median_then_mean" in (out / "eval_bars.csv").read_text()
    assert main(["report", str(tmp_path / "nowhere"), "--out", str(out)]) == EXIT_INVALID


def test_matrix_runs_all_six_pairs(tmp_path):
    spec = write(tmp_path, "m.yaml", MATRIX)
    assert main(["matrix", "--spec", str(spec), "--out", str(tmp_path / "o"), "--precision", "low"]) == EXIT_OK
    rows = (tmp_path / "o" / "comparison.csv").read_text().splitlines()
    assert len(rows) == 1 + 6
    assert {r.split(",")[0] for r in rows[1:]} == {f"m-{p}" for p in
                                                    ("CD-FLM", "CD-MLM", "ND-PLM", "ND-MLM", "ED-PLM", "ED-MLM")}


@pytest.mark.parametrize("body,match", [
    ("format_version: 1\nname: x\nstages: []\n", "stage"),
    ("format_version: 2\nname: x\nstages: [{arch: CD, objective: FLM, budget: 1}]\n", "format_version"),
    ("format_version: 1\nname: x\nstages: [{arch: CD, objective: PLM, budget: 1}]\n", "CD:PLM"),
    ("format_version: 1\nname: x\nstages: [{arch: CD, objective: FLM, budget: 1, lr: 2}]\n", "lr"),
    ("format_version: 1\nname: x\nstages: [{arch: CD, objective: FLM, budget: 10},"
     " {arch: ED, objective: MLM, budget: 10}]\n", "no parameter mapping"),
    ("format_version: 1\nname: x\nstages: [{arch: CD, objective: MTF, budget: 10}]\n", "pretrain"),
])
def test_spec_validation(body, match):
    import yaml

    with pytest.raises(SpecError, match=match):
        parse_experiment(yaml.safe_load(body))


def test_matrix_validation():
    with pytest.raises(SpecError):
        parse_matrix({"format_version": 1, "name": "m", "budget": 10, "pairs": ["ED:FLM"]})
    assert len(parse_matrix({"format_version": 1, "name": "m", "budget": 10})) == 6


def test_validation_error_exit_code(tmp_path, capsys):
    spec = write(tmp_path, "bad.yaml", "format_version: 1\nname: x\nstages: []\n")
    assert main(["run", "--spec", str(spec), "--out", str(tmp_path)]) == EXIT_INVALID
    assert "validation error" in capsys.readouterr().err
    assert main(["run", "--spec", str(tmp_path / "missing.yaml")]) == EXIT_INVALID
    assert main(["frobnicate"]) == EXIT_INVALID


def test_runtime_abort_exit_code(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage")
    assert main(["inspect", str(bad)]) == EXIT_ABORT


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "archlab", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "matrix" in res.stdout
