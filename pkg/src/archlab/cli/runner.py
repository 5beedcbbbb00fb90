"""Executing experiment specs into run directories with manifests."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from ..eval.report import EvalReport, evaluate
from ..trainer.checkpoint import Checkpoint, fresh_checkpoint, save_checkpoint
from ..trainer.convert import convert
from ..trainer.finetune import multitask_finetune
from ..trainer.stage import TrainingAborted, read_metrics, run_stage
from .spec import ExperimentSpec, SpecError

MANIFEST = "manifest.json"


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


@dataclass
class RunManifest:
    """Paths are relative to the run directory; ``wall_clock_s`` is the only
    field that varies between identical runs."""

    name: str
    spec_hash: str
    stages: list[dict]
    evals: list[dict]
    status: str = "running"
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "name": self.name, "spec_hash": self.spec_hash, "stages": self.stages,
            "evals": self.evals, "status": self.status, "error": self.error,
        }

    def content_hash(self) -> str:
        """Hash over everything except wall-clock fields."""
        d = self.to_dict()
        d["stages"] = [{k: v for k, v in s.items() if k != "wall_clock_s"} for s in d["stages"]]
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text(encoding="utf-8")))


class Runner:
    def __init__(self, spec: ExperimentSpec, out_root: str | Path):
        self.spec = spec
        self.dir = Path(out_root) / spec.name
        if (self.dir / MANIFEST).exists():
            raise SpecError(f"name: run {spec.name!r} already exists under {out_root}")
        self.manifest = RunManifest(spec.name, spec.digest(), [], [])
        self.tasks = spec.eval.tasks.load() if spec.eval else []

    def _write_manifest(self) -> None:
        (self.dir / MANIFEST).write_text(_dump(self.manifest.to_dict()), encoding="utf-8")

    def _eval(self, label: str, ckpt: Checkpoint) -> None:
        ev = self.spec.eval
        path = self.dir / "reports" / f"eval_{label}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        report = evaluate(ckpt, self.tasks, ev.policy, ev.scoring)
        report.save(path)
        self.manifest.evals.append({
            "label": label, "report": str(path.relative_to(self.dir)), "sha256": file_digest(path),
            "cumulative_tokens_seen": ckpt.tokens_seen, **{f"aggregate_{k}": v for k, v in report.aggregates.items()},
        })
        self._write_manifest()

    def run(self) -> RunManifest:
        spec = self.spec
        (self.dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        (self.dir / "metrics").mkdir(parents=True, exist_ok=True)
        (self.dir / "spec.json").write_text(_dump(spec.to_dict()), encoding="utf-8")
        self._write_manifest()
        first = spec.stages[0].stage
        ckpt = fresh_checkpoint(spec.model, first.arch, first.seed)
        total = spec.pretraining_budget
        mark_tokens = sorted({round(m * total) for m in spec.eval.marks}) if spec.eval else []
        nominal = 0
        for i, st in enumerate(spec.stages):
            stage = st.stage
            label = f"{i:02d}_{stage.arch.value}_{stage.objective_name}"
            metrics = self.dir / "metrics" / f"{label}.jsonl"
            t0 = time.perf_counter()
            if stage.arch is not ckpt.arch:
                ckpt = convert(ckpt, stage.arch, st.convert or "mask_switch")
            local_marks, on_mark = [], None
            if not st.is_finetune and mark_tokens:
                # Marks are assigned by nominal budgets so none is lost to overshoot.
                lo, hi = nominal, nominal + stage.token_budget_seen
                mine = [m for m in mark_tokens if lo < m <= hi]
                local_marks = [min(m - lo, stage.token_budget_seen) for m in mine]
                labels = dict(zip(local_marks, mine))

                def fire(m, snap, labels=labels):
                    self._eval(f"mark_{labels[m]}", snap)

                on_mark = fire

            try:
                if st.is_finetune:
                    ckpt = multitask_finetune(
                        ckpt, st.tasks.load(), stage.token_budget_seen, stage.dropout, stage.seed,
                        stage.seq_len, stage.batch_size, schedule=stage.schedule, metrics_sink=metrics,
                    )
                else:
                    ckpt = run_stage(ckpt, stage, self.corpus, metrics, marks=local_marks, on_mark=on_mark)
            except TrainingAborted as exc:
                path = self.dir / "checkpoints" / f"{label}_aborted.ckpt"
                save_checkpoint(exc.checkpoint, path)
                self.manifest.status, self.manifest.error = "aborted", str(exc)
                self._write_manifest()
                raise
            if not st.is_finetune:
                nominal += stage.token_budget_seen
            path = self.dir / "checkpoints" / f"{label}.ckpt"
            save_checkpoint(ckpt, path)
            summary = ckpt.stage_history[-1]
            self.manifest.stages.append({
                "label": f"{stage.label}", "checkpoint": str(path.relative_to(self.dir)),
                "checkpoint_sha256": file_digest(path), "metrics": str(metrics.relative_to(self.dir)),
                "metrics_sha256": file_digest(metrics), "steps": summary["steps"],
                "tokens_seen": summary["tokens_seen"], "tokens_trained": summary["tokens_trained"],
                "final_val_loss": summary["final_val_loss"],
                "wall_clock_s": round(time.perf_counter() - t0, 3),
            })
            self._write_manifest()
            if st.is_finetune and spec.eval and spec.eval.after_finetune:
                self._eval(f"after_{label}", ckpt)
        self.manifest.status = "complete"
        self._write_manifest()
        return self.manifest

    @property
    def corpus(self):
        if not hasattr(self, "_corpus"):
            self._corpus = self.spec.corpus.load()
        return self._corpus


def run_experiment(spec: ExperimentSpec, out_root: str | Path) -> RunManifest:
    return Runner(spec, out_root).run()


def comparison_rows(specs: Sequence[ExperimentSpec], manifests: Sequence[RunManifest]) -> list[dict]:
    """One row per run and evaluation mark (one row per run without evals)."""
    rows = []
    for spec, man in zip(specs, manifests):
        stage = spec.stages[0].stage
        base = {"run": man.name, "arch": stage.arch.value, "objective": stage.objective_name,
                "final_val_loss": man.stages[-1]["final_val_loss"] if man.stages else None}
        if not man.evals:
            rows.append({**base, "mark": None, "tokens_seen": None,
                         "median_then_mean": None, "single_prompt_mean": None})
        for ev in man.evals:
            rows.append({**base, "mark": ev["label"], "tokens_seen": ev["cumulative_tokens_seen"],
                         "median_then_mean": ev["aggregate_median_then_mean"],
                         "single_prompt_mean": ev["aggregate_single_prompt_mean"]})
    return rows


def to_csv(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({c: ("" if r.get(c) is None else r.get(c)) for c in columns})
    return buf.getvalue()


LOSS_COLUMNS = ("run", "stage", "stage_index", "stage_tokens_seen", "tokens_seen", "val_loss")
EVAL_COLUMNS = ("run", "label", "tokens_seen", "policy", "aggregate", "min", "max", "baseline")


def report_series(manifest_paths: Sequence[str | Path]) -> tuple[str, str]:
    """Loss-curve and eval-bar tables as CSV text.

    Loss rows give both stage-local and cumulative seen tokens so adapted and
    from-scratch runs can be aligned on either axis. Eval rows carry the
    aggregate and the mean over tasks of each task's worst and best prompt.
    """
    if not manifest_paths:
        raise ValueError("no manifests given")
    missing = [str(p) for p in manifest_paths if not Path(p).is_file()]
    manifests = []
    for p in manifest_paths:
        if str(p) in missing:
            continue
        run_dir = Path(p).parent
        man = RunManifest.load(p)
        refs = [s["metrics"] for s in man.stages] + [e["report"] for e in man.evals]
        missing += [str(run_dir / r) for r in refs if not (run_dir / r).is_file()]
        manifests.append((run_dir, man))
    if missing:
        raise FileNotFoundError("missing files: " + ", ".join(missing))
    loss_rows, eval_rows = [], []
    for run_dir, man in manifests:
        for idx, st in enumerate(man.stages):
            for rec in read_metrics(run_dir / st["metrics"]):
                if rec["kind"] == "validation" and rec["val_loss"] is not None:
                    loss_rows.append({"run": man.name, "stage": st["label"], "stage_index": idx,
                                      "stage_tokens_seen": rec["tokens_seen"],
                                      "tokens_seen": rec["cumulative_tokens_seen"], "val_loss": rec["val_loss"]})
        for ev in man.evals:
            report = EvalReport.load(run_dir / ev["report"])
            lo = sum(v[0] for v in report.spread.values()) / len(report.spread)
            hi = sum(v[1] for v in report.spread.values()) / len(report.spread)
            for policy, value in sorted(report.aggregates.items()):
                eval_rows.append({"run": man.name, "label": ev["label"], "tokens_seen": ev["cumulative_tokens_seen"],
                                  "policy": policy, "aggregate": value, "min": lo, "max": hi,
                                  "baseline": report.random_baseline})
    return to_csv(loss_rows, LOSS_COLUMNS), to_csv(eval_rows, EVAL_COLUMNS)
