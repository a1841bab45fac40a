"""
Multi-run orchestration: method comparisons, margin sweeps and the
frozen-vs-refined center convergence comparison.

Teachers are trained once per (teacher settings, seed) and shared by every
student of that seed. Independent runs may execute in worker processes;
results are merged in a fixed order, so reports never depend on completion
order or on the order configs were given in.
"""

import csv
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from distill_lab.errors import ConfigError
from distill_lab.harness.config import METHODS, ExperimentConfig, config_to_dict
from distill_lab.harness.experiment import (
    TeacherResult,
    distill_student,
    evaluate_network,
    prepare_data,
    train_teacher,
)
from distill_lab.harness.provenance import FEATURE_NORMALIZATION_NOTE, PROTOCOL_NOTE
from distill_lab.harness.runlog import RunLog
from distill_lab.losses import MarginConfig

logger = logging.getLogger(__name__)

CONVERGENCE_WINDOW = 200
ARC_SWEEP = (0.40, 0.45, 0.50)
COS_SWEEP = (0.30, 0.35, 0.40)

_TEACHER_FIELDS = (
    "dataset", "teacher_spec", "teacher_margin", "teacher_iterations",
    "batch_size", "optimizer", "evaluation", "checkpoint_count",
)


def _teacher_key(cfg: ExperimentConfig, seed: int) -> str:
    data = config_to_dict(cfg)
    return json.dumps({"seed": seed, **{k: data[k] for k in _TEACHER_FIELDS}}, sort_keys=True)


def _metric_keys(cfg: ExperimentConfig) -> List[str]:
    return ["verification_accuracy"] + [f"tar@far={far:g}" for far in cfg.evaluation.far_targets] + ["rank1"]


def _teacher_job(job: Tuple[ExperimentConfig, int]) -> TeacherResult:
    cfg, seed = job
    return train_teacher(cfg, seed)


def _student_job(job: Tuple[ExperimentConfig, int, Optional[TeacherResult]]):
    cfg, seed, teacher = job
    dataset, pairs = prepare_data(cfg)
    network = teacher.network if teacher else None
    centers = teacher.centers if teacher else None
    result = distill_student(cfg, network, centers, seed, dataset, pairs)
    metrics = evaluate_network(result.network, dataset, pairs, cfg.evaluation.far_targets, result.log)
    return metrics, result.log


def _run_all(function, jobs: list, max_workers: int) -> list:
    if max_workers <= 1 or len(jobs) <= 1:
        return [function(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(function, jobs))


class ComparisonReport:
    """Per-run rows, per-label aggregates and the convergence comparison of one comparison."""

    def __init__(
        self,
        rows: List[Dict[str, Any]],
        aggregates: List[Dict[str, Any]],
        convergence: List[Dict[str, Any]],
        warnings: List[str],
        configs: Dict[str, Dict[str, Any]],
        logs: Dict[str, RunLog],
    ):
        self.rows = rows
        self.aggregates = aggregates
        self.convergence = convergence
        self.warnings = warnings
        self.configs = configs
        self.logs = logs

    def aggregate(self, label: str) -> Dict[str, Any]:
        for entry in self.aggregates:
            if entry["label"] == label:
                return entry
        raise KeyError(label)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rows": self.rows,
            "aggregates": self.aggregates,
            "convergence": self.convergence,
            "warnings": self.warnings,
            "parameters": self.configs,
            "protocol": PROTOCOL_NOTE,
            "assumptions": [FEATURE_NORMALIZATION_NOTE],
        }

    def write(self, out_dir: str) -> Dict[str, str]:
        """Write metrics.json, report.csv and one runlog CSV per run; returns the paths."""
        os.makedirs(out_dir, exist_ok=True)
        paths = {
            "metrics": os.path.join(out_dir, "metrics.json"),
            "report": os.path.join(out_dir, "report.csv"),
        }
        with open(paths["metrics"], "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

        columns = sorted({key for row in self.rows for key in row})
        leading = [c for c in ("label", "method", "margin_mode", "margin", "seed") if c in columns]
        columns = leading + [c for c in columns if c not in leading]
        with open(paths["report"], "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=columns)
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)

        for name, log in self.logs.items():
            safe = "".join(ch if ch.isalnum() or ch in "-_=." else "_" for ch in name)
            log.to_csv(os.path.join(out_dir, "runlogs", f"runlog_{safe}.csv"))
        return paths


def _aggregate(rows: List[Dict[str, Any]], keys: List[str]) -> List[Dict[str, Any]]:
    aggregates = []
    for label in sorted({row["label"] for row in rows}):
        members = [row for row in rows if row["label"] == label]
        entry: Dict[str, Any] = {"label": label, "method": members[0]["method"], "seeds": len(members)}
        for key in keys + ["final_window_loss"]:
            values = np.array([row[key] for row in members], dtype=np.float64)
            entry[f"{key}_mean"] = float(values.mean())
            entry[f"{key}_std"] = float(values.std())
        aggregates.append(entry)
    return aggregates


def _convergence(rows: List[Dict[str, Any]], logs: Dict[str, RunLog]) -> List[Dict[str, Any]]:
    """Final-window loss of fixed-center vs refined-center distillation, per seed and margin."""
    results = []
    fixed_runs = [row for row in rows if row["method"] == "amldistill"]
    for fixed in fixed_runs:
        for refined in rows:
            if (refined["method"] == "adadistill_alpha_prime" and refined["seed"] == fixed["seed"]
                    and refined["margin"] == fixed["margin"] and refined["margin_mode"] == fixed["margin_mode"]):
                fixed_loss = logs[fixed["run"]].final_window_loss(CONVERGENCE_WINDOW)
                refined_loss = logs[refined["run"]].final_window_loss(CONVERGENCE_WINDOW)
                results.append({
                    "seed": fixed["seed"],
                    "margin": fixed["margin"],
                    "fixed_centers_label": fixed["label"],
                    "refined_centers_label": refined["label"],
                    "fixed_centers_final_loss": fixed_loss,
                    "refined_centers_final_loss": refined_loss,
                    "refined_converges_lower": bool(refined_loss < fixed_loss),
                })
    return sorted(results, key=lambda r: (r["margin"], r["seed"], r["refined_centers_label"]))


def compare_methods(
    configs: Sequence[ExperimentConfig],
    seeds: Optional[Sequence[int]] = None,
    max_workers: int = 1,
) -> ComparisonReport:
    """
    Distill and evaluate every config under every seed.

    Args:
        configs: Experiment configs sharing dataset and evaluation settings
        seeds: Seeds to run (defaults to each config's own seeds)
        max_workers: Worker processes for independent runs (1 = in-process)

    Returns:
        ComparisonReport: rows sorted by (label, seed), aggregates sorted by label
    """
    if not configs:
        raise ConfigError("compare_methods needs at least one config")
    reference = configs[0]
    for cfg in configs[1:]:
        if cfg.dataset != reference.dataset or cfg.evaluation != reference.evaluation:
            raise ConfigError("All compared configs must share the dataset and evaluation settings")
    labels = [cfg.label for cfg in configs]
    if len(set(labels)) != len(labels):
        raise ConfigError(f"Compared configs need distinct labels, got {labels}")

    jobs = [(cfg, int(seed)) for cfg in configs for seed in (seeds if seeds is not None else cfg.seeds)]

    teacher_jobs: Dict[str, Tuple[ExperimentConfig, int]] = {}
    for cfg, seed in jobs:
        if cfg.method != "standalone":
            teacher_jobs.setdefault(_teacher_key(cfg, seed), (cfg, seed))
    teacher_keys = sorted(teacher_jobs)
    logger.info(f"Training {len(teacher_keys)} teacher(s) for {len(jobs)} student run(s)")
    teachers = dict(zip(teacher_keys, _run_all(_teacher_job, [teacher_jobs[k] for k in teacher_keys], max_workers)))

    student_jobs = [
        (cfg, seed, None if cfg.method == "standalone" else teachers[_teacher_key(cfg, seed)])
        for cfg, seed in jobs
    ]
    results = _run_all(_student_job, student_jobs, max_workers)

    rows, logs, warnings = [], {}, set()
    for (cfg, seed), (metrics, log) in zip(jobs, results):
        run = f"{cfg.label}/seed{seed}"
        row = {
            "run": run,
            "label": cfg.label,
            "method": cfg.method,
            "margin_mode": cfg.margin.mode,
            "margin": cfg.margin.margin_value,
            "seed": seed,
            "final_window_loss": log.final_window_loss(CONVERGENCE_WINDOW),
        }
        for key in _metric_keys(cfg) + ["best_threshold", "genuine_pairs", "impostor_pairs"]:
            row[key] = metrics[key]
        summary = log.summary(CONVERGENCE_WINDOW)
        if "final_window_mean_alpha" in summary:
            row["final_window_mean_alpha"] = summary["final_window_mean_alpha"]
        rows.append(row)
        logs[run] = log
        # run-level warnings name their run; FAR warnings are shared by every run
        warnings.update(f"{run}: {w}" if w in log.warnings else w for w in metrics["warnings"])
    for key in sorted(teachers):
        teacher_log = teachers[key].log
        logs[teacher_log.name] = teacher_log

    rows.sort(key=lambda r: (r["label"], r["seed"]))
    return ComparisonReport(
        rows=rows,
        aggregates=_aggregate(rows, _metric_keys(reference)),
        convergence=_convergence(rows, logs),
        warnings=sorted(warnings),
        configs={cfg.label: config_to_dict(cfg) for cfg in sorted(configs, key=lambda c: c.label)},
        logs=logs,
    )


def expand_methods(base: ExperimentConfig, methods: Sequence[str] = METHODS) -> List[ExperimentConfig]:
    """One config per method, otherwise identical to base."""
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ConfigError(f"Unknown method(s) {unknown}. Available: {list(METHODS)}")
    return [replace(base, method=method, name=None, loss_weights=None) for method in methods]


def sweep_margins(
    base: ExperimentConfig,
    values: Optional[Sequence[float]] = None,
    kind: str = "arc",
    seeds: Optional[Sequence[int]] = None,
    method: str = "adadistill_alpha_prime",
    max_workers: int = 1,
) -> ComparisonReport:
    """
    Compare one distillation method across margin values.

    The teacher keeps its own margin; only the student's loss margin changes.
    kind is "arc" (angular m1) or "cos" (cosine m2).
    """
    if kind not in ("arc", "cos"):
        raise ConfigError(f"Margin kind must be 'arc' or 'cos', got '{kind}'")
    if values is None:
        values = ARC_SWEEP if kind == "arc" else COS_SWEEP
    configs = []
    for value in values:
        margin = (
            MarginConfig.arcface(value, base.margin.s, base.margin.guarded)
            if kind == "arc"
            else MarginConfig.cosface(value, base.margin.s, base.margin.guarded)
        )
        configs.append(replace(base, method=method, margin=margin, name=None))
    return compare_methods(configs, seeds, max_workers)


def convergence_comparison(cfg: ExperimentConfig, seed: Optional[int] = None) -> Dict[str, Any]:
    """
    Train fixed-center and refined-center (hard-weighted momentum) students on one seed.

    Returns:
        dict: final-window losses of both runs and whether refinement converged lower
    """
    seed = cfg.seeds[0] if seed is None else int(seed)
    report = compare_methods(expand_methods(cfg, ("amldistill", "adadistill_alpha_prime")), seeds=[seed])
    if not report.convergence:
        return {"seed": seed, "fixed_centers_final_loss": math.nan, "refined_centers_final_loss": math.nan}
    return report.convergence[0]
