"""
Command implementations shared by the CLI (main.py) and the MCP tool server.

Every command writes its artifacts under out_dir and returns a JSON-ready
record with "success": True and the artifact paths. Failures surface as
LabError, which callers turn into LabError.to_record().
"""

import csv
import json
import logging
import os
from dataclasses import asdict
from typing import Any, Dict, List, Optional, Sequence

from distill_lab.data import generate_dataset
from distill_lab.errors import ConfigError
from distill_lab.evaluation import roc_points, score_pairs
from distill_lab.harness.compare import compare_methods, expand_methods, sweep_margins
from distill_lab.harness.config import METHODS, ExperimentConfig, config_to_dict
from distill_lab.harness.experiment import (
    TeacherResult,
    analyze_centers,
    distill_student,
    evaluate_network,
    prepare_data,
    train_teacher,
)
from distill_lab.harness.provenance import PROTOCOL_NOTE, collect_provenance
from distill_lab.models import embed
from distill_lab.serialization import (
    load_center_bank,
    load_dataset,
    load_network,
    save_center_bank,
    save_dataset,
    save_network,
)

logger = logging.getLogger(__name__)

REPO_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

TEACHER_FILE = "teacher.dlab"
TEACHER_CENTERS_FILE = "teacher_centers.dlab"
STUDENT_FILE = "student.dlab"


def _write_json(path: str, data: Dict[str, Any]) -> str:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def _write_meta(cfg: ExperimentConfig, out_dir: str, command: str) -> str:
    meta = collect_provenance(config_to_dict(cfg), REPO_DIR)
    meta["command"] = command
    meta["config"] = config_to_dict(cfg)
    return _write_json(os.path.join(out_dir, "run_meta.json"), meta)


def _load_teacher(teacher_dir: str, cfg: ExperimentConfig) -> TeacherResult:
    network = load_network(os.path.join(teacher_dir, TEACHER_FILE))
    centers = load_center_bank(os.path.join(teacher_dir, TEACHER_CENTERS_FILE))
    if network.spec.input_dim != cfg.dataset.input_dim:
        raise ConfigError(
            f"Saved teacher expects {network.spec.input_dim}-d inputs, config dataset has {cfg.dataset.input_dim}"
        )
    logger.info(f"Loaded teacher {network} from {teacher_dir}")
    return TeacherResult(network, centers, log=None)


def _prepare(cfg: ExperimentConfig, dataset_path: Optional[str]):
    if dataset_path is None:
        return prepare_data(cfg)
    dataset = load_dataset(dataset_path)
    logger.info(f"Loaded {dataset.size} samples from {dataset_path}")
    return prepare_data(cfg, dataset)


def gen_data(cfg: ExperimentConfig, out_dir: str) -> Dict[str, Any]:
    """Generate the synthetic dataset and save it as a binary container."""
    dataset = generate_dataset(cfg.dataset)
    path = os.path.join(out_dir, "dataset.dlab")
    save_dataset(path, dataset)
    info = {
        "spec": asdict(cfg.dataset),
        "samples": dataset.size,
        "train": int(dataset.train_indices.size),
        "holdout": int(dataset.holdout_indices.size),
    }
    _write_json(os.path.join(out_dir, "dataset.json"), info)
    return {"success": True, "dataset": path, **info}


def train_teacher_command(cfg: ExperimentConfig, out_dir: str, dataset_path: Optional[str] = None) -> Dict[str, Any]:
    """Train the teacher, save it with its frozen centers, log and metrics."""
    dataset, pairs = _prepare(cfg, dataset_path)
    seed = cfg.seeds[0]
    teacher = train_teacher(cfg, seed, dataset, pairs)
    save_network(os.path.join(out_dir, TEACHER_FILE), teacher.network)
    save_center_bank(os.path.join(out_dir, TEACHER_CENTERS_FILE), teacher.centers)
    teacher.log.to_csv(os.path.join(out_dir, "runlog.csv"))

    metrics = evaluate_network(teacher.network, dataset, pairs, cfg.evaluation.far_targets, teacher.log)
    report = {"seed": seed, "metrics": metrics, "training": teacher.log.summary(), "protocol": PROTOCOL_NOTE}
    _write_json(os.path.join(out_dir, "metrics.json"), report)
    _write_meta(cfg, out_dir, "train-teacher")
    return {"success": True, "out_dir": out_dir, "verification_accuracy": metrics["verification_accuracy"]}


def distill_command(
    cfg: ExperimentConfig, out_dir: str, teacher_dir: Optional[str] = None, dataset_path: Optional[str] = None
) -> Dict[str, Any]:
    """Distill one student; the teacher is loaded from teacher_dir or trained first."""
    dataset, pairs = _prepare(cfg, dataset_path)
    seed = cfg.seeds[0]
    teacher = None
    if cfg.method != "standalone":
        teacher = _load_teacher(teacher_dir, cfg) if teacher_dir else train_teacher(cfg, seed, dataset, pairs)
    result = distill_student(
        cfg,
        teacher.network if teacher else None,
        teacher.centers if teacher else None,
        seed,
        dataset,
        pairs,
    )
    save_network(os.path.join(out_dir, STUDENT_FILE), result.network)
    result.log.to_csv(os.path.join(out_dir, "runlog.csv"))

    metrics = evaluate_network(result.network, dataset, pairs, cfg.evaluation.far_targets, result.log)
    report = {
        "label": cfg.label,
        "method": cfg.method,
        "seed": seed,
        "metrics": metrics,
        "training": result.log.summary(),
        "protocol": PROTOCOL_NOTE,
    }
    _write_json(os.path.join(out_dir, "metrics.json"), report)
    _write_meta(cfg, out_dir, "distill")
    return {
        "success": True,
        "out_dir": out_dir,
        "label": cfg.label,
        "verification_accuracy": metrics["verification_accuracy"],
    }


def evaluate_command(
    cfg: ExperimentConfig, model_path: str, out_dir: str, roc_csv: bool = False, dataset_path: Optional[str] = None
) -> Dict[str, Any]:
    """Evaluate a saved network on the config's holdout pairs."""
    network = load_network(model_path)
    dataset, pairs = _prepare(cfg, dataset_path)
    metrics = evaluate_network(network, dataset, pairs, cfg.evaluation.far_targets)
    _write_json(os.path.join(out_dir, "metrics.json"), {"model": model_path, "metrics": metrics, "protocol": PROTOCOL_NOTE})
    record = {"success": True, "out_dir": out_dir, **{k: v for k, v in metrics.items() if k != "warnings"}}

    if roc_csv:
        scores = score_pairs(embed(network, dataset.inputs), pairs)
        path = os.path.join(out_dir, "roc.csv")
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["threshold", "tar", "far"])
            for point in roc_points(scores):
                writer.writerow([repr(point.threshold), repr(point.tar), repr(point.far)])
        record["roc"] = path
    return record


def compare_command(
    cfg: ExperimentConfig,
    out_dir: str,
    methods: Optional[Sequence[str]] = None,
    workers: int = 1,
) -> Dict[str, Any]:
    """Compare methods over the config's seeds; writes report.csv, metrics.json and run logs."""
    configs = expand_methods(cfg, methods or METHODS)
    report = compare_methods(configs, max_workers=workers)
    paths = report.write(out_dir)
    _write_meta(cfg, out_dir, "compare")
    return {"success": True, "out_dir": out_dir, **paths, "aggregates": report.aggregates}


def sweep_command(
    cfg: ExperimentConfig,
    out_dir: str,
    kind: str = "arc",
    values: Optional[List[float]] = None,
    workers: int = 1,
) -> Dict[str, Any]:
    """Margin sweep of the hard-weighted adaptive method."""
    report = sweep_margins(cfg, values, kind, max_workers=workers)
    paths = report.write(out_dir)
    _write_meta(cfg, out_dir, "sweep")
    return {"success": True, "out_dir": out_dir, **paths, "aggregates": report.aggregates}


def analyze_centers_command(
    cfg: ExperimentConfig, out_dir: str, teacher_dir: Optional[str] = None, dataset_path: Optional[str] = None
) -> Dict[str, Any]:
    """Sample-sample vs sample-center score distributions of the teacher's training identities."""
    dataset, pairs = _prepare(cfg, dataset_path)
    teacher = _load_teacher(teacher_dir, cfg) if teacher_dir else train_teacher(cfg, cfg.seeds[0], dataset, pairs)
    analysis = analyze_centers(teacher, dataset)

    path = os.path.join(out_dir, "center_scores.csv")
    os.makedirs(out_dir, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["kind", "score"])
        for kind in ("sample_sample", "sample_center"):
            for score in analysis[kind]:
                writer.writerow([kind, repr(float(score))])

    summary = {
        "mean_sample_sample": analysis["mean_sample_sample"],
        "mean_sample_center": analysis["mean_sample_center"],
        "degenerate_classes": analysis["degenerate_classes"],
        "warnings": [
            f"class {label} has no defined center (its samples cancel); excluded from both score lists"
            for label in analysis["degenerate_classes"]
        ],
    }
    _write_json(os.path.join(out_dir, "metrics.json"), summary)
    _write_meta(cfg, out_dir, "analyze-centers")
    return {"success": True, "out_dir": out_dir, "scores": path, **summary}
