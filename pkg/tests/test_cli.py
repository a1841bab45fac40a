import json
from pathlib import Path

import pytest

from conftest import QUICK_CONFIG
import main


def run(capsys, *argv):
    code = main.main(list(argv))
    out = capsys.readouterr().out
    return code, json.loads(out)


@pytest.fixture(scope="module")
def teacher_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("teacher")
    assert main.main(["train-teacher", "--config", QUICK_CONFIG, "--out-dir", str(out), "-q"]) == 0
    return out


def test_gen_data(tmp_path, capsys):
    code, record = run(capsys, "gen-data", "--config", QUICK_CONFIG, "--out-dir", str(tmp_path), "-q")
    assert code == 0
    assert record["success"] is True
    assert record["samples"] == 120
    assert (tmp_path / "dataset.dlab").read_bytes()[:4] == b"DLAB"
    assert json.loads((tmp_path / "dataset.json").read_text())["holdout"] == 24


def test_train_teacher_artifacts(teacher_dir):
    for name in ("teacher.dlab", "teacher_centers.dlab", "runlog.csv", "metrics.json", "run_meta.json"):
        assert (teacher_dir / name).exists()
    meta = json.loads((teacher_dir / "run_meta.json").read_text())
    assert meta["command"] == "train-teacher"
    metrics = json.loads((teacher_dir / "metrics.json").read_text())
    assert metrics["seed"] == 0
    assert metrics["training"]["iterations"] == 300


def test_distill_then_evaluate(teacher_dir, tmp_path, capsys):
    student_dir = tmp_path / "student"
    code, record = run(capsys, "distill", "--config", QUICK_CONFIG, "--out-dir", str(student_dir),
                       "--teacher-dir", str(teacher_dir), "--method", "adadistill_alpha", "-q")
    assert code == 0
    assert record["label"].startswith("AdaArcDistill(alpha)")
    saved = json.loads((student_dir / "metrics.json").read_text())
    assert saved["method"] == "adadistill_alpha"
    assert "final_window_mean_alpha" in saved["training"]

    eval_dir = tmp_path / "eval"
    code, record = run(capsys, "evaluate", "--config", QUICK_CONFIG, "--model", str(student_dir / "student.dlab"),
                       "--out-dir", str(eval_dir), "--roc-csv", "-q")
    assert code == 0
    assert record["verification_accuracy"] == saved["metrics"]["verification_accuracy"]
    lines = (eval_dir / "roc.csv").read_text().splitlines()
    assert lines[0] == "threshold,tar,far"
    assert len(lines) > 2


def test_evaluate_reads_a_saved_dataset(teacher_dir, tmp_path, capsys):
    data_dir = tmp_path / "data"
    assert run(capsys, "gen-data", "--config", QUICK_CONFIG, "--out-dir", str(data_dir), "-q")[0] == 0
    model = str(teacher_dir / "teacher.dlab")
    code, regenerated = run(capsys, "evaluate", "--config", QUICK_CONFIG, "--model", model,
                            "--out-dir", str(tmp_path / "a"), "-q")
    assert code == 0
    code, loaded = run(capsys, "evaluate", "--config", QUICK_CONFIG, "--model", model,
                       "--dataset", str(data_dir / "dataset.dlab"), "--out-dir", str(tmp_path / "b"), "-q")
    assert code == 0
    assert loaded["verification_accuracy"] == regenerated["verification_accuracy"]
    assert loaded["rank1"] == regenerated["rank1"]


def test_saved_dataset_must_match_the_config(teacher_dir, tmp_path, capsys):
    other = tmp_path / "other.toml"
    quick = Path(QUICK_CONFIG).read_text(encoding="utf-8")
    other.write_text(quick.replace("samples_per_class = 20", "samples_per_class = 10"))
    assert run(capsys, "gen-data", "--config", str(other), "--out-dir", str(tmp_path / "data"), "-q")[0] == 0
    code, record = run(capsys, "evaluate", "--config", QUICK_CONFIG, "--model", str(teacher_dir / "teacher.dlab"),
                       "--dataset", str(tmp_path / "data" / "dataset.dlab"), "--out-dir", str(tmp_path), "-q")
    assert code == 1
    assert record["error"] == "config_error"


def test_analyze_centers(teacher_dir, tmp_path, capsys):
    code, record = run(capsys, "analyze-centers", "--config", QUICK_CONFIG, "--out-dir", str(tmp_path),
                       "--teacher-dir", str(teacher_dir), "-q")
    assert code == 0
    assert -1.0 <= record["mean_sample_center"] <= 1.0
    header = (tmp_path / "center_scores.csv").read_text().splitlines()[0]
    assert header == "kind,score"


def test_compare_output_is_reproducible(tmp_path, capsys):
    args = ["compare", "--config", QUICK_CONFIG, "--methods", "amldistill,adadistill_alpha_prime", "-q"]
    assert run(capsys, *args, "--out-dir", str(tmp_path / "a"))[0] == 0
    assert run(capsys, *args, "--out-dir", str(tmp_path / "b"))[0] == 0
    for name in ("metrics.json", "report.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    report = json.loads((tmp_path / "a" / "metrics.json").read_text())
    assert len(report["convergence"]) == 1


def test_bad_config_fails_with_record(tmp_path, capsys):
    config = tmp_path / "bad.json"
    config.write_text(json.dumps({"methd": "mse_kd"}))
    code, record = run(capsys, "gen-data", "--config", str(config), "--out-dir", str(tmp_path), "-q")
    assert code == 1
    assert record["success"] is False
    assert record["error"] == "config_error"


def test_filesystem_errors_fail_with_record(tmp_path, capsys):
    blocker = tmp_path / "plain-file"
    blocker.write_text("not a directory")
    code, record = run(capsys, "gen-data", "--config", QUICK_CONFIG, "--out-dir", str(blocker / "sub"), "-q")
    assert code == 1
    assert record["success"] is False
    assert record["error"] == "io_error"
    assert record["details"]["type"] in ("NotADirectoryError", "FileExistsError")


def test_unexpected_errors_fail_with_record(tmp_path, capsys, monkeypatch):
    def broken(*args, **kwargs):
        raise RuntimeError("boom")

    monkeypatch.setattr(main, "run_command", broken)
    code, record = run(capsys, "gen-data", "--config", QUICK_CONFIG, "--out-dir", str(tmp_path), "-q")
    assert code == 1
    assert record == {"success": False, "error": "internal_error", "message": "boom",
                      "details": {"type": "RuntimeError"}}


def test_missing_teacher_dir_fails(tmp_path, capsys):
    code, record = run(capsys, "distill", "--config", QUICK_CONFIG, "--out-dir", str(tmp_path),
                       "--teacher-dir", str(tmp_path / "nowhere"), "-q")
    assert code == 1
    assert record["success"] is False


def test_unknown_method_is_a_usage_error(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main.main(["compare", "--methods", "teleport"])
    assert excinfo.value.code == 2
