import asyncio

import pytest

pytest.importorskip("mcp")

from mcp.server.fastmcp import FastMCP  # noqa: E402

from distill_lab import commands  # noqa: E402
from distill_lab.errors import ConfigError  # noqa: E402
from distill_lab.server import LabToolServer  # noqa: E402

TOOLS = {"gen_data", "train_teacher", "distill", "evaluate", "compare", "sweep_margins", "list_runs", "read_report"}


@pytest.fixture
def server(tmp_path):
    return LabToolServer(FastMCP("test"), str(tmp_path))


def test_tools_are_registered(server):
    server.register_tools()
    tools = asyncio.run(server.mcp.list_tools())
    assert {tool.name for tool in tools} == TOOLS


def test_run_names_are_checked(server):
    assert server.run_dir("quick-1").endswith("quick-1")
    for bad in ("", "../escape", "a/b", ".hidden"):
        with pytest.raises(ConfigError):
            server.run_dir(bad)


def test_model_files_stay_inside_their_run(server):
    assert server.run_file("students", "student.dlab") == server.run_dir("students") + "/student.dlab"
    for bad in ("../../etc/passwd", "..", "sub/student.dlab", "/abs.dlab", "", "student.dlab\n"):
        with pytest.raises(ConfigError):
            server.run_file("students", bad)
    record = server.call(lambda: server.run_file("students", "../../outside.dlab"))
    assert record["error"] == "config_error"


def test_unexpected_errors_come_back_as_records(server):
    def missing():
        raise FileNotFoundError(2, "No such file", "runs/x/student.dlab")

    def broken():
        raise ValueError("bad value")

    record = server.call(missing)
    assert record["success"] is False
    assert record["error"] == "io_error"
    assert record["details"] == {"type": "FileNotFoundError", "path": "runs/x/student.dlab"}
    assert server.call(broken) == {
        "success": False, "error": "internal_error", "message": "bad value", "details": {"type": "ValueError"},
    }


def test_errors_come_back_as_records(server):
    record = server.call(lambda: server.read_report("missing"))
    assert record["success"] is False
    assert record["error"] == "config_error"
    record = server.call(lambda: server.read_report("missing", "secrets.txt"))
    assert record["success"] is False


def test_overrides_reset_derived_fields(server):
    cfg = server.resolve_config(
        overrides={"student_spec": {"layer_widths": [16, 10, 4]}, "total_iterations": 50}, seed=3
    )
    assert cfg.teacher_spec.layer_widths == (16, 20, 4)
    assert cfg.teacher_iterations == 50
    assert cfg.seeds == (3,)


def test_generated_run_is_listed_and_readable(server):
    cfg = server.resolve_config(overrides={
        "dataset": {"class_count": 3, "samples_per_class": 10, "input_dim": 4},
        "student_spec": {"layer_widths": [4, 6, 3]},
    })
    commands.gen_data(cfg, server.run_dir("data"))
    assert server.list_runs() == [{"name": "data", "files": ["dataset.dlab", "dataset.json"]}]
    record = server.read_report("data", "dataset.json")
    assert record["content"]["samples"] == 30
