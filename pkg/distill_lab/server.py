"""
MCP tool server exposing the lab commands.

Each tool runs one command under base_dir/runs/<run_name> and returns the
same dict record the CLI prints. Errors are returned as records, never raised
through the transport.
"""

import json
import logging
import os
import re
import traceback
from typing import Any, Callable, Dict, List, Optional

from mcp.server.fastmcp import FastMCP

from distill_lab import commands
from distill_lab.errors import ConfigError, LabError, error_record
from distill_lab.harness.config import (
    ExperimentConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    with_overrides,
)

logger = logging.getLogger(__name__)

_RUN_NAME = re.compile(r"[A-Za-z0-9][A-Za-z0-9_.-]*")
_REPORT_FILES = ("metrics.json", "run_meta.json", "dataset.json")


class LabToolServer:
    """Registers the lab commands as MCP tools on a FastMCP instance."""

    def __init__(self, mcp_instance: FastMCP, base_dir: str):
        """
        Args:
            mcp_instance: The FastMCP instance to register tools with
            base_dir: Directory whose runs/ subdirectory receives every tool output
        """
        self.mcp = mcp_instance
        self.base_dir = os.path.abspath(base_dir)
        self.runs_dir = os.path.join(self.base_dir, "runs")
        os.makedirs(self.runs_dir, exist_ok=True)
        logger.info(f"Lab tool server writing runs to {self.runs_dir}")

    def run_dir(self, run_name: str) -> str:
        if not _RUN_NAME.fullmatch(run_name or ""):
            raise ConfigError(f"Invalid run name '{run_name}' (letters, digits, '_', '-', '.')")
        return os.path.join(self.runs_dir, run_name)

    def run_file(self, run_name: str, file_name: str) -> str:
        """A file directly inside runs/<run_name>; names follow the run-name rule."""
        if not _RUN_NAME.fullmatch(file_name or ""):
            raise ConfigError(f"Invalid file name '{file_name}' (letters, digits, '_', '-', '.')")
        return os.path.join(self.run_dir(run_name), file_name)

    def resolve_config(
        self,
        config_path: Optional[str] = None,
        overrides: Optional[Dict[str, Any]] = None,
        seed: Optional[int] = None,
    ) -> ExperimentConfig:
        """Config from a file (relative to base_dir) or the defaults, with dict keys layered on top."""
        if config_path:
            path = config_path if os.path.isabs(config_path) else os.path.join(self.base_dir, config_path)
            cfg = load_config(path)
        else:
            cfg = ExperimentConfig()
        if overrides:
            data = config_to_dict(cfg)
            # derived fields follow their overridden source
            for derived, source in (("teacher_spec", "student_spec"), ("teacher_iterations", "total_iterations")):
                if source in overrides and derived not in overrides:
                    data[derived] = None
            cfg = config_from_dict({**data, **overrides})
        return with_overrides(cfg, seed=seed)

    def call(self, action: Callable[[], Dict[str, Any]]) -> Dict[str, Any]:
        try:
            return action()
        except LabError as e:
            logger.warning(f"Tool failed: {e.message}")
            return e.to_record()
        except Exception as e:
            record = error_record(e)
            logger.error(f"Tool failed with {record['error']}: {record['message']}")
            logger.debug(traceback.format_exc())
            return record

    def list_runs(self) -> List[Dict[str, Any]]:
        runs = []
        for name in sorted(os.listdir(self.runs_dir)):
            path = os.path.join(self.runs_dir, name)
            if os.path.isdir(path):
                runs.append({"name": name, "files": sorted(os.listdir(path))})
        return runs

    def read_report(self, run_name: str, file_name: str = "metrics.json") -> Dict[str, Any]:
        if file_name not in _REPORT_FILES:
            raise ConfigError(f"Readable report files: {list(_REPORT_FILES)}")
        path = self.run_file(run_name, file_name)
        if not os.path.exists(path):
            raise ConfigError(f"No {file_name} in run '{run_name}'")
        with open(path, "r", encoding="utf-8") as f:
            return {"success": True, "run": run_name, "file": file_name, "content": json.load(f)}

    def register_tools(self):
        """Register the lab tools."""

        @self.mcp.tool()
        def gen_data(run_name: str, config_path: Optional[str] = None, overrides: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
            """
            Generate the synthetic identity dataset and save it under runs/<run_name>.

            Args:
                run_name (str): Output run directory name
                config_path (str, optional): JSON/TOML experiment config, relative to the server directory
                overrides (dict, optional): Config keys replacing those of the file

            Returns:
                dict: success flag, dataset path and split sizes
            """
            return self.call(lambda: commands.gen_data(self.resolve_config(config_path, overrides), self.run_dir(run_name)))

        @self.mcp.tool()
        def train_teacher(
            run_name: str,
            config_path: Optional[str] = None,
            overrides: Optional[Dict[str, Any]] = None,
            seed: Optional[int] = None,
        ) -> Dict[str, Any]:
            """
            Train a teacher network and save it with its frozen class centers.

            Returns:
                dict: success flag, output directory and holdout verification accuracy
            """
            return self.call(lambda: commands.train_teacher_command(
                self.resolve_config(config_path, overrides, seed), self.run_dir(run_name)))

        @self.mcp.tool()
        def distill(
            run_name: str,
            config_path: Optional[str] = None,
            overrides: Optional[Dict[str, Any]] = None,
            seed: Optional[int] = None,
            teacher_run: Optional[str] = None,
        ) -> Dict[str, Any]:
            """
            Distill one student with the configured method.

            Args:
                teacher_run (str, optional): Run holding a saved teacher; trained on the fly when omitted

            Returns:
                dict: success flag, run label and holdout verification accuracy
            """
            return self.call(lambda: commands.distill_command(
                self.resolve_config(config_path, overrides, seed),
                self.run_dir(run_name),
                self.run_dir(teacher_run) if teacher_run else None,
            ))

        @self.mcp.tool()
        def evaluate(
            run_name: str,
            model_run: str,
            model_file: str = commands.STUDENT_FILE,
            config_path: Optional[str] = None,
            overrides: Optional[Dict[str, Any]] = None,
        ) -> Dict[str, Any]:
            """
            Evaluate a saved network (runs/<model_run>/<model_file>) on the holdout pairs.

            Returns:
                dict: verification accuracy, best threshold and TAR at each FAR target
            """
            return self.call(lambda: commands.evaluate_command(
                self.resolve_config(config_path, overrides),
                self.run_file(model_run, model_file),
                self.run_dir(run_name),
            ))

        @self.mcp.tool()
        def compare(
            run_name: str,
            config_path: Optional[str] = None,
            overrides: Optional[Dict[str, Any]] = None,
            methods: Optional[List[str]] = None,
        ) -> Dict[str, Any]:
            """
            Compare distillation methods over the configured seeds.

            Returns:
                dict: report paths and per-method mean/std metrics
            """
            return self.call(lambda: commands.compare_command(
                self.resolve_config(config_path, overrides), self.run_dir(run_name), methods))

        @self.mcp.tool()
        def sweep_margins(
            run_name: str,
            kind: str = "arc",
            values: Optional[List[float]] = None,
            config_path: Optional[str] = None,
            overrides: Optional[Dict[str, Any]] = None,
        ) -> Dict[str, Any]:
            """
            Margin sweep of the hard-weighted adaptive method.

            Args:
                kind (str): "arc" for angular margins, "cos" for cosine margins
                values (list, optional): Margin values (defaults per kind)
            """
            return self.call(lambda: commands.sweep_command(
                self.resolve_config(config_path, overrides), self.run_dir(run_name), kind, values))

        @self.mcp.tool()
        def list_runs() -> Dict[str, Any]:
            """List run directories and their files."""
            return {"success": True, "runs": self.list_runs()}

        @self.mcp.tool()
        def read_report(run_name: str, file_name: str = "metrics.json") -> Dict[str, Any]:
            """
            Read a JSON report of a run.

            Args:
                file_name (str): metrics.json, run_meta.json or dataset.json
            """
            return self.call(lambda: self.read_report(run_name, file_name))
