"""Per-iteration training log with checkpoint metric snapshots."""

import csv
import math
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import numpy as np

from distill_lab.errors import InvalidArgument

CSV_COLUMNS = ("iteration", "loss", "lr", "mean_alpha")


@dataclass
class LogRow:
    iteration: int
    loss: float
    lr: float
    mean_alpha: Optional[float] = None
    min_alpha: Optional[float] = None
    max_alpha: Optional[float] = None
    seconds: float = 0.0


class RunLog:
    """
    One row per logged training step plus periodic metric snapshots.

    Wall-clock seconds are kept in memory only; they never reach the CSV or
    JSON artifacts, which must be identical across repeated runs.
    """

    def __init__(self, name: str):
        self.name = name
        self.rows: List[LogRow] = []
        self.checkpoints: List[Dict[str, Any]] = []
        self.warnings: List[str] = []

    def record(
        self,
        iteration: int,
        loss: float,
        lr: float,
        alphas: Optional[List[float]] = None,
        seconds: float = 0.0,
    ) -> LogRow:
        if self.rows and iteration <= self.rows[-1].iteration:
            raise InvalidArgument(
                f"Log iterations must increase strictly ({iteration} after {self.rows[-1].iteration})"
            )
        row = LogRow(iteration=int(iteration), loss=float(loss), lr=float(lr), seconds=float(seconds))
        if alphas:
            row.mean_alpha = float(np.mean(alphas))
            row.min_alpha = float(np.min(alphas))
            row.max_alpha = float(np.max(alphas))
        self.rows.append(row)
        return row

    def add_checkpoint(self, iteration: int, metrics: Dict[str, Any]) -> None:
        self.checkpoints.append({"iteration": int(iteration), **metrics})

    def warn(self, message: str) -> None:
        """Keep a run-level warning for the report; repeats are dropped."""
        if message not in self.warnings:
            self.warnings.append(message)

    @property
    def iterations(self) -> np.ndarray:
        return np.array([r.iteration for r in self.rows], dtype=np.int64)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.rows])

    @property
    def learning_rates(self) -> np.ndarray:
        return np.array([r.lr for r in self.rows])

    @property
    def mean_alphas(self) -> np.ndarray:
        return np.array([r.mean_alpha for r in self.rows if r.mean_alpha is not None])

    def alpha_range(self):
        """(smallest, largest) momentum value seen over the run, or None without momentum."""
        lows = [r.min_alpha for r in self.rows if r.min_alpha is not None]
        if not lows:
            return None
        return min(lows), max(r.max_alpha for r in self.rows if r.max_alpha is not None)

    def final_window_loss(self, window: int = 200) -> float:
        losses = self.losses
        if losses.size == 0:
            return math.nan
        return float(losses[-min(window, losses.size):].mean())

    def total_seconds(self) -> float:
        return float(sum(r.seconds for r in self.rows))

    def to_csv(self, path: str) -> None:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(CSV_COLUMNS)
            for row in self.rows:
                alpha = "" if row.mean_alpha is None else repr(row.mean_alpha)
                writer.writerow([row.iteration, repr(row.loss), repr(row.lr), alpha])

    def summary(self, window: int = 200) -> Dict[str, Any]:
        """Deterministic summary for JSON reports."""
        data: Dict[str, Any] = {
            "name": self.name,
            "iterations": len(self.rows),
            "initial_loss": self.rows[0].loss if self.rows else None,
            "final_window_loss": self.final_window_loss(window),
            "checkpoints": self.checkpoints,
            "warnings": list(self.warnings),
        }
        alphas = self.mean_alphas
        if alphas.size:
            data["final_window_mean_alpha"] = float(alphas[-min(window, alphas.size):].mean())
            data["alpha_range"] = list(self.alpha_range())
        return data


def windowed_means(values: np.ndarray, window: int) -> np.ndarray:
    """Means over consecutive non-overlapping windows; a trailing partial window is dropped."""
    values = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise InvalidArgument(f"Window must be positive, got {window}")
    full = values.size // window
    return values[:full * window].reshape(full, window).mean(axis=1)
