import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from distill_lab.data import SyntheticDatasetSpec  # noqa: E402
from distill_lab.harness.config import EvalConfig, ExperimentConfig  # noqa: E402
from distill_lab.losses import MarginConfig  # noqa: E402
from distill_lab.models import MlpSpec  # noqa: E402

QUICK_CONFIG = os.path.join(ROOT, "config", "quick.toml")
DEFAULT_CONFIG = os.path.join(ROOT, "config", "default.json")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def make_tiny_config(**changes) -> ExperimentConfig:
    """A few dozen iterations on 4 classes; every method finishes in well under a second."""
    settings = dict(
        dataset=SyntheticDatasetSpec(class_count=4, samples_per_class=10, input_dim=6, intra_class_noise=0.2, seed=3),
        student_spec=MlpSpec((6, 8, 4), "tanh"),
        margin=MarginConfig.arcface(0.3, 16.0, guarded=True),
        teacher_margin=MarginConfig.arcface(0.3, 16.0, guarded=True),
        total_iterations=40,
        batch_size=8,
        seeds=(0,),
        evaluation=EvalConfig(far_targets=(0.1,)),
        log_every=20,
        checkpoint_count=2,
    )
    settings.update(changes)
    return ExperimentConfig(**settings)


@pytest.fixture
def tiny_config() -> ExperimentConfig:
    return make_tiny_config()
