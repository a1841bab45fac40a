"""
Run metadata written next to the metrics.

Git state is read through GitPython when the lab runs from a checkout;
outside a repository (or without a git binary) those fields are null.
"""

import hashlib
import json
import logging
import platform
from typing import Any, Dict, Optional

import numpy as np

import distill_lab

logger = logging.getLogger(__name__)

try:
    import git
    GIT_AVAILABLE = True
except ImportError:
    git = None
    GIT_AVAILABLE = False

# Teacher features fed to the momentum/center updates are l2-normalized first
FEATURE_NORMALIZATION_NOTE = (
    "teacher features are l2-normalized before the momentum and center updates; "
    "raw teacher outputs are never blended into the centers"
)

PROTOCOL_NOTE = (
    "verification accuracy is the best-threshold accuracy on a single holdout pair set "
    "(no 10-fold cross-validation); TAR@FAR uses the smallest threshold with empirical FAR <= target"
)


def config_hash(config_dict: Dict[str, Any]) -> str:
    canonical = json.dumps(config_dict, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def git_state(repo_path: str) -> Dict[str, Optional[Any]]:
    """Commit hash, branch and dirty flag of the repository containing repo_path."""
    state: Dict[str, Optional[Any]] = {"commit": None, "branch": None, "dirty": None}
    if not GIT_AVAILABLE:
        return state
    try:
        repo = git.Repo(repo_path, search_parent_directories=True)
        state["commit"] = repo.head.commit.hexsha
        state["dirty"] = repo.is_dirty(untracked_files=False)
        state["branch"] = None if repo.head.is_detached else repo.active_branch.name
    except (git.InvalidGitRepositoryError, git.NoSuchPathError):
        logger.debug(f"{repo_path} is not inside a git repository")
    except (git.GitCommandError, ValueError) as e:
        # ValueError: repository without any commit yet
        logger.debug(f"Could not read git state: {e}")
    return state


def collect_provenance(config_dict: Dict[str, Any], repo_path: str) -> Dict[str, Any]:
    return {
        "package_version": distill_lab.__version__,
        "config_sha256": config_hash(config_dict),
        "seeds": config_dict.get("seeds"),
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "git": git_state(repo_path),
        "assumptions": [FEATURE_NORMALIZATION_NOTE],
    }
