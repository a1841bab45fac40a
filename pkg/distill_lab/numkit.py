"""
Dense vector/matrix helpers used across the lab.

Vectors and matrices are plain float64 numpy arrays; the helpers here only add
the validation the losses rely on (finite entries, non-degenerate norms) and
the finite-difference oracle used by the gradient tests.
"""

from typing import Callable, Tuple

import numpy as np

from distill_lab.errors import DimensionMismatch, InvalidArgument, NonFinite, ZeroNorm

# Below this Euclidean norm a vector is treated as zero
EPS_NORM = 1e-12


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; the same seed gives the same stream on a given build."""
    if seed < 0:
        raise InvalidArgument(f"Seed must be a non-negative integer, got {seed}")
    return np.random.default_rng(seed)


def derive_seed(*parts: int) -> int:
    """Stable child seed for (run seed, epoch, ...) style tuples."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def as_vec(values, name: str = "vector") -> np.ndarray:
    """Validate and copy into a 1-D float64 array."""
    vec = np.array(values, dtype=np.float64)
    if vec.ndim != 1 or vec.size == 0:
        raise DimensionMismatch(f"{name} must be a non-empty 1-D array, got shape {vec.shape}")
    if not np.all(np.isfinite(vec)):
        raise NonFinite(f"{name} contains NaN or Inf")
    return vec


def as_mat(values, name: str = "matrix", cols: int = None) -> np.ndarray:
    """Validate and copy into a 2-D float64 array, optionally checking the column count."""
    mat = np.array(values, dtype=np.float64)
    if mat.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {mat.shape}")
    if cols is not None and mat.shape[1] != cols:
        raise DimensionMismatch(
            f"{name} has {mat.shape[1]} columns, expected {cols}",
            {"expected": cols, "actual": mat.shape[1]},
        )
    if not np.all(np.isfinite(mat)):
        raise NonFinite(f"{name} contains NaN or Inf")
    return mat


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Unit vector in the direction of v. Raises ZeroNorm when ||v|| <= EPS_NORM."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not np.isfinite(norm):
        raise NonFinite("Cannot normalize a vector with non-finite entries")
    if norm <= EPS_NORM:
        raise ZeroNorm(f"Vector norm {norm:.3e} is below {EPS_NORM:.0e}")
    return v / norm


def normalize_rows(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Row-wise l2 normalization.

    Returns:
        tuple: (normalized rows, original row norms)
    """
    m = np.asarray(m, dtype=np.float64)
    norms = np.linalg.norm(m, axis=1)
    bad = np.flatnonzero(norms <= EPS_NORM)
    if bad.size:
        raise ZeroNorm(f"{bad.size} row(s) have near-zero norm", {"rows": bad[:10].tolist()})
    return m / norms[:, None], norms


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity of two non-zero vectors, clamped to [-1, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise DimensionMismatch(f"Cannot compare vectors of shape {u.shape} and {v.shape}")
    value = float(np.dot(l2_normalize(u), l2_normalize(v)))
    return min(1.0, max(-1.0, value))


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs cosine similarities between the rows of a and the rows of b."""
    a_unit, _ = normalize_rows(a)
    b_unit, _ = normalize_rows(b)
    if a_unit.shape[1] != b_unit.shape[1]:
        raise DimensionMismatch(f"Row dimensions differ: {a_unit.shape[1]} vs {b_unit.shape[1]}")
    return np.clip(a_unit @ b_unit.T, -1.0, 1.0)


def clip01(x: float) -> float:
    """Clamp a finite scalar into [0, 1]."""
    x = float(x)
    if not np.isfinite(x):
        raise NonFinite(f"clip01 received a non-finite value: {x}")
    return min(1.0, max(0.0, x))


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """
    Central-difference gradient of a scalar function.

    Works for arrays of any shape; the result has the shape of x.

    Args:
        f: Scalar-valued function of an array shaped like x
        x: Evaluation point
        h: Step size (> 0)

    Returns:
        np.ndarray: (f(x + h e_i) - f(x - h e_i)) / (2h) for every coordinate i
    """
    if not h > 0:
        raise InvalidArgument(f"Step size must be positive, got {h}")
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in range(x.size):
        forward = x.copy()
        backward = x.copy()
        forward.flat[i] += h
        backward.flat[i] -= h
        f_plus = float(f(forward))
        f_minus = float(f(backward))
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFinite(f"Function evaluation is not finite at coordinate {i}")
        grad.flat[i] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1.0) -> float:
    """||a - n|| / max(||a||, ||n||, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)
