import math
from typing import Sequence

import numpy as np

from app.config import PMF_TOL
from app.errors import InvalidParameter


def enforce_range(value: float, minimum: float, maximum: float, label: str, error=InvalidParameter):
    if not isinstance(value, (int, float)) or not math.isfinite(value) or value < minimum or value > maximum:
        raise error(f"{label} must be between {minimum} and {maximum}")


def require_pmf(probs: Sequence[float], label: str, error=InvalidParameter) -> np.ndarray:
    arr = np.asarray(probs, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise error(f"{label} must be a non-empty vector")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise error(f"{label} must contain finite non-negative entries")
    if abs(arr.sum() - 1.0) > PMF_TOL:
        raise error(f"{label} must sum to 1 (got {arr.sum()!r})")
    return arr
