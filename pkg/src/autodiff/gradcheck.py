"""
Central finite differences and helpers for gradient checking.
"""

from typing import Callable, Hashable, Optional, Sequence

import numpy as np

from ..utils.errors import ContractError

DEFAULT_EPS = 1e-5
# points closer than this (along the probed coordinate) to a relu/maxpool switch are skipped
KINK_MARGIN = 1e-3


def _as_array(x) -> np.ndarray:
    data = getattr(x, "data", x)
    return np.array(data, dtype=np.float64)


def finite_difference_at(
    f: Callable[[np.ndarray], float],
    x,
    coords: Sequence[int],
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) at flat indices ``coords``."""
    if not eps > 0:
        raise ContractError(f"eps must be positive, got {eps}")
    base = _as_array(x)
    flat = base.reshape(-1)
    result = np.empty(len(coords))
    for k, index in enumerate(coords):
        probe = flat.copy()
        probe[index] = flat[index] + eps
        upper = float(f(probe.reshape(base.shape)))
        probe[index] = flat[index] - eps
        lower = float(f(probe.reshape(base.shape)))
        result[k] = (upper - lower) / (2.0 * eps)
    return result


def finite_difference_gradient(f: Callable[[np.ndarray], float], x, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Full central-difference gradient of a scalar function, shaped like ``x``."""
    base = _as_array(x)
    return finite_difference_at(f, base, range(base.size), eps).reshape(base.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def sample_smooth_coordinates(
    signature: Callable[[np.ndarray], Hashable],
    x,
    count: int,
    rng: np.random.Generator,
    margin: float = KINK_MARGIN,
    max_candidates: Optional[int] = None,
) -> np.ndarray:
    """
    Draw up to ``count`` flat coordinates whose +-margin probes keep the branch signature.

    ``signature`` maps a point to a hashable description of its relu/maxpool
    branches (see ``Tape.branch_signature``); coordinates where moving by
    ``margin`` changes any branch are near a kink and are skipped.
    """
    base = _as_array(x)
    flat = base.reshape(-1)
    reference = signature(base)
    candidates = rng.permutation(flat.size)
    if max_candidates is not None:
        candidates = candidates[:max_candidates]
    chosen = []
    for index in candidates:
        probe = flat.copy()
        probe[index] = flat[index] + margin
        if signature(probe.reshape(base.shape)) != reference:
            continue
        probe[index] = flat[index] - margin
        if signature(probe.reshape(base.shape)) != reference:
            continue
        chosen.append(int(index))
        if len(chosen) == count:
            break
    return np.array(chosen, dtype=np.int64)
