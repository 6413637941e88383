"""
Extremal rate matrices and bang-bang rate selection

The worst-case constant matrix sits at interval endpoints chosen by the volatility
ordering; the HJB solver uses the same endpoint logic node by node.
"""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from .errors import ExtremalError, ModelError
from .model import Monotonicity, RateBoxes, RateMatrix


def extremal_matrix(boxes: RateBoxes, mono: Monotonicity) -> RateMatrix:
    """Worst-case constant rate matrix for an increasing or decreasing volatility vector"""
    mono = Monotonicity(mono)
    if mono is Monotonicity.NON_MONOTONE:
        raise ExtremalError(
            "sigma is not monotone in the regime index: no constant extremal rate matrix is known, "
            "use the worst-case HJB solve instead"
        )
    if mono is Monotonicity.TRIVIAL:
        if boxes.m != 1:
            raise ModelError(f"trivial monotonicity requires m=1, boxes describe m={boxes.m}")
        return RateMatrix.zeros(1)
    if mono is Monotonicity.INCREASING:
        plus = [lo for lo, _ in boxes.plus]
        minus = [hi for _, hi in boxes.minus]
    else:
        plus = [hi for _, hi in boxes.plus]
        minus = [lo for lo, _ in boxes.minus]
    return RateMatrix.from_rates(plus, minus)


def opposite_extremal_matrix(boxes: RateBoxes, mono: Monotonicity) -> RateMatrix:
    """The endpoint matrix of the reverse ordering; the most favourable constant choice for the holder"""
    mono = Monotonicity(mono)
    flipped = {
        Monotonicity.INCREASING: Monotonicity.DECREASING,
        Monotonicity.DECREASING: Monotonicity.INCREASING,
    }.get(mono, mono)
    return extremal_matrix(boxes, flipped)


def _tie_endpoints(tie_break: Optional[Monotonicity]) -> Tuple[bool, bool]:
    """(plus tie picks hi, minus tie picks hi) for the given tag"""
    if tie_break is None:
        return False, False
    tag = Monotonicity(tie_break)
    if tag is Monotonicity.INCREASING:
        return False, True
    if tag is Monotonicity.DECREASING:
        return True, False
    return False, False


def bang_bang_field(
    dv_up: np.ndarray,
    dv_down: np.ndarray,
    boxes: RateBoxes,
    tie_break: Optional[Monotonicity] = None,
    tie_tol: float = 0.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Vectorised minimiser of the rate-linear Hamiltonian.

    dv_up/dv_down have a trailing regime axis of length m. Entries with no neighbour
    in that direction come back as 0.
    """
    dv_up = np.asarray(dv_up, dtype=float)
    dv_down = np.asarray(dv_down, dtype=float)
    if dv_up.shape[-1] != boxes.m or dv_down.shape[-1] != boxes.m:
        raise ModelError(f"value differences carry {dv_up.shape[-1]} regimes, boxes describe {boxes.m}")
    plus_lo, plus_hi = boxes.plus_bounds()
    minus_lo, minus_hi = boxes.minus_bounds()
    plus_tie_hi, minus_tie_hi = _tie_endpoints(tie_break)

    up_tie = np.abs(dv_up) <= tie_tol
    lam_plus = np.where(dv_up > 0, plus_lo, plus_hi)
    lam_plus = np.where(up_tie, plus_hi if plus_tie_hi else plus_lo, lam_plus)

    down_tie = np.abs(dv_down) <= tie_tol
    lam_minus = np.where(dv_down > 0, minus_lo, minus_hi)
    lam_minus = np.where(down_tie, minus_hi if minus_tie_hi else minus_lo, lam_minus)
    return lam_plus, lam_minus


def pointwise_rates(
    dv_up: float,
    dv_down: float,
    y: int,
    boxes: RateBoxes,
    tie_break: Optional[Monotonicity] = None,
    tie_tol: float = 0.0,
) -> Tuple[float, float]:
    """Bang-bang (lambda_plus, lambda_minus) for regime y (1-based)"""
    if not 1 <= y <= boxes.m:
        raise ModelError(f"regime {y} outside 1..{boxes.m}")
    up = np.zeros(boxes.m)
    down = np.zeros(boxes.m)
    up[y - 1] = dv_up
    down[y - 1] = dv_down
    lam_plus, lam_minus = bang_bang_field(up, down, boxes, tie_break, tie_tol)
    return float(lam_plus[y - 1]), float(lam_minus[y - 1])


def rate_field_from_surface(
    values: np.ndarray,
    boxes: RateBoxes,
    tie_break: Optional[Monotonicity] = None,
    tie_tol: float = 0.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Bang-bang rates for a value slice of shape (nx, m)"""
    values = np.asarray(values, dtype=float)
    dv_up = np.zeros_like(values)
    dv_down = np.zeros_like(values)
    dv_up[:, :-1] = values[:, 1:] - values[:, :-1]
    dv_down[:, 1:] = values[:, :-1] - values[:, 1:]
    return bang_bang_field(dv_up, dv_down, boxes, tie_break, tie_tol)
