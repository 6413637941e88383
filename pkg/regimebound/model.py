"""
Domain types for the regime-switching stopping problem

Holds the dynamics, payoff, rate matrices and rate uncertainty boxes, plus the
validation helpers every solver relies on. Regimes are numbered 1..m in the
public API; array axes are 0-based.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ModelError, UnsupportedDynamicsError

ROW_SUM_TOL = 1e-12

Interval = Tuple[float, float]


class Monotonicity(str, Enum):
    """Ordering of the volatility vector across regimes"""

    INCREASING = "increasing"
    DECREASING = "decreasing"
    NON_MONOTONE = "non_monotone"
    TRIVIAL = "trivial"


# Dynamics


@dataclass(frozen=True)
class Driftless:
    """dX = a(X) sigma(Y) dB with a(x) constant or a piecewise-linear table"""

    a_scale: float = 1.0
    a_table: Optional[Tuple[Tuple[float, float], ...]] = None

    def __post_init__(self):
        if self.a_table is None:
            if not self.a_scale > 0:
                raise ModelError(f"a_scale must be > 0, got {self.a_scale}")
            return
        table = tuple((float(x), float(a)) for x, a in self.a_table)
        if len(table) < 1:
            raise ModelError("a_table needs at least one breakpoint")
        xs = [x for x, _ in table]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ModelError("a_table breakpoints must be strictly increasing")
        if any(a <= 0 for _, a in table):
            raise ModelError("a_table values must be > 0")
        object.__setattr__(self, "a_table", table)

    def a(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.a_table is None:
            return np.full_like(x, self.a_scale)
        xs, vals = zip(*self.a_table)
        return np.interp(x, xs, vals)

    def a_bound(self) -> float:
        if self.a_table is None:
            return self.a_scale
        return max(a for _, a in self.a_table)


@dataclass(frozen=True)
class GBM:
    """dX = mu X dt + sigma(Y) X dB"""

    mu: float

    def a(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float)


@dataclass(frozen=True)
class CEV:
    """dX = X^gamma sigma(Y) dB with gamma > 1"""

    gamma: float

    def __post_init__(self):
        if not self.gamma > 1:
            raise ModelError(f"CEV gamma must be > 1, got {self.gamma}")

    def a(self, x: np.ndarray) -> np.ndarray:
        return np.power(np.maximum(np.asarray(x, dtype=float), 0.0), self.gamma)


Dynamics = Union[Driftless, GBM, CEV]


# Payoffs


@dataclass(frozen=True)
class Put:
    strike: float

    def __post_init__(self):
        if not self.strike > 0:
            raise ModelError(f"put strike must be > 0, got {self.strike}")


@dataclass(frozen=True)
class Table:
    """Continuous piecewise-linear payoff, flat beyond the outer breakpoints"""

    points: Tuple[Tuple[float, float], ...]

    def __post_init__(self):
        points = tuple((float(x), float(v)) for x, v in self.points)
        if len(points) < 2:
            raise ModelError("table payoff needs at least two breakpoints")
        xs = [x for x, _ in points]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise ModelError("table payoff breakpoints must be strictly increasing")
        if any(v < 0 for _, v in points):
            raise ModelError("table payoff values must be nonnegative")
        object.__setattr__(self, "points", points)


@dataclass(frozen=True)
class PayoffSpec:
    kind: Union[Put, Table]
    holder_beta: float = 1.0

    def __post_init__(self):
        if not 0 < self.holder_beta <= 1:
            raise ModelError(f"holder_beta must lie in (0, 1], got {self.holder_beta}")

    @property
    def is_put(self) -> bool:
        return isinstance(self.kind, Put)

    def evaluate(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if isinstance(self.kind, Put):
            return np.maximum(self.kind.strike - x, 0.0)
        xs, vals = zip(*self.kind.points)
        return np.interp(x, xs, vals)

    def scale_on(self, x: np.ndarray) -> float:
        """Reference magnitude for relative tolerances: K for a put, else max payoff"""
        if isinstance(self.kind, Put):
            return self.kind.strike
        top = float(np.max(self.evaluate(x))) if np.size(x) else 0.0
        return top if top > 0 else 1.0


@dataclass(frozen=True)
class ProblemSpec:
    dynamics: Dynamics
    sigma: Tuple[float, ...]
    payoff: PayoffSpec
    horizon_T: float
    alpha: float
    x0: float
    y0: int = 1

    def __post_init__(self):
        sigma = tuple(float(s) for s in self.sigma)
        object.__setattr__(self, "sigma", sigma)
        if len(sigma) < 1:
            raise ModelError("sigma needs at least one regime")
        if any(not s > 0 for s in sigma):
            raise ModelError(f"sigma entries must be > 0, got {sigma}")
        if not self.horizon_T > 0:
            raise ModelError(f"horizon_T must be > 0, got {self.horizon_T}")
        if not self.alpha >= 0:
            raise ModelError(f"alpha must be >= 0, got {self.alpha}")
        if not 1 <= self.y0 <= len(sigma):
            raise ModelError(f"y0 must lie in 1..{len(sigma)}, got {self.y0}")
        if isinstance(self.dynamics, (GBM, CEV)) and not self.x0 > 0:
            raise ModelError(f"x0 must be > 0 for {type(self.dynamics).__name__}, got {self.x0}")

    @property
    def m(self) -> int:
        return len(self.sigma)

    @property
    def sigma_max(self) -> float:
        return max(self.sigma)

    def drift(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if isinstance(self.dynamics, GBM):
            return self.dynamics.mu * x
        return np.zeros_like(x)

    def diffusion(self, x, y) -> np.ndarray:
        """a(x) * sigma(y) with y a 0-based regime index (scalar or array)"""
        sig = np.asarray(self.sigma)[np.asarray(y)]
        return self.dynamics.a(x) * sig


# Rate matrices


@dataclass(frozen=True, eq=False)
class RateMatrix:
    m: int
    q: np.ndarray

    def __post_init__(self):
        q = np.array(self.q, dtype=float)
        if q.ndim != 2 or q.shape[0] != q.shape[1]:
            raise ModelError(f"rate matrix must be square, got shape {q.shape}")
        if q.shape[0] != self.m:
            raise ModelError(f"rate matrix shape {q.shape} does not match m={self.m}")
        q.setflags(write=False)
        object.__setattr__(self, "q", q)

    @classmethod
    def from_rates(cls, plus: Sequence[float], minus: Sequence[float]) -> "RateMatrix":
        """Tridiagonal Q-matrix from super-diagonal and sub-diagonal rates"""
        if len(plus) != len(minus):
            raise ModelError("plus and minus rate lists must have equal length")
        m = len(plus) + 1
        q = np.zeros((m, m))
        for i, (up, down) in enumerate(zip(plus, minus)):
            q[i, i + 1] = up
            q[i + 1, i] = down
        q[np.diag_indices(m)] = -q.sum(axis=1)
        return cls(m=m, q=q)

    @classmethod
    def zeros(cls, m: int) -> "RateMatrix":
        return cls(m=m, q=np.zeros((m, m)))

    def plus_rates(self) -> np.ndarray:
        """Per-regime upward rate, 0 for the top regime"""
        out = np.zeros(self.m)
        out[:-1] = np.diag(self.q, 1)
        return out

    def minus_rates(self) -> np.ndarray:
        """Per-regime downward rate, 0 for the bottom regime"""
        out = np.zeros(self.m)
        out[1:] = np.diag(self.q, -1)
        return out

    def to_list(self) -> List[List[float]]:
        return self.q.tolist()

    def __eq__(self, other) -> bool:
        return isinstance(other, RateMatrix) and self.m == other.m and np.array_equal(self.q, other.q)

    def __repr__(self) -> str:
        return f"RateMatrix(m={self.m}, q={self.q.tolist()})"


@dataclass(frozen=True)
class RateBoxes:
    """Compact intervals A_i^+ (regimes 1..m-1) and A_i^- (regimes 2..m)"""

    plus: Tuple[Interval, ...]
    minus: Tuple[Interval, ...]

    def __post_init__(self):
        plus = tuple((float(lo), float(hi)) for lo, hi in self.plus)
        minus = tuple((float(lo), float(hi)) for lo, hi in self.minus)
        if len(plus) != len(minus):
            raise ModelError(f"plus has {len(plus)} intervals but minus has {len(minus)}")
        for name, boxes in (("plus", plus), ("minus", minus)):
            for i, (lo, hi) in enumerate(boxes):
                if not (0 < lo <= hi < math.inf):
                    raise ModelError(f"{name}[{i}] = [{lo}, {hi}] is not a compact subset of (0, inf)")
        object.__setattr__(self, "plus", plus)
        object.__setattr__(self, "minus", minus)

    @property
    def m(self) -> int:
        return len(self.plus) + 1

    def plus_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-regime (lo, hi) arrays for upward rates; zero in the top regime"""
        lo, hi = np.zeros(self.m), np.zeros(self.m)
        for i, (a, b) in enumerate(self.plus):
            lo[i], hi[i] = a, b
        return lo, hi

    def minus_bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Per-regime (lo, hi) arrays for downward rates; zero in the bottom regime"""
        lo, hi = np.zeros(self.m), np.zeros(self.m)
        for i, (a, b) in enumerate(self.minus):
            lo[i + 1], hi[i + 1] = a, b
        return lo, hi

    def sample_uniform(self, rng: np.random.Generator) -> RateMatrix:
        plus = [rng.uniform(lo, hi) if hi > lo else lo for lo, hi in self.plus]
        minus = [rng.uniform(lo, hi) if hi > lo else lo for lo, hi in self.minus]
        return RateMatrix.from_rates(plus, minus)

    def grid_samples(self, per_box: int) -> List[RateMatrix]:
        """Cartesian product of endpoint-inclusive samples, plus boxes varying slowest"""
        axes = [_box_samples(box, per_box) for box in self.plus + self.minus]
        k = len(self.plus)
        return [RateMatrix.from_rates(combo[:k], combo[k:]) for combo in itertools.product(*axes)]

    def endpoint_matrices(self) -> List[RateMatrix]:
        return self.grid_samples(2)

    def sample_count(self, per_box: int) -> int:
        return math.prod(len(_box_samples(box, per_box)) for box in self.plus + self.minus)


def _box_samples(box: Interval, per_box: int) -> List[float]:
    lo, hi = box
    if hi == lo:
        return [lo]
    return [float(v) for v in np.linspace(lo, hi, per_box)]


# Validation


@dataclass(frozen=True)
class Violation:
    row: int
    col: Optional[int]
    reason: str

    def __str__(self) -> str:
        where = f"({self.row},{self.col})" if self.col is not None else f"row {self.row}"
        return f"{where}: {self.reason}"


@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[Violation, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.ok


def validate_rate_matrix(q: RateMatrix) -> ValidationReport:
    """Check Q-matrix sign, row-sum and skip-free support conditions"""
    found: List[Violation] = []
    for i in range(q.m):
        for j in range(q.m):
            if i == j:
                continue
            val = q.q[i, j]
            if val < 0:
                found.append(Violation(i + 1, j + 1, f"negative off-diagonal {val}"))
            if abs(i - j) > 1 and val != 0:
                found.append(Violation(i + 1, j + 1, f"band-width > 1 (entry {val})"))
        row_sum = float(q.q[i].sum())
        if abs(row_sum) > ROW_SUM_TOL:
            found.append(Violation(i + 1, None, f"row sums to {row_sum}"))
    return ValidationReport(tuple(found))


def is_admissible(q: RateMatrix, boxes: RateBoxes) -> bool:
    """Closed-interval membership of every super- and sub-diagonal rate"""
    if q.m != boxes.m:
        raise ModelError(f"rate matrix has m={q.m} but boxes describe m={boxes.m}")
    if not validate_rate_matrix(q).ok:
        return False
    for i, (lo, hi) in enumerate(boxes.plus):
        if not lo <= q.q[i, i + 1] <= hi:
            return False
    for i, (lo, hi) in enumerate(boxes.minus):
        if not lo <= q.q[i + 1, i] <= hi:
            return False
    return True


def sigma_monotonicity(sigma: Sequence[float]) -> Monotonicity:
    sigma = list(sigma)
    if len(sigma) < 1 or any(not s > 0 for s in sigma):
        raise ModelError(f"sigma must be a nonempty list of positive reals, got {sigma}")
    if len(sigma) == 1:
        return Monotonicity.TRIVIAL
    pairs = list(zip(sigma, sigma[1:]))
    if all(b > a for a, b in pairs):
        return Monotonicity.INCREASING
    if all(b < a for a, b in pairs):
        return Monotonicity.DECREASING
    return Monotonicity.NON_MONOTONE


def linear_growth_constant(problem: ProblemSpec) -> float:
    """Smallest K with |b(x)| + |a(x) sigma(y)| <= K (1 + |x|) for the supported dynamics"""
    dyn = problem.dynamics
    if isinstance(dyn, CEV):
        raise UnsupportedDynamicsError("CEV coefficients grow superlinearly; no linear-growth constant exists")
    if isinstance(dyn, GBM):
        return max(problem.sigma_max, abs(dyn.mu))
    return problem.sigma_max * dyn.a_bound()
