"""
Slow-but-sure references: a CRR tree, brute force over constant matrices, and an
event-driven chain simulator.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from loguru import logger

from .errors import OracleError
from .extremal import extremal_matrix
from .model import ProblemSpec, RateBoxes, RateMatrix, sigma_monotonicity, validate_rate_matrix
from .pde import Grid, SolverSettings, solve_constant

MAX_BRUTE_FORCE = 10_000
ARGMIN_TOL = 1e-8
DOMINANCE_TOL = 1e-6


def binomial_american_put(x0: float, strike: float, r: float, sigma: float, horizon: float, steps: int) -> float:
    """Cox-Ross-Rubinstein American put with early exercise at every node"""
    if steps < 1:
        raise OracleError(f"steps must be >= 1, got {steps}")
    if min(x0, strike, sigma, horizon) <= 0 or r < 0:
        raise OracleError("need x0, strike, sigma, horizon > 0 and r >= 0")
    dt = horizon / steps
    u = math.exp(sigma * math.sqrt(dt))
    d = 1 / u
    growth = math.exp(r * dt)
    p = (growth - d) / (u - d)
    if not 0 <= p <= 1:
        raise OracleError(f"risk-neutral probability {p:.6f} outside [0, 1]; increase steps")
    disc = 1 / growth

    values = np.maximum(strike - x0 * u ** (2.0 * np.arange(steps + 1) - steps), 0.0)
    for i in range(steps - 1, -1, -1):
        spot = x0 * u ** (2.0 * np.arange(i + 1) - i)
        values = np.maximum(disc * (p * values[1:] + (1 - p) * values[:-1]), strike - spot)
    return float(values[0])


@dataclass
class BruteForceResult:
    min_price: float
    argmin: RateMatrix
    prices: List[float] = field(default_factory=list)
    matrices: List[RateMatrix] = field(default_factory=list)


def _prices_at_start(problem, matrices, grid, settings, threads) -> List[float]:
    def one(q: RateMatrix) -> float:
        return solve_constant(problem, q, grid, settings).price()

    if threads <= 1:
        return [one(q) for q in matrices]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, matrices))


def brute_force_min(
    problem: ProblemSpec,
    boxes: RateBoxes,
    grid: Grid,
    per_box_samples: int = 2,
    settings: Optional[SolverSettings] = None,
    threads: int = 1,
) -> BruteForceResult:
    """Minimum of v(x0, y0, T) over an endpoint-inclusive Cartesian product of box samples"""
    if per_box_samples < 2:
        raise OracleError(f"per_box_samples must be >= 2, got {per_box_samples}")
    count = boxes.sample_count(per_box_samples)
    if count > MAX_BRUTE_FORCE:
        raise OracleError(f"{count} matrices exceed the limit of {MAX_BRUTE_FORCE}; use coarser sampling")
    matrices = boxes.grid_samples(per_box_samples)
    logger.info(f"Brute force over {len(matrices)} constant matrices")
    prices = _prices_at_start(problem, matrices, grid, settings, threads)
    best = min(prices)
    first = next(i for i, p in enumerate(prices) if p <= best + ARGMIN_TOL)
    return BruteForceResult(min_price=best, argmin=matrices[first], prices=prices, matrices=matrices)


@dataclass
class DominanceResult:
    extremal: RateMatrix
    worst_margin: float
    margins: List[float]
    matrices: List[RateMatrix]

    @property
    def passed(self) -> bool:
        return self.worst_margin >= -DOMINANCE_TOL


def dominance_sweep(
    problem: ProblemSpec,
    boxes: RateBoxes,
    grid: Grid,
    n_samples: int = 20,
    seed: int = 0,
    settings: Optional[SolverSettings] = None,
    threads: int = 1,
) -> DominanceResult:
    """Nodewise min of v(q) - v(extremal) over sampled admissible q and every endpoint matrix"""
    ext = extremal_matrix(boxes, sigma_monotonicity(problem.sigma))
    rng = np.random.Generator(np.random.Philox(seed))
    matrices = [boxes.sample_uniform(rng) for _ in range(n_samples)] + boxes.endpoint_matrices()
    base = solve_constant(problem, ext, grid, settings)

    def margin(q: RateMatrix) -> float:
        return float(np.min(solve_constant(problem, q, grid, settings).v - base.v))

    if threads <= 1:
        margins = [margin(q) for q in matrices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            margins = list(pool.map(margin, matrices))
    worst = min(margins)
    logger.info(f"Dominance sweep over {len(matrices)} matrices: worst nodewise margin {worst:.3e}")
    return DominanceResult(extremal=ext, worst_margin=worst, margins=margins, matrices=matrices)


def exact_chain_switch_counts(q: RateMatrix, y0: int, horizon: float, n: int, seed: int) -> np.ndarray:
    """Number of jumps on [0, horizon] per path, simulated with exponential holding times"""
    report = validate_rate_matrix(q)
    if not report.ok:
        raise OracleError("invalid rate matrix: " + "; ".join(str(v) for v in report.violations))
    if not 1 <= y0 <= q.m or n < 1 or not horizon > 0:
        raise OracleError(f"bad chain request: y0={y0}, n={n}, horizon={horizon}")
    rng = np.random.Generator(np.random.Philox(seed))
    plus, minus = q.plus_rates(), q.minus_rates()
    state = np.full(n, y0 - 1)
    clock = np.zeros(n)
    counts = np.zeros(n, dtype=int)
    alive = np.ones(n, dtype=bool)
    while alive.any():
        idx = np.flatnonzero(alive)
        total = plus[state[idx]] + minus[state[idx]]
        hold = np.where(total > 0, rng.exponential(size=idx.size) / np.where(total > 0, total, 1.0), np.inf)
        clock[idx] += hold
        jumped = clock[idx] <= horizon
        alive[idx[~jumped]] = False
        moving = idx[jumped]
        up = rng.random(moving.size) * total[jumped] < plus[state[moving]]
        state[moving] += np.where(up, 1, -1)
        counts[moving] += 1
    return counts
