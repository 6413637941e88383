"""
Saddle-point check for the rate-setter vs. stopper game

The candidate pair is the extremal constant matrix together with the exercise
boundary of its PDE surface. Left challengers replace the stopping rule, right
challengers replace the rate strategy; every estimate uses its own seed.
"""

from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple

from loguru import logger
from pydantic import BaseModel

from .errors import GameError
from .extremal import extremal_matrix, opposite_extremal_matrix
from .mc import (
    DEFAULT_BLOCK_SIZE,
    AtMaturity,
    Boundary,
    Constant,
    DrawdownFeedback,
    Feedback,
    Immediate,
    RandomAdmissible,
    RateStrategy,
    StoppingRule,
    ThresholdFeedback,
    derive_seed,
    fit_regression_rule,
    price_blocks,
    simulate,
)
from .model import Monotonicity, ProblemSpec, RateBoxes, RateMatrix, sigma_monotonicity
from .pde import Grid, SolverSettings, extract_boundary, grid_bias, solve_constant

SIGMAS = 3.0
REGRESSION_FIT_PATHS = 50_000

CENTER_KEY = 0
LEFT_KEY = 1
RIGHT_KEY = 2
FIT_KEY = 3
RANDOM_KEY = 4
LOWER_BOUND_KEY = 5


class Estimate(BaseModel):
    value: float
    std_error: float


class Challenger(BaseModel):
    description: str
    value: float
    std_error: float
    margin: float
    allowance: float
    passed: bool


class SaddleReport(BaseModel):
    center: Estimate
    pde_value: float
    grid_bias: float
    consistency_passed: bool
    left_challengers: List[Challenger]
    right_challengers: List[Challenger]

    @property
    def left_passed(self) -> bool:
        return all(c.passed for c in self.left_challengers)

    @property
    def right_passed(self) -> bool:
        return all(c.passed for c in self.right_challengers)

    @property
    def passed(self) -> bool:
        return self.consistency_passed and self.left_passed and self.right_passed

    def to_table(self) -> str:
        rows = [
            f"center J(pi, tau) = {self.center.value:.6f} +/- {self.center.std_error:.6f}"
            f"   PDE {self.pde_value:.6f}   grid bias {self.grid_bias:.2e}",
            f"{'side':<6} {'challenger':<48} {'J':>12} {'se':>10} {'margin':>12} {'verdict':>8}",
        ]
        for side, group in (("left", self.left_challengers), ("right", self.right_challengers)):
            for c in group:
                rows.append(
                    f"{side:<6} {c.description[:48]:<48} {c.value:>12.6f} {c.std_error:>10.6f} "
                    f"{c.margin:>12.6f} {'PASS' if c.passed else 'FAIL':>8}"
                )
        return "\n".join(rows)


def evaluate_J(
    problem: ProblemSpec,
    strategy: RateStrategy,
    rule: StoppingRule,
    n: int,
    dt: float,
    seed: int,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> Tuple[float, float]:
    """E[exp(-alpha tau) g(X_tau)] under a rate strategy and a stopping rule"""
    estimate, se, _ = price_blocks(problem, strategy, rule, n, dt, seed, block_size, threads)
    return estimate, se


def _require_monotone(problem: ProblemSpec) -> Monotonicity:
    mono = sigma_monotonicity(problem.sigma)
    if mono is Monotonicity.NON_MONOTONE:
        raise GameError("sigma is not monotone: no candidate extremal matrix for the saddle check")
    if not problem.payoff.is_put:
        raise GameError("the saddle check needs a put payoff for the boundary stopping rule")
    return mono


def candidate_rule(problem: ProblemSpec, pi_hat: RateMatrix, grid: Grid, settings=None) -> Tuple[Boundary, float]:
    """Boundary stopping rule of the extremal surface and the PDE value at (x0, y0, T)"""
    surface = solve_constant(problem, pi_hat, grid, settings)
    return Boundary.from_curves(extract_boundary(surface), label="extremal boundary"), surface.price()


def default_left_rules(
    problem: ProblemSpec,
    pi_hat: RateMatrix,
    n: int,
    dt: float,
    seed: int,
    basis_degree: int = 3,
    block_size: int = DEFAULT_BLOCK_SIZE,
) -> List[StoppingRule]:
    """Immediate, at maturity, and a regression best response to pi_hat fitted on its own paths"""
    n_fit = max(1000, min(n, REGRESSION_FIT_PATHS))
    fit_batch = simulate(problem, Constant(pi_hat), n_fit, dt, derive_seed(seed, FIT_KEY), block_size)
    return [Immediate(), AtMaturity(), fit_regression_rule(fit_batch, problem.alpha, problem.payoff, basis_degree)]


def default_right_strategies(problem: ProblemSpec, boxes: RateBoxes, seed: int, n_random: int = 5) -> List[RateStrategy]:
    mono = _require_monotone(problem)
    strategies: List[RateStrategy] = [RandomAdmissible(boxes, derive_seed(seed, RANDOM_KEY, i)) for i in range(n_random)]
    strategies.append(Feedback(boxes, ThresholdFeedback(level=problem.x0)))
    strategies.append(Feedback(boxes, DrawdownFeedback(drawdown=0.1)))
    strategies.append(Constant(opposite_extremal_matrix(boxes, mono), label="opposite extremal"))
    return strategies


def default_lower_bound_strategies(problem: ProblemSpec, boxes: RateBoxes, seed: int, n_random: int = 3) -> List[RateStrategy]:
    mono = _require_monotone(problem)
    return [Constant(extremal_matrix(boxes, mono), label="extremal")] + default_right_strategies(
        problem, boxes, seed, n_random
    )


def saddle_check(
    problem: ProblemSpec,
    boxes: RateBoxes,
    left_rules: Sequence[StoppingRule],
    right_strategies: Sequence[RateStrategy],
    n: int,
    dt: float,
    seed: int,
    grid: Grid,
    settings: Optional[SolverSettings] = None,
    bias: Optional[float] = None,
    bias_floor: float = 0.0,
    width_mult: float = 5.0,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> SaddleReport:
    mono = _require_monotone(problem)
    pi_hat = extremal_matrix(boxes, mono)
    tau_hat, pde_value = candidate_rule(problem, pi_hat, grid, settings)
    if bias is None:
        bias = grid_bias(problem, pi_hat, grid.nx, grid.nt, width_mult, settings)
    allowance_bias = bias + bias_floor

    def run(strategy: RateStrategy, rule: StoppingRule, key: Tuple[int, ...]) -> Tuple[float, float]:
        return evaluate_J(problem, strategy, rule, n, dt, derive_seed(seed, *key), block_size, threads)

    center, center_se = run(Constant(pi_hat), tau_hat, (CENTER_KEY,))
    logger.info(f"Saddle center J = {center:.6f} +/- {center_se:.6f} (PDE {pde_value:.6f})")
    consistent = abs(center - pde_value) <= SIGMAS * center_se + allowance_bias

    left: List[Challenger] = []
    for i, rule in enumerate(left_rules):
        value, se = run(Constant(pi_hat), rule, (LEFT_KEY, i))
        allowance = SIGMAS * math.hypot(center_se, se)
        left.append(
            Challenger(
                description=rule.describe(),
                value=value,
                std_error=se,
                margin=value - center,
                allowance=allowance,
                passed=value <= center + allowance,
            )
        )

    right: List[Challenger] = []
    for j, strategy in enumerate(right_strategies):
        value, se = run(strategy, tau_hat, (RIGHT_KEY, j))
        allowance = SIGMAS * math.hypot(center_se, se) + allowance_bias
        right.append(
            Challenger(
                description=strategy.describe(),
                value=value,
                std_error=se,
                margin=value - center,
                allowance=allowance,
                passed=value >= center - allowance,
            )
        )

    return SaddleReport(
        center=Estimate(value=center, std_error=center_se),
        pde_value=pde_value,
        grid_bias=allowance_bias,
        consistency_passed=consistent,
        left_challengers=left,
        right_challengers=right,
    )


def lower_bound_check(
    problem: ProblemSpec,
    boxes: RateBoxes,
    strategies: Sequence[RateStrategy],
    n: int,
    dt: float,
    seed: int,
    grid: Grid,
    settings: Optional[SolverSettings] = None,
    bias: Optional[float] = None,
    bias_floor: float = 0.0,
    width_mult: float = 5.0,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> Tuple[float, List[Challenger]]:
    """
    Every admissible strategy stopped at the extremal boundary must pay at least the
    extremal PDE value, up to 3 standard errors and the grid-bias allowance.
    """
    mono = _require_monotone(problem)
    pi_hat = extremal_matrix(boxes, mono)
    tau_hat, pde_value = candidate_rule(problem, pi_hat, grid, settings)
    if bias is None:
        bias = grid_bias(problem, pi_hat, grid.nx, grid.nt, width_mult, settings)
    results = []
    for j, strategy in enumerate(strategies):
        value, se = evaluate_J(
            problem, strategy, tau_hat, n, dt, derive_seed(seed, LOWER_BOUND_KEY, j), block_size, threads
        )
        allowance = SIGMAS * se + bias + bias_floor
        results.append(
            Challenger(
                description=strategy.describe(),
                value=value,
                std_error=se,
                margin=value - pde_value,
                allowance=allowance,
                passed=value >= pde_value - allowance,
            )
        )
    return pde_value, results
