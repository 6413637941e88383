"""
Monte Carlo simulation of the regime-switching state under adapted rate strategies

Paths are generated in fixed-size blocks. Each block draws from two independent
Philox streams (diffusion and chain) keyed by (seed, block, stream), so results do
not depend on how many threads produce the blocks.
"""

from __future__ import annotations

import dataclasses
import math
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from .errors import MonteCarloError, RegressionError, UnsupportedDynamicsError
from .extremal import extremal_matrix
from .model import CEV, Monotonicity, PayoffSpec, ProblemSpec, RateBoxes, RateMatrix, linear_growth_constant

DIFFUSION_STREAM = 0
CHAIN_STREAM = 1
FLOOR_FACTOR = 1e-12
FLOOR_WARN_FRACTION = 0.01
DEFAULT_BLOCK_SIZE = 10000

Rates = Tuple[np.ndarray, np.ndarray]


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 63-bit seed for a labelled sub-experiment"""
    state = np.random.SeedSequence(seed, spawn_key=tuple(keys)).generate_state(1, np.uint64)[0]
    return int(state >> np.uint64(1))


def stream(seed: int, block: int, which: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block, which))))


# Rate strategies


class RateStrategy(ABC):
    """Adapted rate process: rates may only depend on (t, X_t, Y_t, running max of X)"""

    @abstractmethod
    def rates(self, t: float, x: np.ndarray, y: np.ndarray, running_max: np.ndarray) -> Rates:
        """Per-path (lambda_plus, lambda_minus) for regimes y (1-based)"""

    @abstractmethod
    def describe(self) -> str:
        ...


class Constant(RateStrategy):
    def __init__(self, q: RateMatrix, label: Optional[str] = None):
        self.q = q
        self._plus = q.plus_rates()
        self._minus = q.minus_rates()
        self.label = label

    def rates(self, t, x, y, running_max):
        return self._plus[y - 1], self._minus[y - 1]

    def describe(self) -> str:
        return self.label or f"constant {self.q.to_list()}"


class Extremal(Constant):
    def __init__(self, boxes: RateBoxes, mono: Monotonicity):
        super().__init__(extremal_matrix(boxes, mono), label=f"extremal ({Monotonicity(mono).value})")
        self.boxes = boxes


class RandomAdmissible(Constant):
    """A constant matrix drawn uniformly from the boxes"""

    def __init__(self, boxes: RateBoxes, seed: int):
        rng = np.random.Generator(np.random.Philox(seed))
        super().__init__(boxes.sample_uniform(rng))
        self.boxes = boxes
        self.seed = seed

    def describe(self) -> str:
        return f"random admissible (seed {self.seed}) {self.q.to_list()}"


FeedbackRule = Callable[[float, np.ndarray, np.ndarray, np.ndarray, RateBoxes], Rates]


@dataclass(frozen=True)
class ThresholdFeedback:
    """Push the chain up (towards higher regimes) while X sits below a level"""

    level: float

    def __call__(self, t, x, y, running_max, boxes: RateBoxes) -> Rates:
        plus_lo, plus_hi = boxes.plus_bounds()
        minus_lo, minus_hi = boxes.minus_bounds()
        idx = y - 1
        below = x < self.level
        return (
            np.where(below, plus_hi[idx], plus_lo[idx]),
            np.where(below, minus_lo[idx], minus_hi[idx]),
        )

    def describe(self) -> str:
        return f"threshold feedback (level {self.level:g})"


@dataclass(frozen=True)
class DrawdownFeedback:
    """Push the chain up once X has fallen a given fraction below its running maximum"""

    drawdown: float

    def __post_init__(self):
        if not 0 < self.drawdown < 1:
            raise MonteCarloError(f"drawdown must lie in (0, 1), got {self.drawdown}")

    def __call__(self, t, x, y, running_max, boxes: RateBoxes) -> Rates:
        plus_lo, plus_hi = boxes.plus_bounds()
        minus_lo, minus_hi = boxes.minus_bounds()
        idx = y - 1
        falling = x <= (1 - self.drawdown) * running_max
        return (
            np.where(falling, plus_hi[idx], plus_lo[idx]),
            np.where(falling, minus_lo[idx], minus_hi[idx]),
        )

    def describe(self) -> str:
        return f"drawdown feedback ({self.drawdown:.0%})"


class Feedback(RateStrategy):
    """Wraps a feedback rule and clamps whatever it emits into the boxes"""

    def __init__(self, boxes: RateBoxes, rule: FeedbackRule):
        self.boxes = boxes
        self.rule = rule
        self._plus = boxes.plus_bounds()
        self._minus = boxes.minus_bounds()

    def rates(self, t, x, y, running_max):
        plus, minus = self.rule(t, x, y, running_max, self.boxes)
        idx = y - 1
        plus = np.clip(plus, self._plus[0][idx], self._plus[1][idx])
        minus = np.clip(minus, self._minus[0][idx], self._minus[1][idx])
        return plus, minus

    def describe(self) -> str:
        describe = getattr(self.rule, "describe", None)
        return describe() if callable(describe) else f"feedback {getattr(self.rule, '__name__', 'rule')}"


# Paths


@dataclass(frozen=True, eq=False)
class PathBatch:
    n_paths: int
    dt: float
    times: np.ndarray
    x: np.ndarray
    y: np.ndarray
    seed: int
    streams: Tuple[int, int] = (DIFFUSION_STREAM, CHAIN_STREAM)
    floor_events: int = 0
    floored_paths: int = 0

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def n_steps(self) -> int:
        return self.times.size - 1

    @property
    def floor_fraction(self) -> float:
        return self.floored_paths / self.n_paths if self.n_paths else 0.0

    @property
    def warning(self) -> bool:
        """More than 1% of paths hit the positivity floor"""
        return self.floor_fraction > FLOOR_WARN_FRACTION


def step_times(horizon: float, dt: float) -> np.ndarray:
    if not dt > 0:
        raise MonteCarloError(f"dt must be > 0, got {dt}")
    if dt > horizon / 10 * (1 + 1e-12):
        raise MonteCarloError(f"dt={dt} exceeds horizon/10={horizon / 10}")
    n_steps = max(10, int(round(horizon / dt)))
    return np.linspace(0.0, horizon, n_steps + 1)


def evolve_paths(
    problem: ProblemSpec,
    strategy: RateStrategy,
    times: np.ndarray,
    normals: np.ndarray,
    uniforms: np.ndarray,
) -> Tuple[np.ndarray, np.ndarray, int, int]:
    """
    Euler-Maruyama for X and a single-switch-per-step chain for Y, from pre-drawn noise.

    normals has shape (n, steps); uniforms has shape (n, steps, 2): the first column
    decides whether the chain switches, the second its direction.
    Returns x, y (1-based), total floor events and number of floored paths.
    """
    n, steps = normals.shape
    if times.size != steps + 1 or uniforms.shape != (n, steps, 2):
        raise MonteCarloError("noise arrays do not match the time grid")
    x = np.empty((n, steps + 1))
    y = np.empty((n, steps + 1), dtype=np.int16)
    x[:, 0] = problem.x0
    y[:, 0] = problem.y0
    running_max = np.full(n, float(problem.x0))
    sigma = np.asarray(problem.sigma)
    is_cev = isinstance(problem.dynamics, CEV)
    floor = FLOOR_FACTOR * problem.x0
    floored = np.zeros(n, dtype=bool)
    floor_events = 0

    for k in range(steps):
        t = times[k]
        dt = times[k + 1] - times[k]
        xk = x[:, k]
        yk = y[:, k]
        lam_plus, lam_minus = strategy.rates(t, xk, yk, running_max)

        vol = problem.dynamics.a(xk) * sigma[yk - 1]
        xn = xk + problem.drift(xk) * dt + vol * math.sqrt(dt) * normals[:, k]
        if is_cev:
            hit = xn < floor
            if hit.any():
                floor_events += int(hit.sum())
                floored |= hit
                xn = np.where(hit, floor, xn)

        total = lam_plus + lam_minus
        switch = uniforms[:, k, 0] < -np.expm1(-total * dt)
        up = uniforms[:, k, 1] * total < lam_plus
        x[:, k + 1] = xn
        y[:, k + 1] = yk + np.where(switch, np.where(up, 1, -1), 0)
        np.maximum(running_max, xn, out=running_max)

    return x, y, floor_events, int(floored.sum())


def _simulate_block(problem, strategy, times, seed, block, size) -> PathBatch:
    steps = times.size - 1
    normals = stream(seed, block, DIFFUSION_STREAM).standard_normal((size, steps))
    uniforms = stream(seed, block, CHAIN_STREAM).random((size, steps, 2))
    x, y, events, floored = evolve_paths(problem, strategy, times, normals, uniforms)
    return PathBatch(
        n_paths=size,
        dt=float(times[1] - times[0]),
        times=times,
        x=x,
        y=y,
        seed=seed,
        floor_events=events,
        floored_paths=floored,
    )


def simulate_blocks(
    problem: ProblemSpec,
    strategy: RateStrategy,
    n: int,
    dt: float,
    seed: int,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> Iterator[PathBatch]:
    """Yield path blocks in block order; block b always carries the same paths"""
    if n < 1:
        raise MonteCarloError(f"need at least one path, got n={n}")
    if block_size < 1:
        raise MonteCarloError(f"block_size must be >= 1, got {block_size}")
    times = step_times(problem.horizon_T, dt)
    sizes = [min(block_size, n - start) for start in range(0, n, block_size)]

    def make(block: int) -> PathBatch:
        return _simulate_block(problem, strategy, times, seed, block, sizes[block])

    if threads <= 1:
        for block in range(len(sizes)):
            yield make(block)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        for start in range(0, len(sizes), threads):
            yield from pool.map(make, range(start, min(start + threads, len(sizes))))


def concat_batches(batches: Sequence[PathBatch]) -> PathBatch:
    if not batches:
        raise MonteCarloError("no batches to combine")
    first = batches[0]
    return dataclasses.replace(
        first,
        n_paths=sum(b.n_paths for b in batches),
        x=np.concatenate([b.x for b in batches]),
        y=np.concatenate([b.y for b in batches]),
        floor_events=sum(b.floor_events for b in batches),
        floored_paths=sum(b.floored_paths for b in batches),
    )


def simulate(
    problem: ProblemSpec,
    strategy: RateStrategy,
    n: int,
    dt: float,
    seed: int,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> PathBatch:
    started = time.perf_counter()
    batch = concat_batches(list(simulate_blocks(problem, strategy, n, dt, seed, block_size, threads)))
    if batch.warning:
        logger.warning(f"{batch.floor_fraction:.2%} of paths hit the positivity floor ({batch.floor_events} events)")
    logger.debug(f"Simulated {n} paths x {batch.n_steps} steps in {time.perf_counter() - started:.2f}s")
    return batch


def save_paths(batch: PathBatch, path: Path) -> Path:
    """Persist raw paths (compressed npz)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(path, times=batch.times, x=batch.x, y=batch.y)
    return path


def path_summary(batch: PathBatch) -> Dict[str, object]:
    m = int(batch.y.max())
    switches = np.count_nonzero(np.diff(batch.y, axis=1), axis=1)
    occupation = {int(r): float(np.mean(batch.y[:, :-1] == r)) for r in range(1, m + 1)}
    return {
        "n_paths": batch.n_paths,
        "n_steps": batch.n_steps,
        "dt": batch.dt,
        "mean_x_T": float(np.mean(batch.x[:, -1])),
        "std_x_T": float(np.std(batch.x[:, -1], ddof=1)) if batch.n_paths > 1 else 0.0,
        "mean_switches": float(np.mean(switches)),
        "occupation": occupation,
        "floor_events": batch.floor_events,
        "floor_fraction": batch.floor_fraction,
    }


# Stopping rules


class StoppingRule(ABC):
    """Decides stop/continue from (t, X_t, Y_t) only"""

    horizon: Optional[float] = None

    @abstractmethod
    def stop_mask(self, k: int, t: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ...

    @abstractmethod
    def describe(self) -> str:
        ...

    def stop_indices(self, batch: PathBatch) -> np.ndarray:
        """First stopping column per path, capped at maturity"""
        last = batch.n_steps
        idx = np.full(batch.n_paths, last)
        alive = np.ones(batch.n_paths, dtype=bool)
        for k in range(last):
            hit = alive & self.stop_mask(k, batch.times[k], batch.x[:, k], batch.y[:, k])
            idx[hit] = k
            alive &= ~hit
            if not alive.any():
                break
        return idx


class Immediate(StoppingRule):
    def stop_mask(self, k, t, x, y):
        return np.ones(x.shape, dtype=bool)

    def stop_indices(self, batch):
        return np.zeros(batch.n_paths, dtype=int)

    def describe(self) -> str:
        return "immediate"


class AtMaturity(StoppingRule):
    def stop_mask(self, k, t, x, y):
        return np.zeros(x.shape, dtype=bool)

    def stop_indices(self, batch):
        return np.full(batch.n_paths, batch.n_steps)

    def describe(self) -> str:
        return "at maturity"


class Boundary(StoppingRule):
    """
    Stop at calendar time t once X_t <= s*(T - t, Y_t).

    s* is interpolated linearly in time-to-maturity; below the first positive layer the
    first positive layer is used. Layers without an exercise region never stop.
    """

    def __init__(self, t_nodes: np.ndarray, s_star: np.ndarray, label: str = "boundary"):
        self.t_nodes = np.asarray(t_nodes, dtype=float)
        self.s_star = np.asarray(s_star, dtype=float)
        self.horizon = float(self.t_nodes[-1])
        self.label = label
        finite = np.isfinite(self.s_star)
        self._finite = finite.astype(float)
        self._filled = np.where(finite, self.s_star, 0.0)

    @classmethod
    def from_curves(cls, curves, label: str = "boundary") -> "Boundary":
        return cls(curves.t_nodes, curves.s_star, label)

    def thresholds(self, t: float) -> np.ndarray:
        """s*(T - t, y) for every regime; -inf where no exercise region exists"""
        tau = max(self.horizon - t, self.t_nodes[1])
        out = np.empty(self.s_star.shape[1])
        for j in range(out.size):
            valid = np.interp(tau, self.t_nodes, self._finite[:, j]) > 1 - 1e-12
            out[j] = np.interp(tau, self.t_nodes, self._filled[:, j]) if valid else -np.inf
        return out

    def stop_mask(self, k, t, x, y):
        return x <= self.thresholds(t)[y - 1]

    def describe(self) -> str:
        return self.label


class Regression(StoppingRule):
    """Least-squares continuation estimates per (time column, regime)"""

    def __init__(
        self,
        times: np.ndarray,
        degree: int,
        coefficients: List[Dict[int, Tuple[float, float, np.ndarray]]],
        start_continuation: float,
        payoff: PayoffSpec,
    ):
        self.times = np.asarray(times, dtype=float)
        self.horizon = float(self.times[-1])
        self.degree = degree
        self.coefficients = coefficients
        self.start_continuation = start_continuation
        self.payoff = payoff

    def continuation(self, k: int, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Fitted continuation value; +inf where no fit exists for the column and regime"""
        out = np.full(x.shape, np.inf)
        for regime, (centre, spread, beta) in self.coefficients[k].items():
            sel = y == regime
            if sel.any():
                out[sel] = _basis((x[sel] - centre) / spread, self.degree) @ beta
        return out

    def stop_mask(self, k, t, x, y):
        g = self.payoff.evaluate(x)
        if k == 0:
            return g > self.start_continuation
        return (g > 0) & (g > self.continuation(k, x, y))

    def stop_indices(self, batch):
        if batch.times.size != self.times.size or not np.allclose(batch.times, self.times):
            raise MonteCarloError("regression rule was fitted on a different time grid")
        return super().stop_indices(batch)

    def describe(self) -> str:
        return f"regression (degree {self.degree})"


def _basis(z: np.ndarray, degree: int) -> np.ndarray:
    return np.vander(z, N=degree + 1, increasing=True)


def fit_regression_rule(paths: PathBatch, alpha: float, payoff: PayoffSpec, basis_degree: int = 3) -> Regression:
    """Backward-induction least squares on in-the-money paths, one regression per regime and column"""
    if not 2 <= basis_degree <= 5:
        raise MonteCarloError(f"basis_degree must lie in 2..5, got {basis_degree}")
    if paths.n_paths < 1000:
        raise MonteCarloError(f"regression needs at least 1000 paths, got {paths.n_paths}")
    n_cols = paths.n_steps + 1
    min_samples = 10 * (basis_degree + 1)
    coefficients: List[Dict[int, Tuple[float, float, np.ndarray]]] = [{} for _ in range(n_cols)]
    cash = payoff.evaluate(paths.x[:, -1])
    regimes = np.unique(paths.y)

    for k in range(n_cols - 2, 0, -1):
        cash = cash * math.exp(-alpha * (paths.times[k + 1] - paths.times[k]))
        xk = paths.x[:, k]
        g = payoff.evaluate(xk)
        for regime in regimes:
            sel = np.flatnonzero((paths.y[:, k] == regime) & (g > 0))
            if sel.size < min_samples:
                continue
            centre = float(np.mean(xk[sel]))
            spread = float(np.std(xk[sel])) or 1.0
            design = _basis((xk[sel] - centre) / spread, basis_degree)
            if np.linalg.matrix_rank(design) < basis_degree + 1:
                raise RegressionError(f"rank-deficient regression at column {k}, regime {int(regime)}")
            beta, *_ = np.linalg.lstsq(design, cash[sel], rcond=None)
            coefficients[k][int(regime)] = (centre, spread, beta)
            exercise = g[sel] > design @ beta
            cash[sel[exercise]] = g[sel[exercise]]

    cash = cash * math.exp(-alpha * (paths.times[1] - paths.times[0]))
    start = float(np.mean(cash))
    logger.debug(f"Fitted regression rule on {paths.n_paths} paths; continuation at start {start:.6f}")
    return Regression(paths.times, basis_degree, coefficients, start, payoff)


# Pricing


def discounted_payoffs(paths: PathBatch, rule: StoppingRule, alpha: float, payoff: PayoffSpec) -> np.ndarray:
    if rule.horizon is not None and abs(rule.horizon - paths.horizon) > 1e-9 * max(1.0, paths.horizon):
        raise MonteCarloError(f"rule horizon {rule.horizon} does not match batch horizon {paths.horizon}")
    idx = rule.stop_indices(paths)
    rows = np.arange(paths.n_paths)
    return np.exp(-alpha * paths.times[idx]) * payoff.evaluate(paths.x[rows, idx])


def summarize(values: np.ndarray) -> Tuple[float, float]:
    """Mean and standard error; exact when every value is identical"""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise MonteCarloError("no values to summarise")
    if np.all(values == values[0]):
        return float(values[0]), 0.0
    return float(np.mean(values)), float(np.std(values, ddof=1) / math.sqrt(values.size))


def price(paths: PathBatch, rule: StoppingRule, alpha: float, payoff: PayoffSpec) -> Tuple[float, float]:
    return summarize(discounted_payoffs(paths, rule, alpha, payoff))


def price_blocks(
    problem: ProblemSpec,
    strategy: RateStrategy,
    rule: StoppingRule,
    n: int,
    dt: float,
    seed: int,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
) -> Tuple[float, float, float]:
    """Streaming price over blocks; returns (estimate, std_error, floor_fraction)"""
    values = []
    floored = 0
    for batch in simulate_blocks(problem, strategy, n, dt, seed, block_size, threads):
        values.append(discounted_payoffs(batch, rule, problem.alpha, problem.payoff))
        floored += batch.floored_paths
    fraction = floored / n
    if fraction > FLOOR_WARN_FRACTION:
        logger.warning(f"{fraction:.2%} of paths hit the positivity floor under {strategy.describe()}")
    estimate, se = summarize(np.concatenate(values))
    return estimate, se, fraction


# Moment bound


@dataclass(frozen=True)
class MomentCheck:
    q: float
    k_growth: float
    horizon: float
    empirical: float
    std_error: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.empirical <= self.bound


def moment_log_bound(x0: float, k_growth: float, t: float, q: float) -> float:
    """Natural log of the moment bound"""
    return 0.5 * q * (math.log1p(4 * x0**2) + 8 * k_growth**2 * t * (4 + t))


def moment_bound(x0: float, k_growth: float, t: float, q: float) -> float:
    """((1 + 4 x0^2) exp(8 K^2 t (4 + t)))^(q/2), inf once it overflows"""
    log_bound = moment_log_bound(x0, k_growth, t, q)
    return math.exp(log_bound) if log_bound < math.log(np.finfo(float).max) else math.inf


def default_moment_strategy(problem: ProblemSpec, boxes: Optional[RateBoxes] = None) -> Constant:
    if boxes is None:
        return Constant(RateMatrix.zeros(problem.m), label="frozen chain")
    if boxes.m != problem.m:
        raise MonteCarloError(f"boxes have {boxes.m} regimes but the problem has {problem.m}")
    q = RateMatrix.from_rates([lo for lo, _ in boxes.plus], [lo for lo, _ in boxes.minus])
    return Constant(q, label="lower box corner")


def moment_bound_check(
    problem: ProblemSpec,
    k_growth: float,
    q_exp: float,
    t: float,
    n: int,
    dt: float,
    seed: int,
    strategy: Optional[RateStrategy] = None,
    block_size: int = DEFAULT_BLOCK_SIZE,
    threads: int = 1,
    boxes: Optional[RateBoxes] = None,
) -> MomentCheck:
    """
    Empirical E[sup_{s<=t} |X_s|^q] against the linear-growth moment bound.

    The bound does not involve the rates. Without an explicit strategy the chain
    runs at the lower corner of `boxes`, which is admissible; with neither a
    strategy nor boxes the chain is frozen in y0.
    """
    if isinstance(problem.dynamics, CEV):
        raise UnsupportedDynamicsError("moment bound requires linear-growth coefficients; CEV is superlinear")
    minimal = linear_growth_constant(problem)
    if k_growth < minimal * (1 - 1e-12):
        raise MonteCarloError(f"k_growth={k_growth} is below the minimal linear-growth constant {minimal}")
    if q_exp < 0 or not t > 0:
        raise MonteCarloError(f"need q >= 0 and t > 0, got q={q_exp}, t={t}")
    bound = moment_bound(problem.x0, k_growth, t, q_exp)
    if q_exp == 0:
        return MomentCheck(q=q_exp, k_growth=k_growth, horizon=t, empirical=1.0, std_error=0.0, bound=bound)

    sub = dataclasses.replace(problem, horizon_T=t)
    strategy = strategy or default_moment_strategy(problem, boxes)
    sups = [
        np.max(np.abs(batch.x), axis=1) ** q_exp
        for batch in simulate_blocks(sub, strategy, n, dt, seed, block_size, threads)
    ]
    empirical, se = summarize(np.concatenate(sups))
    logger.info(f"Moment q={q_exp:g}: empirical {empirical:.6g} vs bound {bound:.6g}")
    return MomentCheck(q=q_exp, k_growth=k_growth, horizon=t, empirical=empirical, std_error=se, bound=bound)
