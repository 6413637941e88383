"""
Finite-difference solver for the regime-coupled obstacle problem

Marches v(x, y, t) forward in time-to-maturity from v(., ., 0) = g with a
theta-scheme (Crank-Nicolson after fully implicit startup layers). Each layer is a
linear complementarity problem over the whole space x regime block, solved by
projected SOR with a red-black ordering on (node + regime) parity so that every
half-sweep is a vectorised Gauss-Seidel pass.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
from loguru import logger

from .errors import PDEConvergenceError, PDEError, PolicyIterationError, UnsupportedPayoffError
from .extremal import rate_field_from_surface
from .model import (
    CEV,
    GBM,
    Monotonicity,
    ProblemSpec,
    RateBoxes,
    RateMatrix,
    sigma_monotonicity,
    validate_rate_matrix,
)

RateChoice = Tuple[np.ndarray, np.ndarray]


class Transform(str, Enum):
    IDENTITY = "identity"
    LOG = "log"


@dataclass(frozen=True)
class SolverSettings:
    """Numerical knobs shared by the constant-rate and worst-case solvers"""

    omega: float = 1.2
    tol: float = 1e-8
    max_iter: int = 10000
    rannacher_steps: int = 2
    mask_tol: float = 1e-9
    max_policy_sweeps: int = 10
    tie_tol: Optional[float] = None

    def __post_init__(self):
        if not 0 < self.omega < 2:
            raise PDEError(f"omega must lie in (0, 2), got {self.omega}")
        if not self.tol > 0:
            raise PDEError(f"tol must be > 0, got {self.tol}")
        if self.max_iter < 1 or self.max_policy_sweeps < 1:
            raise PDEError("iteration budgets must be positive")

    @property
    def effective_tie_tol(self) -> float:
        return self.tie_tol if self.tie_tol is not None else 10 * self.tol


@dataclass(frozen=True, eq=False)
class Grid:
    x_nodes: np.ndarray
    t_nodes: np.ndarray
    transform: Transform = Transform.IDENTITY

    def __post_init__(self):
        x = np.array(self.x_nodes, dtype=float)
        t = np.array(self.t_nodes, dtype=float)
        if x.ndim != 1 or x.size < 3:
            raise PDEError(f"grid needs at least 3 space nodes, got {x.size}")
        if np.any(np.diff(x) <= 0):
            raise PDEError("space nodes must be strictly increasing")
        if t.ndim != 1 or t.size < 2:
            raise PDEError(f"grid needs at least 2 time nodes, got {t.size}")
        if t[0] != 0 or np.any(np.diff(t) <= 0):
            raise PDEError("time nodes must start at 0 and increase")
        transform = Transform(self.transform)
        if transform is Transform.LOG and np.any(x <= 0):
            raise PDEError("log transform requires all space nodes > 0")
        xi = np.log(x) if transform is Transform.LOG else x
        steps = np.diff(xi)
        if not np.allclose(steps, steps[0], rtol=1e-8, atol=0.0):
            raise PDEError("space nodes must be uniform in the transformed coordinate")
        for arr in (x, t):
            arr.setflags(write=False)
        object.__setattr__(self, "x_nodes", x)
        object.__setattr__(self, "t_nodes", t)
        object.__setattr__(self, "transform", transform)

    @property
    def nx(self) -> int:
        return self.x_nodes.size

    @property
    def nt(self) -> int:
        """Number of time nodes, t = 0 included"""
        return self.t_nodes.size

    @property
    def n_steps(self) -> int:
        return self.t_nodes.size - 1

    @property
    def h(self) -> float:
        xi = np.log(self.x_nodes) if self.transform is Transform.LOG else self.x_nodes
        return float((xi[-1] - xi[0]) / (self.nx - 1))

    @property
    def horizon(self) -> float:
        return float(self.t_nodes[-1])

    def same_as(self, other: "Grid") -> bool:
        return (
            self.transform is other.transform
            and np.array_equal(self.x_nodes, other.x_nodes)
            and np.array_equal(self.t_nodes, other.t_nodes)
        )


@dataclass(frozen=True, eq=False)
class ValueSurface:
    v: np.ndarray
    exercise_mask: np.ndarray
    grid: Grid
    problem: ProblemSpec
    mask_tol: float = 1e-9

    def __post_init__(self):
        shape = (self.grid.nx, self.problem.m, self.grid.nt)
        if self.v.shape != shape or self.exercise_mask.shape != shape:
            raise PDEError(f"surface arrays must have shape {shape}, got {self.v.shape}")
        self.v.setflags(write=False)
        self.exercise_mask.setflags(write=False)

    def payoff_on_grid(self) -> np.ndarray:
        return self.problem.payoff.evaluate(self.grid.x_nodes)

    def price(self, y: Optional[int] = None) -> float:
        """Value at (x0, y, T); y defaults to the problem's initial regime"""
        return value_at(self, x=None, y=y)


@dataclass(frozen=True, eq=False)
class RateField:
    lambda_plus: np.ndarray
    lambda_minus: np.ndarray


@dataclass(frozen=True, eq=False)
class BoundaryCurves:
    """s*(t, y) per time layer (rows) and regime (columns); NaN where undefined"""

    t_nodes: np.ndarray
    s_star: np.ndarray

    def curve(self, y: int) -> np.ndarray:
        return self.s_star[:, y - 1]


# Grid construction


def _anchored_nodes(lo: float, hi: float, anchor: float, n: int) -> np.ndarray:
    """n uniform nodes covering [lo, hi] with anchor exactly on a node"""
    h = (hi - lo) / (n - 1)
    left = int(min(max(round((anchor - lo) / h), 1), n - 2))
    h = max((anchor - lo) / left, (hi - anchor) / (n - 1 - left))
    return anchor + h * (np.arange(n) - left)


def build_grid(
    problem: ProblemSpec,
    nx: int,
    nt: int,
    width_mult: float = 5.0,
    transform: Optional[Transform] = None,
) -> Grid:
    if nx < 3 or nt < 2 or not width_mult > 0:
        raise PDEError(f"need nx >= 3, nt >= 2, width_mult > 0; got {nx}, {nt}, {width_mult}")
    spread = width_mult * problem.sigma_max * math.sqrt(problem.horizon_T)
    dyn = problem.dynamics
    x0 = problem.x0
    if isinstance(dyn, GBM):
        transform = transform or Transform.LOG
        if transform is Transform.LOG:
            z = _anchored_nodes(math.log(x0) - spread, math.log(x0) + spread, math.log(x0), nx)
            x = np.exp(z)
            x[np.argmin(np.abs(z - math.log(x0)))] = x0
        else:
            x = _anchored_nodes(x0 * math.exp(-spread), x0 * math.exp(spread), x0, nx)
    elif isinstance(dyn, CEV):
        transform = Transform.IDENTITY
        x = _anchored_nodes(x0 * math.exp(-spread), x0 * math.exp(spread), x0, nx)
        if x[0] <= 0:
            raise PDEError(f"CEV grid must satisfy x_min > 0, got x_min={x[0]:.6g}; reduce width_mult or raise nx")
    else:
        transform = Transform.IDENTITY
        half = width_mult * float(dyn.a(np.array([x0]))[0]) * problem.sigma_max * math.sqrt(problem.horizon_T)
        x = _anchored_nodes(x0 - half, x0 + half, x0, nx)
    t = np.linspace(0.0, problem.horizon_T, nt)
    return Grid(x_nodes=x, t_nodes=t, transform=transform)


# Discrete operator


def _coefficients(problem: ProblemSpec, grid: Grid) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(lower, upper, centre) stencil weights of the spatial operator minus alpha, shape (nx, m)"""
    x = grid.x_nodes[:, None]
    regimes = np.arange(problem.m)[None, :]
    s = problem.diffusion(x, regimes)
    b = np.broadcast_to(problem.drift(x), s.shape)
    if grid.transform is Transform.LOG:
        diff = 0.5 * s**2 / x**2
        conv = b / x - diff
    else:
        diff = 0.5 * s**2
        conv = np.array(b, dtype=float)
    h = grid.h
    lower = diff / h**2 - conv / (2 * h)
    upper = diff / h**2 + conv / (2 * h)
    # upwind where central differencing loses the M-matrix sign pattern
    bad = (lower < 0) | (upper < 0)
    if np.any(bad):
        lower = np.where(bad, np.where(conv > 0, diff / h**2, diff / h**2 - conv / h), lower)
        upper = np.where(bad, np.where(conv > 0, diff / h**2 + conv / h, diff / h**2), upper)
    centre = -(lower + upper) - problem.alpha
    return lower, upper, centre


def _apply_operator(v, lower, upper, centre, lam_plus, lam_minus) -> np.ndarray:
    out = (centre - lam_plus - lam_minus) * v
    out[1:] += lower[1:] * v[:-1]
    out[:-1] += upper[:-1] * v[1:]
    out[:, :-1] += lam_plus[:, :-1] * v[:, 1:]
    out[:, 1:] += lam_minus[:, 1:] * v[:, :-1]
    return out


def _colour_masks(nx: int, m: int) -> Tuple[np.ndarray, np.ndarray]:
    parity = (np.arange(nx)[:, None] + np.arange(m)[None, :]) % 2
    interior = np.zeros((nx, m), dtype=bool)
    interior[1:-1] = True
    return interior & (parity == 0), interior & (parity == 1)


def _psor_layer(prev, obstacle, stencil, lam_plus, lam_minus, theta, dt, settings, colours, layer):
    lower, upper, centre = stencil
    rhs = prev + (1 - theta) * dt * _apply_operator(prev, lower, upper, centre, lam_plus, lam_minus)
    k = theta * dt
    diag = 1 - k * (centre - lam_plus - lam_minus)
    a_lo, a_up = -k * lower, -k * upper
    a_plus, a_minus = -k * lam_plus, -k * lam_minus

    v = np.maximum(prev, obstacle)
    v[0] = obstacle[0]
    v[-1] = obstacle[-1]
    change = math.inf
    for it in range(1, settings.max_iter + 1):
        change = 0.0
        for mask in colours:
            off = np.zeros_like(v)
            off[1:] += a_lo[1:] * v[:-1]
            off[:-1] += a_up[:-1] * v[1:]
            off[:, :-1] += a_plus[:, :-1] * v[:, 1:]
            off[:, 1:] += a_minus[:, 1:] * v[:, :-1]
            target = (rhs - off) / diag
            candidate = np.maximum(obstacle, v + settings.omega * (target - v))
            delta = np.where(mask, candidate - v, 0.0)
            v += delta
            change = max(change, float(np.max(np.abs(delta))))
        if change <= settings.tol:
            return v, it
    raise PDEConvergenceError("projected SOR did not converge", residual=change, layer=layer)


def _march(
    problem: ProblemSpec,
    grid: Grid,
    settings: SolverSettings,
    choose_rates: Callable[[np.ndarray], RateChoice],
    policy_iteration: bool,
) -> Tuple[ValueSurface, RateField]:
    nx, m, steps = grid.nx, problem.m, grid.n_steps
    g = problem.payoff.evaluate(grid.x_nodes)
    obstacle = np.repeat(g[:, None], m, axis=1)
    stencil = _coefficients(problem, grid)
    colours = _colour_masks(nx, m)

    v = np.empty((nx, m, steps + 1))
    v[:, :, 0] = obstacle
    lam_plus_f = np.empty_like(v)
    lam_minus_f = np.empty_like(v)
    lam_plus, lam_minus = choose_rates(obstacle)
    lam_plus_f[:, :, 0], lam_minus_f[:, :, 0] = lam_plus, lam_minus

    started = time.perf_counter()
    total_iters = 0
    for n in range(1, steps + 1):
        dt = grid.t_nodes[n] - grid.t_nodes[n - 1]
        theta = 1.0 if n <= settings.rannacher_steps else 0.5
        prev = v[:, :, n - 1]
        lam_plus, lam_minus = choose_rates(prev)
        for _ in range(settings.max_policy_sweeps):
            layer, iters = _psor_layer(prev, obstacle, stencil, lam_plus, lam_minus, theta, dt, settings, colours, n)
            total_iters += iters
            if not policy_iteration:
                break
            new_plus, new_minus = choose_rates(layer)
            if np.array_equal(new_plus, lam_plus) and np.array_equal(new_minus, lam_minus):
                break
            lam_plus, lam_minus = new_plus, new_minus
        else:
            raise PolicyIterationError(
                f"rate field still changing after {settings.max_policy_sweeps} policy sweeps", layer=n
            )
        v[:, :, n] = layer
        lam_plus_f[:, :, n], lam_minus_f[:, :, n] = lam_plus, lam_minus

    scale = problem.payoff.scale_on(grid.x_nodes)
    mask = (v - obstacle[:, :, None]) < settings.mask_tol * scale
    logger.info(
        f"Solved {nx}x{m}x{steps} surface in {time.perf_counter() - started:.2f}s "
        f"({total_iters} PSOR iterations, {total_iters / steps:.1f} per layer)"
    )
    surface = ValueSurface(v=v, exercise_mask=mask, grid=grid, problem=problem, mask_tol=settings.mask_tol)
    return surface, RateField(lambda_plus=lam_plus_f, lambda_minus=lam_minus_f)


def _check_compatible(problem: ProblemSpec, grid: Grid) -> None:
    if abs(grid.horizon - problem.horizon_T) > 1e-12 * max(1.0, problem.horizon_T):
        raise PDEError(f"grid horizon {grid.horizon} does not match problem horizon {problem.horizon_T}")
    if isinstance(problem.dynamics, CEV) and grid.x_nodes[0] <= 0:
        raise PDEError("CEV grid must satisfy x_min > 0")


def solve_constant(
    problem: ProblemSpec,
    q: RateMatrix,
    grid: Grid,
    settings: Optional[SolverSettings] = None,
) -> ValueSurface:
    """Value surface for a fixed tridiagonal rate matrix"""
    settings = settings or SolverSettings()
    report = validate_rate_matrix(q)
    if not report.ok:
        raise PDEError("invalid rate matrix: " + "; ".join(str(v) for v in report.violations))
    if q.m != problem.m:
        raise PDEError(f"rate matrix has m={q.m}, problem has m={problem.m}")
    _check_compatible(problem, grid)
    shape = (grid.nx, problem.m)
    lam_plus = np.broadcast_to(q.plus_rates(), shape).copy()
    lam_minus = np.broadcast_to(q.minus_rates(), shape).copy()
    surface, _ = _march(problem, grid, settings, lambda _values: (lam_plus, lam_minus), policy_iteration=False)
    return surface


def solve_worstcase_hjb(
    problem: ProblemSpec,
    boxes: RateBoxes,
    grid: Grid,
    settings: Optional[SolverSettings] = None,
) -> Tuple[ValueSurface, RateField]:
    """Worst-case surface with rates chosen node by node from the bang-bang rule"""
    settings = settings or SolverSettings()
    if boxes.m != problem.m:
        raise PDEError(f"boxes describe m={boxes.m}, problem has m={problem.m}")
    _check_compatible(problem, grid)
    mono = sigma_monotonicity(problem.sigma)
    tie_break = mono if mono in (Monotonicity.INCREASING, Monotonicity.DECREASING) else None
    tie_tol = settings.effective_tie_tol

    def choose(values: np.ndarray) -> RateChoice:
        return rate_field_from_surface(values, boxes, tie_break, tie_tol)

    surface, field = _march(problem, grid, settings, choose, policy_iteration=True)
    if mono in (Monotonicity.INCREASING, Monotonicity.DECREASING) and not rate_field_is_constant(field):
        logger.warning("Worst-case rate field is not constant across nodes despite monotone sigma")
    return surface, field


# Post-processing


def extract_boundary(surface: ValueSurface) -> BoundaryCurves:
    """Put exercise boundary: top of the exercise block adjacent to x_min, per layer and regime"""
    if not surface.problem.payoff.is_put:
        raise UnsupportedPayoffError("exercise boundary extraction is only defined for the put payoff")
    grid = surface.grid
    x = grid.x_nodes
    g = surface.payoff_on_grid()
    threshold = surface.problem.payoff.scale_on(x) * surface.mask_tol
    s_star = np.full((grid.nt, surface.problem.m), np.nan)
    for n in range(1, grid.nt):
        for y in range(surface.problem.m):
            mask = surface.exercise_mask[:, y, n]
            if not mask[0]:
                continue
            free = np.flatnonzero(~mask)
            if free.size == 0:
                s_star[n, y] = x[-1]
                continue
            k = free[0] - 1
            gap_k = surface.v[k, y, n] - g[k]
            gap_next = surface.v[k + 1, y, n] - g[k + 1]
            frac = 0.0 if gap_next <= gap_k else (threshold - gap_k) / (gap_next - gap_k)
            s_star[n, y] = x[k] + min(max(frac, 0.0), 1.0) * (x[k + 1] - x[k])
    return BoundaryCurves(t_nodes=grid.t_nodes, s_star=s_star)


def surface_sup_diff(a: ValueSurface, b: ValueSurface) -> float:
    if a.v.shape != b.v.shape:
        raise PDEError(f"surface shapes differ: {a.v.shape} vs {b.v.shape}")
    if not a.grid.same_as(b.grid):
        raise PDEError("surfaces live on different grids")
    return float(np.max(np.abs(a.v - b.v)))


def value_at(surface: ValueSurface, x: Optional[float] = None, y: Optional[int] = None, layer: int = -1) -> float:
    """Linear interpolation in x of one layer (default: t = T) for regime y (1-based)"""
    x = surface.problem.x0 if x is None else x
    y = surface.problem.y0 if y is None else y
    return float(np.interp(x, surface.grid.x_nodes, surface.v[:, y - 1, layer]))


def check_surface_invariants(surface: ValueSurface, tol: float = 1e-10) -> List[str]:
    """Obstacle, initial-condition and time-monotonicity violations (empty when all hold)"""
    problems: List[str] = []
    g = surface.payoff_on_grid()[:, None, None]
    gap = float(np.min(surface.v - g))
    if gap < -tol:
        problems.append(f"obstacle violated: min(v - g) = {gap:.3e}")
    if not np.array_equal(surface.v[:, :, 0], np.broadcast_to(g[:, :, 0], surface.v[:, :, 0].shape)):
        problems.append("initial layer differs from the payoff")
    if surface.grid.n_steps >= 1:
        drop = float(np.min(np.diff(surface.v, axis=2)))
        if drop < -tol:
            problems.append(f"time monotonicity violated: min step change = {drop:.3e}")
    return problems


def check_regime_monotonicity(surface: ValueSurface, mono: Monotonicity, tol: float = 1e-8) -> List[str]:
    mono = Monotonicity(mono)
    if mono not in (Monotonicity.INCREASING, Monotonicity.DECREASING) or surface.problem.m < 2:
        return []
    step = np.diff(surface.v, axis=1)
    if mono is Monotonicity.DECREASING:
        step = -step
    worst = float(np.min(step))
    if worst < -tol:
        return [f"regime ordering ({mono.value}) violated by {worst:.3e}"]
    return []


def rate_field_is_constant(field: RateField) -> bool:
    """True when each regime uses one rate pair at every node and layer"""
    for arr in (field.lambda_plus, field.lambda_minus):
        ref = arr[:1, :, :1]
        if not np.all(arr == ref):
            return False
    return True


def grid_bias(
    problem: ProblemSpec,
    q: RateMatrix,
    nx: int,
    nt: int,
    width_mult: float = 5.0,
    settings: Optional[SolverSettings] = None,
) -> float:
    """Change in v(x0, y0, T) between a half-resolution grid and the given one"""
    fine = solve_constant(problem, q, build_grid(problem, nx, nt, width_mult), settings)
    coarse_grid = build_grid(problem, max(3, (nx - 1) // 2 + 1), max(2, (nt - 1) // 2 + 1), width_mult)
    coarse = solve_constant(problem, q, coarse_grid, settings)
    return abs(fine.price() - coarse.price())


def surface_summary(surface: ValueSurface) -> Dict[str, object]:
    """At-the-money prices per regime and, for the put, boundary curves"""
    summary: Dict[str, object] = {
        "x0": surface.problem.x0,
        "horizon": surface.grid.horizon,
        "prices": {y: value_at(surface, y=y) for y in range(1, surface.problem.m + 1)},
    }
    if surface.problem.payoff.is_put:
        curves = extract_boundary(surface)
        summary["boundary"] = {
            y: [None if math.isnan(s) else float(s) for s in curves.curve(y)] for y in range(1, surface.problem.m + 1)
        }
    return summary
