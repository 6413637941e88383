#!/usr/bin/env python3
"""
regimebound command line

Loads one experiment config, runs a subcommand, writes its report to --out and
prints one [CHECK] line per enabled check. Exit code 0 when every check passes,
1 on a failed check or solver error, 2 on a config error.
"""

import argparse
import math
import sys
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np
from loguru import logger

from . import __version__
from .config import ExperimentConfig, RuntimeSettings, load_config
from .errors import ConfigError, RegimeBoundError
from .extremal import extremal_matrix
from .game import (
    CENTER_KEY,
    default_left_rules,
    default_lower_bound_strategies,
    default_right_strategies,
    lower_bound_check,
    saddle_check,
)
from .mc import Constant, derive_seed, moment_bound_check, moment_log_bound, path_summary, save_paths, simulate
from .model import CEV, GBM, Monotonicity, linear_growth_constant, sigma_monotonicity
from .monitoring import RunTracker, configure_logging, set_tracker, track_errors
from .oracle import binomial_american_put, brute_force_min, dominance_sweep
from .pde import (
    build_grid,
    check_regime_monotonicity,
    check_surface_invariants,
    extract_boundary,
    grid_bias,
    rate_field_is_constant,
    solve_constant,
    solve_worstcase_hjb,
    surface_sup_diff,
    value_at,
)
from .reports import (
    BoundaryReport,
    CheckResult,
    DominanceReport,
    GameReport,
    MatrixPrice,
    MomentRow,
    MomentsReport,
    PriceReport,
    WorstCaseReport,
    finite_or_none,
    write_report,
    write_surface_csv,
)

SUBCOMMANDS = ("price", "worstcase", "boundary", "verify-extremal", "game", "moments")
ORACLE_STEPS = 5000
ORACLE_REL_TOL = 0.005
INVARIANT_TOL = 1e-10
REGIME_ORDER_TOL = 1e-8
DOMINANCE_SEED_KEY = 7
LOWER_BOUND_SEED_KEY = 8


class VerificationRunner:
    """Runs one subcommand for a loaded config and collects its checks"""

    def __init__(self, config: ExperimentConfig, runtime: RuntimeSettings, out_dir: Path, out_format: str, save_paths=False):
        self.config = config
        self.runtime = runtime
        self.out_dir = Path(out_dir)
        self.out_format = out_format
        self.save_paths = save_paths
        self.problem = config.problem()
        self.settings = config.solver_settings()
        self.checks: List[CheckResult] = []

    # helpers

    def grid(self):
        g = self.config.grid
        return build_grid(self.problem, g.nx, g.nt, g.width_mult)

    def check(self, name: str, passed: bool, detail: str = "") -> None:
        if not self.config.checks.is_enabled(name):
            return
        self.checks.append(CheckResult(name=name, passed=bool(passed), detail=detail))

    def enabled(self, name: str) -> bool:
        return self.config.checks.is_enabled(name)

    def surface_checks(self, label: str, surface) -> None:
        # solver error bounds how tightly the invariants can be checked
        tol = max(INVARIANT_TOL, 10 * self.settings.tol)
        problems = check_surface_invariants(surface, tol)
        self.check("invariants", not problems, f"{label}: " + ("; ".join(problems) or "ok"))
        mono = sigma_monotonicity(self.problem.sigma)
        if self.problem.m > 1 and mono in (Monotonicity.INCREASING, Monotonicity.DECREASING):
            problems = check_regime_monotonicity(surface, mono, max(REGIME_ORDER_TOL, 10 * self.settings.tol))
            self.check("regime_monotonicity", not problems, f"{label}: " + ("; ".join(problems) or mono.value))

    def prices(self, surface) -> Dict[int, float]:
        return {y: value_at(surface, y=y) for y in range(1, self.problem.m + 1)}

    def bias(self, q) -> float:
        g = self.config.grid
        return grid_bias(self.problem, q, g.nx, g.nt, g.width_mult, self.settings) + self.config.checks.bias_floor

    def first_block(self, q):
        """First block of the center simulation under q, with the positivity-floor check for CEV"""
        mc = self.config.mc
        batch = simulate(
            self.problem, Constant(q), min(mc.n_paths, mc.block_size), mc.dt, derive_seed(mc.seed, CENTER_KEY), mc.block_size
        )
        if isinstance(self.problem.dynamics, CEV):
            self.check("floor_fraction", not batch.warning, f"{batch.floor_fraction:.3%} of paths floored")
        return batch

    # subcommands

    def price(self) -> PriceReport:
        q = self.config.rate_matrix()
        surface = solve_constant(self.problem, q, self.grid(), self.settings)
        self.surface_checks("constant", surface)
        oracle = None
        dyn = self.problem.dynamics
        if (
            self.problem.m == 1
            and isinstance(dyn, GBM)
            and self.problem.payoff.is_put
            and math.isclose(dyn.mu, self.problem.alpha, abs_tol=1e-12)
            and self.enabled("oracle")
        ):
            oracle = binomial_american_put(
                self.problem.x0,
                self.problem.payoff.kind.strike,
                self.problem.alpha,
                self.problem.sigma[0],
                self.problem.horizon_T,
                ORACLE_STEPS,
            )
            rel = abs(surface.price() - oracle) / max(oracle, 1e-12)
            self.check("oracle", rel <= ORACLE_REL_TOL, f"PDE {surface.price():.6f} vs binomial {oracle:.6f} ({rel:.3%})")
        boundary = None
        if self.problem.payoff.is_put:
            curves = extract_boundary(surface)
            boundary = {y: [finite_or_none(s) for s in curves.curve(y)] for y in range(1, self.problem.m + 1)}
        if self.out_format == "csv":
            self.out_dir.mkdir(parents=True, exist_ok=True)
            write_surface_csv(surface, self.out_dir / "surface.csv")
        return PriceReport(
            matrix=q.to_list(),
            x0=self.problem.x0,
            y0=self.problem.y0,
            price=surface.price(),
            prices=self.prices(surface),
            boundary=boundary,
            oracle_price=oracle,
        )

    def worstcase(self) -> WorstCaseReport:
        boxes = self.config.rate_boxes()
        grid = self.grid()
        mono = sigma_monotonicity(self.problem.sigma)
        hjb, field = solve_worstcase_hjb(self.problem, boxes, grid, self.settings)
        self.surface_checks("hjb", hjb)
        constant_field = rate_field_is_constant(field)

        if mono is Monotonicity.NON_MONOTONE:
            logger.warning("sigma is not monotone: reporting the HJB value against the best sampled constant matrix")
            best = brute_force_min(
                self.problem, boxes, grid, self.config.checks.per_box_samples, self.settings, self.runtime.threads
            )
            surface = solve_constant(self.problem, best.argmin, grid, self.settings)
            return WorstCaseReport(
                monotonicity=mono.value,
                constant_prices=self.prices(surface),
                hjb_prices=self.prices(hjb),
                sup_diff=surface_sup_diff(hjb, surface),
                rate_field_constant=constant_field,
            )

        pi = extremal_matrix(boxes, mono)
        surface = solve_constant(self.problem, pi, grid, self.settings)
        self.surface_checks("extremal", surface)
        diff = surface_sup_diff(hjb, surface)
        limit = 10 * self.settings.tol
        self.check("hjb", diff <= limit, f"sup |v_hjb - v_extremal| = {diff:.3e} (limit {limit:.1e})")
        self.check("rate_field", constant_field, "constant across nodes" if constant_field else "varies across nodes")
        if self.out_format == "csv":
            self.out_dir.mkdir(parents=True, exist_ok=True)
            write_surface_csv(hjb, self.out_dir / "surface.csv")
        return WorstCaseReport(
            monotonicity=mono.value,
            extremal_matrix=pi.to_list(),
            constant_prices=self.prices(surface),
            hjb_prices=self.prices(hjb),
            sup_diff=diff,
            rate_field_constant=constant_field,
        )

    def boundary(self) -> BoundaryReport:
        mono = sigma_monotonicity(self.problem.sigma)
        if self.config.matrix is None and self.config.boxes is not None and mono is not Monotonicity.NON_MONOTONE:
            q = extremal_matrix(self.config.rate_boxes(), mono)
        else:
            q = self.config.rate_matrix()
        surface = solve_constant(self.problem, q, self.grid(), self.settings)
        self.surface_checks("constant", surface)
        curves = extract_boundary(surface)
        if self.problem.m > 1 and mono in (Monotonicity.INCREASING, Monotonicity.DECREASING):
            self._boundary_ordering(curves.s_star, mono)
        return BoundaryReport(
            matrix=q.to_list(),
            t=[float(t) for t in curves.t_nodes],
            boundaries={y: [finite_or_none(s) for s in curves.curve(y)] for y in range(1, self.problem.m + 1)},
        )

    def _boundary_ordering(self, s_star: np.ndarray, mono: Monotonicity) -> None:
        """Lower-volatility regimes exercise earlier: s*(t, low) > s*(t, high) from the second layer on"""
        rows = s_star[2:]
        lower, upper = rows[:, :-1], rows[:, 1:]
        gap = lower - upper if mono is Monotonicity.INCREASING else upper - lower
        finite = np.isfinite(gap)
        ok = bool(finite.all() and np.all(gap > 0))
        worst = float(np.min(gap[finite])) if finite.any() else math.nan
        self.check("boundary_ordering", ok, f"min gap {worst:.6g} over {rows.shape[0]} layers")

    def verify_extremal(self) -> DominanceReport:
        boxes = self.config.rate_boxes()
        grid = self.grid()
        mono = sigma_monotonicity(self.problem.sigma)
        pi = extremal_matrix(boxes, mono)
        surface = solve_constant(self.problem, pi, grid, self.settings)
        self.surface_checks("extremal", surface)
        ext_price = surface.price()
        report = DominanceReport(extremal_matrix=pi.to_list(), extremal_price=ext_price)

        if self.enabled("dominance"):
            sweep = dominance_sweep(
                self.problem,
                boxes,
                grid,
                self.config.checks.n_dominance_samples,
                derive_seed(self.config.mc.seed, DOMINANCE_SEED_KEY),
                self.settings,
                self.runtime.threads,
            )
            n_sampled = self.config.checks.n_dominance_samples
            report.worst_margin = sweep.worst_margin
            report.margins = [
                MatrixPrice(kind="sampled" if i < n_sampled else "endpoint", matrix=q.to_list(), value=margin)
                for i, (q, margin) in enumerate(zip(sweep.matrices, sweep.margins))
            ]
            self.check(
                "dominance",
                sweep.passed,
                f"worst nodewise margin {sweep.worst_margin:.3e} over {len(sweep.matrices)} matrices",
            )

        if self.enabled("brute_force"):
            bf = brute_force_min(
                self.problem, boxes, grid, self.config.checks.per_box_samples, self.settings, self.runtime.threads
            )
            report.brute_force_min = bf.min_price
            report.brute_force_argmin = bf.argmin.to_list()
            report.brute_force_prices = [
                MatrixPrice(kind="grid", matrix=q.to_list(), value=p) for q, p in zip(bf.matrices, bf.prices)
            ]
            gap = bf.min_price - ext_price
            self.check(
                "brute_force",
                bf.argmin == pi and abs(gap) <= 1e-6,
                f"argmin {'matches' if bf.argmin == pi else 'differs from'} extremal matrix; min - extremal = {gap:.3e}",
            )
        if isinstance(self.problem.dynamics, CEV):
            self.first_block(pi)
        return report

    def game(self) -> GameReport:
        boxes = self.config.rate_boxes()
        grid = self.grid()
        mc = self.config.mc
        mono = sigma_monotonicity(self.problem.sigma)
        pi = extremal_matrix(boxes, mono)
        bias = self.bias(pi)
        report = GameReport(seed=mc.seed)

        if self.enabled("saddle"):
            left = default_left_rules(self.problem, pi, mc.n_paths, mc.dt, mc.seed, mc.basis_degree, mc.block_size)
            right = default_right_strategies(self.problem, boxes, mc.seed, mc.n_random_challengers)
            saddle = saddle_check(
                self.problem,
                boxes,
                left,
                right,
                mc.n_paths,
                mc.dt,
                mc.seed,
                grid,
                self.settings,
                bias=bias,
                block_size=mc.block_size,
                threads=self.runtime.threads,
            )
            print(saddle.to_table())
            report.saddle = saddle
            self.check(
                "saddle",
                saddle.passed,
                f"center {saddle.center.value:.6f} vs PDE {saddle.pde_value:.6f}; "
                f"left {'ok' if saddle.left_passed else 'violated'}, right {'ok' if saddle.right_passed else 'violated'}",
            )

        if self.enabled("lower_bound"):
            seed = derive_seed(mc.seed, LOWER_BOUND_SEED_KEY)
            strategies = default_lower_bound_strategies(self.problem, boxes, seed)
            pde_value, results = lower_bound_check(
                self.problem,
                boxes,
                strategies,
                mc.n_paths,
                mc.dt,
                seed,
                grid,
                self.settings,
                bias=bias,
                block_size=mc.block_size,
                threads=self.runtime.threads,
            )
            report.lower_bound_pde = pde_value
            report.lower_bound = results
            worst = min(r.margin + r.allowance for r in results)
            detail = f"worst slack {worst:.6f} over {len(results)} strategies"
            self.check("lower_bound", all(r.passed for r in results), detail)

        batch = self.first_block(pi)
        report.path_summary = _flatten(path_summary(batch))
        if self.save_paths:
            save_paths(batch, self.out_dir / "paths.npz")
        return report

    def moments(self) -> MomentsReport:
        mc = self.config.mc
        k_growth = self.config.checks.moment_k_growth or linear_growth_constant(self.problem)
        strategy = Constant(self.config.rate_matrix()) if self.config.matrix is not None else None
        boxes = self.config.rate_boxes() if self.config.boxes is not None else None
        rows = []
        for q in self.config.checks.moment_q:
            result = moment_bound_check(
                self.problem,
                k_growth,
                q,
                self.problem.horizon_T,
                mc.n_paths,
                mc.dt,
                mc.seed,
                strategy,
                mc.block_size,
                self.runtime.threads,
                boxes,
            )
            log10 = moment_log_bound(self.problem.x0, k_growth, result.horizon, q) / math.log(10)
            rows.append(
                MomentRow(
                    q=q,
                    k_growth=k_growth,
                    horizon=result.horizon,
                    empirical=result.empirical,
                    std_error=result.std_error,
                    bound=finite_or_none(result.bound),
                    log10_bound=log10,
                    passed=result.passed,
                )
            )
            self.check("moments", result.passed, f"q={q:g}: E[sup|X|^q] = {result.empirical:.6g} <= 10^{log10:.2f}")
        return MomentsReport(seed=mc.seed, rows=rows)

    @track_errors
    def run(self, subcommand: str):
        handlers: Dict[str, Callable] = {
            "price": self.price,
            "worstcase": self.worstcase,
            "boundary": self.boundary,
            "verify-extremal": self.verify_extremal,
            "game": self.game,
            "moments": self.moments,
        }
        report = handlers[subcommand]()
        report.checks = list(self.checks)
        if report.seed is None and subcommand in ("game", "moments", "verify-extremal"):
            report.seed = self.config.mc.seed
        return report


def _flatten(summary: dict) -> Dict[str, float]:
    flat: Dict[str, float] = {}
    for key, value in summary.items():
        if isinstance(value, dict):
            for sub, v in value.items():
                flat[f"{key}_{sub}"] = float(v)
        else:
            flat[key] = float(value)
    return flat


def run(
    subcommand: str,
    config_path: Path,
    out_format: str = "json",
    out_dir: Path = Path("results"),
    seed: Optional[int] = None,
    threads: Optional[int] = None,
    log_dir: Optional[Path] = None,
    log_level: Optional[str] = None,
    save_paths: bool = False,
) -> int:
    """Execute one subcommand end to end and return the process exit code"""
    if subcommand not in SUBCOMMANDS:
        print(f"[ERROR] unknown subcommand {subcommand!r}; choose from {', '.join(SUBCOMMANDS)}")
        return 2
    try:
        runtime = RuntimeSettings.from_env().override(threads=threads, log_level=log_level, log_dir=log_dir)
        configure_logging(runtime.log_level, runtime.log_dir)
        tracker = set_tracker(RunTracker(runtime.log_dir))
        config = load_config(config_path).with_seed(seed)
        runner = VerificationRunner(config, runtime, out_dir, out_format, save_paths)
    except ConfigError as e:
        print(f"[ERROR] config: {e}")
        return 2

    try:
        with tracker.timed(subcommand, config=str(config_path)):
            report = runner.run(subcommand)
        written = write_report(report, out_dir, out_format)
    except ConfigError as e:
        print(f"[ERROR] config: {e}")
        return 2
    except RegimeBoundError as e:
        print(f"[ERROR] {type(e).__name__}: {e}")
        return 1
    except Exception as e:
        tracker.log_error(e, {"subcommand": subcommand, "config": str(config_path)})
        print(f"[ERROR] {type(e).__name__}: {e}")
        return 2

    for c in report.checks:
        print(f"[CHECK] {c.name}: {'PASS' if c.passed else 'FAIL'} ({c.detail})")
    for path in written:
        print(f"[OK] wrote {path}")
    failed = report.failed_checks()
    if failed:
        print(f"[ERROR] failing checks: {', '.join(sorted({c.name for c in failed}))}")
        return 1
    print(f"[SUCCESS] {subcommand}: all {len(report.checks)} checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, required=True, help="Experiment config (.json, .yaml or .yml)")
    common.add_argument("--out", type=Path, default=Path("results"), help="Output directory (default: results)")
    common.add_argument("--format", choices=("csv", "json"), default="json", help="Artifact format (default: json)")
    common.add_argument("--seed", type=int, help="Override mc.seed from the config")
    common.add_argument("--threads", type=int, help="Worker threads for independent solves and path blocks")
    common.add_argument("--log-dir", type=Path, help="Directory for rotated logs and performance.jsonl")
    common.add_argument("--log-level", help="DEBUG, INFO, WARNING or ERROR")
    common.add_argument("--save-paths", action="store_true", help="Persist the first path block (game only)")

    parser = argparse.ArgumentParser(
        prog="regimebound",
        description="Worst-case American option values on regime-switching diffusions",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  regimebound price --config config/scenarios/gbm_single.json --format csv
  regimebound worstcase --config config/scenarios/gbm_two_regime.json
  regimebound verify-extremal --config config/scenarios/gbm_two_regime.json --threads 4
  regimebound game --config config/scenarios/gbm_two_regime.json --seed 7
  regimebound moments --config config/scenarios/gbm_single.json
            """,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    helps = {
        "price": "Value surface for the configured rate matrix",
        "worstcase": "Extremal matrix and worst-case HJB cross-check",
        "boundary": "Exercise boundaries per regime with ordering check",
        "verify-extremal": "Dominance sweep and brute-force minimum over constant matrices",
        "game": "Saddle-point and lower-bound checks by Monte Carlo",
        "moments": "Empirical running-max moments against the linear-growth bound",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return run(
        args.subcommand,
        args.config,
        args.format,
        args.out,
        seed=args.seed,
        threads=args.threads,
        log_dir=args.log_dir,
        log_level=args.log_level,
        save_paths=args.save_paths,
    )


def cli_main():
    """Console script entry point"""
    sys.exit(main())


if __name__ == "__main__":
    cli_main()
