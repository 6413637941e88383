"""
Experiment configuration

One file (JSON or YAML) drives every subcommand. Runtime knobs that are not part of
an experiment (threads, log level, log directory) come from the environment, with a
`.env` file in the working directory loaded first.
"""

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple, Union

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator, model_validator

from .errors import ConfigError, ModelError
from .model import CEV, GBM, Driftless, PayoffSpec, ProblemSpec, Put, RateBoxes, RateMatrix, Table, validate_rate_matrix
from .pde import SolverSettings

KNOWN_CHECKS = (
    "oracle",
    "hjb",
    "rate_field",
    "invariants",
    "regime_monotonicity",
    "boundary_ordering",
    "dominance",
    "brute_force",
    "saddle",
    "lower_bound",
    "moments",
    "floor_fraction",
)

Pair = Tuple[float, float]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelConfig(_Strict):
    type: Literal["gbm", "cev", "driftless"]
    sigma: List[float] = Field(min_length=1)
    mu: Optional[float] = None
    gamma: Optional[float] = None
    a_table: Optional[List[Pair]] = None
    a_scale: float = Field(default=1.0, gt=0)

    @field_validator("sigma")
    @classmethod
    def _positive_sigma(cls, v: List[float]) -> List[float]:
        if any(s <= 0 for s in v):
            raise ValueError("sigma entries must be > 0")
        return v

    @model_validator(mode="after")
    def _dynamics_parameters(self):
        if self.type == "gbm" and self.mu is None:
            raise ValueError("gbm dynamics need mu")
        if self.type == "cev" and (self.gamma is None or self.gamma <= 1):
            raise ValueError("cev dynamics need gamma > 1")
        return self

    def dynamics(self) -> Union[GBM, CEV, Driftless]:
        if self.type == "gbm":
            return GBM(mu=float(self.mu))
        if self.type == "cev":
            return CEV(gamma=float(self.gamma))
        table = tuple(tuple(p) for p in self.a_table) if self.a_table else None
        return Driftless(a_scale=self.a_scale, a_table=table)


class PayoffConfig(_Strict):
    type: Literal["put", "table"]
    strike: Optional[float] = Field(default=None, gt=0)
    points: Optional[List[Pair]] = None
    holder_beta: float = Field(default=1.0, gt=0, le=1)

    @model_validator(mode="after")
    def _kind_parameters(self):
        if self.type == "put" and self.strike is None:
            raise ValueError("put payoff needs strike")
        if self.type == "table" and not self.points:
            raise ValueError("table payoff needs points")
        return self

    def spec(self) -> PayoffSpec:
        kind = Put(float(self.strike)) if self.type == "put" else Table(tuple(tuple(p) for p in self.points))
        return PayoffSpec(kind=kind, holder_beta=self.holder_beta)


class BoxesConfig(_Strict):
    plus: List[Pair]
    minus: List[Pair]

    @model_validator(mode="after")
    def _intervals(self):
        if len(self.plus) != len(self.minus):
            raise ValueError("plus and minus need the same number of intervals")
        for lo, hi in self.plus + self.minus:
            if not 0 < lo <= hi:
                raise ValueError(f"interval [{lo}, {hi}] must satisfy 0 < lo <= hi")
        return self


class GridConfig(_Strict):
    nx: int = Field(default=200, ge=3)
    nt: int = Field(default=200, ge=2)
    width_mult: float = Field(default=5.0, gt=0)
    solver_tol: float = Field(default=1e-8, gt=0)
    omega: float = Field(default=1.2, gt=0, lt=2)
    max_iter: int = Field(default=10000, ge=1)
    rannacher_steps: int = Field(default=2, ge=0)


class MCConfig(_Strict):
    n_paths: int = Field(default=20000, ge=1)
    dt: float = Field(default=0.01, gt=0)
    seed: int = Field(default=0, ge=0)
    block_size: int = Field(default=10000, ge=1)
    basis_degree: int = Field(default=3, ge=2, le=5)
    n_random_challengers: int = Field(default=5, ge=0)


class ChecksConfig(_Strict):
    n_dominance_samples: int = Field(default=20, ge=0)
    per_box_samples: int = Field(default=2, ge=2)
    bias_floor: float = Field(default=0.0, ge=0)
    moment_q: List[float] = Field(default_factory=lambda: [2.0, 4.0])
    moment_k_growth: Optional[float] = Field(default=None, gt=0)
    enabled: Dict[str, bool] = Field(default_factory=dict)

    @field_validator("enabled")
    @classmethod
    def _known_names(cls, v: Dict[str, bool]) -> Dict[str, bool]:
        unknown = sorted(set(v) - set(KNOWN_CHECKS))
        if unknown:
            raise ValueError(f"unknown checks {unknown}; known: {list(KNOWN_CHECKS)}")
        return v

    def is_enabled(self, name: str) -> bool:
        return self.enabled.get(name, True)


class ExperimentConfig(_Strict):
    model: ModelConfig
    payoff: PayoffConfig
    horizon: float = Field(gt=0)
    alpha: float = Field(ge=0)
    x0: float
    y0: int = Field(default=1, ge=1)
    boxes: Optional[BoxesConfig] = None
    matrix: Optional[List[List[float]]] = None
    grid: GridConfig = Field(default_factory=GridConfig)
    mc: MCConfig = Field(default_factory=MCConfig)
    checks: ChecksConfig = Field(default_factory=ChecksConfig)

    @field_validator("y0")
    @classmethod
    def _regime_in_range(cls, v: int, info: ValidationInfo) -> int:
        model = info.data.get("model")
        if model is not None and v > len(model.sigma):
            raise ValueError(f"y0 must lie in 1..{len(model.sigma)}")
        return v

    @field_validator("boxes")
    @classmethod
    def _boxes_match_regimes(cls, v: Optional[BoxesConfig], info: ValidationInfo) -> Optional[BoxesConfig]:
        model = info.data.get("model")
        if v is not None and model is not None and len(v.plus) != len(model.sigma) - 1:
            raise ValueError(f"{len(model.sigma)} regimes need {len(model.sigma) - 1} intervals per direction")
        return v

    @field_validator("matrix")
    @classmethod
    def _matrix_shape(cls, v: Optional[List[List[float]]], info: ValidationInfo) -> Optional[List[List[float]]]:
        model = info.data.get("model")
        m = len(model.sigma) if model is not None else len(v or [])
        if v is not None and (len(v) != m or any(len(row) != m for row in v)):
            raise ValueError(f"matrix must be {m}x{m}")
        return v

    @property
    def m(self) -> int:
        return len(self.model.sigma)

    def problem(self) -> ProblemSpec:
        try:
            return ProblemSpec(
                dynamics=self.model.dynamics(),
                sigma=tuple(self.model.sigma),
                payoff=self.payoff.spec(),
                horizon_T=self.horizon,
                alpha=self.alpha,
                x0=self.x0,
                y0=self.y0,
            )
        except ModelError as e:
            raise ConfigError(str(e)) from e

    def rate_boxes(self) -> RateBoxes:
        if self.boxes is None:
            raise ConfigError("field required for this subcommand", field_path="boxes")
        return RateBoxes(plus=tuple(map(tuple, self.boxes.plus)), minus=tuple(map(tuple, self.boxes.minus)))

    def rate_matrix(self) -> RateMatrix:
        if self.matrix is None:
            if self.m == 1:
                return RateMatrix.zeros(1)
            raise ConfigError("field required when there is more than one regime", field_path="matrix")
        q = RateMatrix(m=self.m, q=self.matrix)
        report = validate_rate_matrix(q)
        if not report.ok:
            raise ConfigError("; ".join(str(v) for v in report.violations), field_path="matrix")
        return q

    def solver_settings(self) -> SolverSettings:
        return SolverSettings(
            omega=self.grid.omega,
            tol=self.grid.solver_tol,
            max_iter=self.grid.max_iter,
            rannacher_steps=self.grid.rannacher_steps,
        )

    def with_seed(self, seed: Optional[int]) -> "ExperimentConfig":
        if seed is None:
            return self
        return self.model_copy(update={"mc": self.mc.model_copy(update={"seed": seed})})


def _field_path(error: ValidationError) -> str:
    first = error.errors()[0]
    return ".".join(str(part) for part in first["loc"])


def parse_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        first = e.errors()[0]
        raise ConfigError(first["msg"], field_path=_field_path(e) or None) from e


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Parse a JSON or YAML experiment file"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        text = path.read_text()
        if path.suffix.lower() in (".yaml", ".yml"):
            data = yaml.safe_load(text)
        elif path.suffix.lower() == ".json":
            data = json.loads(text)
        else:
            raise ConfigError(f"unsupported config format '{path.suffix}' (use .json, .yaml or .yml)")
    except (json.JSONDecodeError, yaml.YAMLError) as e:
        raise ConfigError(f"could not parse {path.name}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path.name} must contain a mapping at the top level")
    return parse_config(data)


@dataclass(frozen=True)
class RuntimeSettings:
    threads: int = 1
    log_level: str = "INFO"
    log_dir: Optional[Path] = None

    @classmethod
    def from_env(cls, env_file: Optional[Path] = None) -> "RuntimeSettings":
        """Read REGIMEBOUND_* variables after loading a .env file if one exists"""
        env_file = env_file or Path.cwd() / ".env"
        if env_file.exists():
            load_dotenv(env_file)
        raw_threads = os.getenv("REGIMEBOUND_THREADS", "1")
        try:
            threads = int(raw_threads)
        except ValueError as e:
            raise ConfigError(f"not an integer: {raw_threads!r}", field_path="REGIMEBOUND_THREADS") from e
        if threads < 1:
            raise ConfigError("must be >= 1", field_path="REGIMEBOUND_THREADS")
        log_dir = os.getenv("REGIMEBOUND_LOG_DIR")
        return cls(
            threads=threads,
            log_level=os.getenv("REGIMEBOUND_LOG_LEVEL", "INFO"),
            log_dir=Path(log_dir) if log_dir else None,
        )

    def override(self, threads: Optional[int] = None, log_level: Optional[str] = None, log_dir=None) -> "RuntimeSettings":
        return RuntimeSettings(
            threads=threads if threads is not None else self.threads,
            log_level=log_level or self.log_level,
            log_dir=Path(log_dir) if log_dir is not None else self.log_dir,
        )
