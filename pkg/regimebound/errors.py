"""Exception hierarchy for regimebound"""

from typing import Optional


class RegimeBoundError(Exception):
    """Base exception for all regimebound failures"""
    pass


class ModelError(RegimeBoundError):
    """Invalid domain object or mismatched dimensions"""
    pass


class ExtremalError(RegimeBoundError):
    """No constant extremal rate matrix exists for the given volatility ordering"""
    pass


class PDEError(RegimeBoundError):
    """Custom exception for finite-difference solver operations"""
    pass


class PDEConvergenceError(PDEError):
    """Projected iteration did not reach tolerance within the iteration budget"""

    def __init__(self, message: str, residual: float, layer: int):
        super().__init__(f"{message} (layer {layer}, residual {residual:.3e})")
        self.residual = residual
        self.layer = layer


class PolicyIterationError(PDEError):
    """Bang-bang rate field did not stabilise within the sweep budget"""

    def __init__(self, message: str, layer: int):
        super().__init__(f"{message} (layer {layer})")
        self.layer = layer


class UnsupportedPayoffError(PDEError):
    """Operation is only defined for the put payoff"""
    pass


class MonteCarloError(RegimeBoundError):
    """Invalid simulation request or incompatible stopping rule"""
    pass


class RegressionError(MonteCarloError):
    """Least-squares continuation regression is degenerate"""
    pass


class UnsupportedDynamicsError(RegimeBoundError):
    """Dynamics outside the linear-growth class required by the moment bound"""
    pass


class GameError(RegimeBoundError):
    """Saddle-point check cannot be set up"""
    pass


class OracleError(RegimeBoundError):
    """Reference computation refused or given invalid inputs"""
    pass


class ConfigError(RegimeBoundError):
    """Configuration file failed to parse or validate"""

    def __init__(self, message: str, field_path: Optional[str] = None):
        super().__init__(f"{field_path}: {message}" if field_path else message)
        self.field_path = field_path
