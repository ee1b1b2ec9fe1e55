"""Least squares on trajectory data: covariance tools, generators, OLS, small-ball
certification, lower-bound numerics and a Monte Carlo harness."""

__version__ = "0.1.0"

from ._utils import DomainError, NumericalRefusal  # noqa: E402
from .covkit import DynamicsPair  # noqa: E402
from .regression import TrajectoryOLS, solve_ols  # noqa: E402

__all__ = ["DomainError", "NumericalRefusal", "DynamicsPair", "TrajectoryOLS", "solve_ols", "__version__"]
