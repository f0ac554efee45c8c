"""
Exception hierarchy shared by the theory, algorithm and oracle modules.

The CLI maps NumericalFailure to exit code 1 and the remaining errors to exit code 2.
"""
from typing import List, Optional, Sequence


class BenchError(Exception):
    """Base class for every error raised by this package."""


class DomainError(BenchError, ValueError):
    """An argument lies outside the domain of the operation."""


class BudgetExceededError(BenchError, ValueError):
    """Exact enumeration would visit more configurations than allowed."""

    def __init__(self, requested: int, limit: int):
        self.requested = requested
        self.limit = limit
        super().__init__(
            f"enumeration needs {requested} configurations, above the budget max_configs={limit}"
        )


class NumericalFailure(BenchError):
    """A computation ran but did not produce a trustworthy result."""


class ConvergenceError(NumericalFailure):
    """Fixed-point iteration did not converge."""

    def __init__(self, message: str, trajectory: Optional[Sequence[float]] = None):
        self.trajectory: List[float] = list(trajectory or [])
        super().__init__(message)


class StateEvolutionError(NumericalFailure):
    """A state-evolution parameter left (0, inf)."""

    def __init__(self, index: int, values: Sequence[float]):
        self.index = index
        self.values = tuple(values)
        super().__init__(f"state evolution left (0, inf) at iteration {index}: {self.values}")


class DivergenceError(NumericalFailure):
    """VAMP iterates blew up past the divergence guard."""

    def __init__(self, iteration: int, mse: float, seed: Optional[int] = None):
        self.iteration = iteration
        self.mse = mse
        self.seed = seed
        where = f" (seed {seed})" if seed is not None else ""
        super().__init__(f"VAMP diverged at iteration {iteration}{where}: mse={mse:.6g}")


class ResidualError(NumericalFailure):
    """A fixed point was returned with a residual above tolerance."""
