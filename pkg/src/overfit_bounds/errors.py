"""Exception types shared across the package."""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the domain of the requested quantity."""


class DivergenceError(ArithmeticError):
    """The requested quantity is infinite at the given point."""


class InfeasibleTau(ValueError):
    """No multiplier solves the fixed point: tau is below the atom at zero."""

    def __init__(self, tau: float, atom: float):
        self.tau = tau
        self.atom = atom
        super().__init__(
            f"tau={tau!r} is below the zero-eigenvalue mass {atom!r}; "
            "the minimal excess loss is infinite"
        )


class IllConditioned(ValueError):
    """A covariance matrix is too close to singular to whiten safely."""


class AssumptionError(ValueError):
    """The feature matrix violates the full-rank assumption."""


class ConfigError(ValueError):
    """An experiment configuration is invalid or unsupported."""
