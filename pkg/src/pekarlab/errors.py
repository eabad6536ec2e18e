"""Exception types shared by the solvers and the command line."""

from __future__ import annotations


class ConvergenceError(RuntimeError):
    """An iterative solver stopped before reaching its tolerance.

    Attributes
    ----------
    residual : float
        Residual at the last iterate.
    history : list of float
        Energy (or residual) history, oldest first.
    """

    def __init__(self, message: str, residual: float = float("nan"), history=None):
        super().__init__(message)
        self.residual = float(residual)
        self.history = list(history or [])


class ValidationError(RuntimeError):
    """A post-solve identity or property check failed."""
