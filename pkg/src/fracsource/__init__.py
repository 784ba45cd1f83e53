"""Forward and inverse solvers for a space-time fractional wave equation with a separable source."""

__version__ = "0.1.0"
