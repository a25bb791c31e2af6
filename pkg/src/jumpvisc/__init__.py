"""Degenerate elliptic and parabolic integro-differential equations with
Lévy operators: operator evaluation, a monotone solver, comparison-principle
checks and a Monte Carlo cross-check."""

__version__ = "0.1.0"
