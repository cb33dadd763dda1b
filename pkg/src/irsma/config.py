"""Shared solver configuration for the penalty-based planning loops."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class SolverConfig:
    """Penalty schedules, tolerances, iteration caps and rounding policy.

    ``penalty_init_scale`` multiplies a per-problem magnitude estimate to set
    the initial penalty factors; every outer round scales them by
    ``penalty_growth`` until the worst binary / unit-modulus violation falls
    below ``binary_tol``.
    """

    inner_tol: float = 1e-3          # relative change of the penalized objective
    binary_tol: float = 1e-4         # max allowed x(1-x) and |1-|v_n|| at exit
    penalty_growth: float = 5.0      # outer-loop multiplier, > 1
    penalty_init_scale: float = 1e-3
    max_inner: int = 30
    max_outer: int = 12
    eta_cap: float = 1e6             # ceiling on the normalized-SNR floor
    solver_tol: float = 1e-8
    rounding_threshold: float = 0.5
    repair: bool = True
    audit_rel_tol: float = 1e-6      # slack when auditing SNR constraints
