"""Numerical constants shared across modules."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # floor for norms/standard deviations before division
    norm_eps: float = 1e-12
    std_eps: float = 1e-8
    # lower clamp on the second argument of a KL term
    kl_eps: float = 1e-12
    # logistic convergence (gradient infinity-norm)
    logistic_gtol: float = 1e-6
    # slack when checking that a point satisfies its own interval rule
    rule_slack: float = 1e-9


TOL = Tolerances()
