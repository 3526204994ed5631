"""Closed-form round count and learning-rate bound from the convergence analysis."""
from __future__ import annotations

from dataclasses import dataclass, fields

from .errors import ContractError, InfeasibleParametersError


@dataclass(frozen=True)
class TheoryParams:
    """Symbols of the convergence bound.

    Lambda: initial optimality gap; xi: target mean squared gradient norm;
    I: local iterations per round; eta: learning rate; L1: smoothness;
    Lh: Lipschitz constant of the prototype map; N: clients; alpha:
    selection ratio; rho: inter-client loss weight; G: gradient bound.
    """

    Lambda: float = 1.0
    xi: float = 0.1
    I: float = 1.0
    eta: float = 0.001
    L1: float = 1.0
    Lh: float = 1.0
    N: float = 1.0
    alpha: float = 1.0
    rho: float = 0.0
    G: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ContractError(f"{f.name} must be non-negative")


def _coupling(p: TheoryParams) -> float:
    return p.rho * p.Lh * p.N * p.alpha * p.I * p.G


def theory_round_bound(p: TheoryParams) -> float:
    """Rounds after which the averaged squared gradient norm drops below ``xi``."""
    denom = p.xi * p.I * (p.eta - p.L1 * p.eta**2) - p.rho * p.eta * p.Lh * p.N * p.alpha * p.I**2 * p.G
    if not denom > 0:
        raise InfeasibleParametersError(
            f"round bound denominator is {denom:g}; the learning rate violates its upper bound"
        )
    return p.Lambda / denom


def theory_lr_bound(p: TheoryParams) -> float:
    """Upper bound on the learning rate; a non-positive value means no feasible rate exists."""
    if not (p.L1 > 0 and p.xi > 0):
        raise ContractError("L1 and xi must be positive")
    return (p.xi - _coupling(p)) / (p.L1 * p.xi)


def lr_feasible(p: TheoryParams) -> bool:
    return theory_lr_bound(p) > 0
