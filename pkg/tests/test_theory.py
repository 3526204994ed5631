import pytest

from fuels.errors import ContractError, InfeasibleParametersError
from fuels.theory import TheoryParams, lr_feasible, theory_lr_bound, theory_round_bound


def test_round_bound_without_coupling():
    p = TheoryParams(Lambda=2.0, xi=0.5, I=4, eta=0.1, L1=0.0, rho=0.0)
    assert theory_round_bound(p) == 2.0 / (0.5 * 4 * 0.1)


def test_round_bound_plug_in():
    p = TheoryParams(Lambda=1, xi=0.1, I=10, eta=0.01, L1=1, rho=0)
    assert abs(theory_round_bound(p) - 1 / (0.1 * 10 * (0.01 - 0.0001))) <= 1e-12
    assert theory_round_bound(p) == pytest.approx(101.0101, abs=1e-4)


def test_round_bound_with_coupling():
    p = TheoryParams(Lambda=3, xi=0.5, I=2, eta=0.01, L1=2, Lh=0.5, N=4, alpha=0.5, rho=0.1, G=0.2)
    denom = 0.5 * 2 * (0.01 - 2 * 0.0001) - 0.1 * 0.01 * 0.5 * 4 * 0.5 * 4 * 0.2
    assert abs(theory_round_bound(p) - 3 / denom) <= 1e-12


def test_round_bound_infeasible():
    with pytest.raises(InfeasibleParametersError):
        theory_round_bound(TheoryParams(eta=2.0, L1=1.0))
    with pytest.raises(InfeasibleParametersError):
        theory_round_bound(TheoryParams(rho=100.0))


def test_lr_bound_values():
    assert theory_lr_bound(TheoryParams(L1=4.0, rho=0.0)) == 0.25
    p = TheoryParams(xi=1, rho=1, Lh=1, N=1, alpha=1, I=1, G=0.5, L1=2)
    assert abs(theory_lr_bound(p) - 0.25) <= 1e-12
    assert lr_feasible(p)


def test_lr_bound_infeasible():
    p = TheoryParams(xi=1, rho=1, Lh=1, N=1, alpha=1, I=1, G=1.0, L1=2)
    assert theory_lr_bound(p) <= 0 and not lr_feasible(p)


def test_parameter_contracts():
    with pytest.raises(ContractError):
        TheoryParams(eta=-1.0)
    with pytest.raises(ContractError):
        theory_lr_bound(TheoryParams(L1=0.0))
