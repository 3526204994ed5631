import numpy as np
import pytest

from fuels.baselines import SHARED, fedavg_aggregate, fedprox_term, fedrep_round, run_baseline, run_solo
from fuels.config import ExperimentConfig
from fuels.errors import ContractError, ParameterError
from fuels.federation import build_clients, comm_accounting, model_param_counts
from fuels.model import DECODER, ENCODER_NAMES


def tiny(**kw):
    base = dict(n_clients=3, K=300, h=3, T=2, seed=1)
    base.update(kw)
    return ExperimentConfig(**base)


def times_out(reports):
    return [r.to_json().replace(f'"wall_time": {r.wall_time!r}', "") for r in reports]


def test_fedavg_midpoint_and_identity():
    a, b = {"w": np.zeros((1, 1))}, {"w": np.full((1, 1), 2.0)}
    assert fedavg_aggregate([a, b], [5, 5])["w"].item() == 1.0
    assert fedavg_aggregate([b], [3])["w"].item() == 2.0
    assert fedavg_aggregate([a, {"w": np.full((1, 1), 4.0)}], [0.25, 0.75])["w"].item() == 3.0
    with pytest.raises(ContractError):
        fedavg_aggregate([a], [0.0])


def test_fedprox_term_values():
    w = {"x": np.array([[1.0, 2.0]])}
    assert fedprox_term(w, w, 0.5) == 0.0
    assert fedprox_term(w, {"x": np.zeros((1, 2))}, 0.0) == 0.0
    assert fedprox_term({"x": np.array([[3.0]])}, {"x": np.zeros((1, 1))}, 2.0) == 9.0
    with pytest.raises(ParameterError):
        fedprox_term(w, w, -1.0)


def test_fedprox_with_zero_mu_is_fedavg():
    assert times_out(run_baseline(tiny(method="fedprox", mu=0.0))) == [
        s.replace('"method": "fedavg"', '"method": "fedprox"') for s in times_out(run_baseline(tiny(method="fedavg")))
    ]


def test_fedprox_differs_with_positive_mu():
    a = run_baseline(tiny(method="fedprox", mu=1.0))
    b = run_baseline(tiny(method="fedavg"))
    assert a[-1].mse != b[-1].mse


def test_fedrep_round_shares_encoders_only():
    clients = build_clients(tiny())
    rng = np.random.default_rng(0)
    for st in clients:
        for k in st.model.params:
            st.model.params[k] = rng.normal(size=st.model.params[k].shape)
    decoders = [{k: st.model.params[k].copy() for k in DECODER} for st in clients]
    fedrep_round(clients, [0, 1, 2])
    for k in ENCODER_NAMES:
        assert np.array_equal(clients[0].model.params[k], clients[1].model.params[k])
    for st, dec in zip(clients, decoders):
        assert all(np.array_equal(st.model.params[k], dec[k]) for k in DECODER)


def test_fedrep_ledger_and_smoke():
    cfg = tiny(method="fedrep", T=1)
    assert comm_accounting(cfg).uplink_per_client == model_param_counts(3)["encoder"]
    assert not set(SHARED["fedrep"]) & set(DECODER)
    rep = run_baseline(cfg)[0]
    assert all(np.isfinite(v["total"]) for v in rep.losses.values())
    assert rep.uplink == 3 * model_param_counts(3)["encoder"]


def test_solo_has_no_communication_and_independent_models():
    clients = build_clients(tiny())
    reports = run_solo(tiny(), clients)
    assert all(r.uplink == 0 and r.downlink == 0 for r in reports)
    assert not np.array_equal(clients[0].model.params["gru_c.U_h"], clients[1].model.params["gru_c.U_h"])
    assert all(v["intra"] == 0.0 and v["inter"] == 0.0 for r in reports for v in r.losses.values())


def test_fedavg_clients_end_with_global_model():
    clients = build_clients(tiny(method="fedavg"))
    run_baseline(tiny(method="fedavg"), clients)
    for k in ENCODER_NAMES + DECODER:
        assert np.array_equal(clients[0].model.params[k], clients[2].model.params[k])
