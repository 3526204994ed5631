"""Solo, FedAvg, FedProx and FedRep on the same model, data and evaluation path.

All four train with the prediction loss only; FedProx adds a proximal term
towards the last global model.
"""
from __future__ import annotations

import time
from typing import Callable, Sequence

import numpy as np

from .config import ExperimentConfig
from .errors import ContractError, DimensionError, ParameterError
from .federation import (
    ClientState,
    LocalOptions,
    RoundReport,
    _map,
    _should_eval,
    build_clients,
    comm_accounting,
    evaluate,
    local_epoch,
    mean_breakdown,
    select_clients,
)
from .model import DECODER, ENCODER_NAMES

SHARED = {
    "fedavg": ENCODER_NAMES + DECODER,
    "fedprox": ENCODER_NAMES + DECODER,
    "fedrep": ENCODER_NAMES,
    "solo": (),
}


def fedavg_aggregate(models: Sequence[dict], weights: Sequence[float], names=None) -> dict:
    """Weighted average of each named parameter; weights are normalized to sum to one."""
    if not models:
        raise ContractError("nothing to aggregate")
    names = list(models[0]) if names is None else list(names)
    w = np.asarray(weights, dtype=np.float64)
    if w.size != len(models) or (w < 0).any() or w.sum() <= 0:
        raise ContractError("need one non-negative weight per model with positive total")
    w = w / w.sum()
    out = {}
    for name in names:
        shapes = {np.shape(m[name]) for m in models}
        if len(shapes) != 1:
            raise DimensionError(f"{name}: shapes differ across models {sorted(shapes)}")
        acc = np.zeros_like(np.asarray(models[0][name], dtype=np.float64))
        for wi, m in zip(w, models):
            acc = acc + wi * m[name]
        out[name] = acc
    return out


def fedprox_term(params: dict, global_params: dict, mu: float, names=None) -> float:
    """``(mu/2) * ||w - w_global||^2`` summed over the named parameters."""
    if mu < 0:
        raise ParameterError("mu must be >= 0")
    names = list(global_params) if names is None else names
    sq = sum(float(np.sum((params[n] - global_params[n]) ** 2)) for n in names)
    return 0.5 * mu * sq


def fedrep_round(clients: Sequence[ClientState], selected: Sequence[int]) -> dict:
    """Average the selected clients' encoders and push the result to every client."""
    chosen = [clients[i] for i in selected]
    weights = [len(st.data.train) for st in chosen]
    enc = fedavg_aggregate([st.model.params for st in chosen], weights, ENCODER_NAMES)
    for st in clients:
        for name, value in enc.items():
            st.model.params[name] = value.copy()
    return enc


def run_solo(cfg: ExperimentConfig, clients=None, **kw) -> list[RoundReport]:
    return run_baseline(cfg.replace(method="solo"), clients, **kw)


def run_baseline(
    cfg: ExperimentConfig,
    clients: list[ClientState] | None = None,
    log_path=None,
    on_round: Callable | None = None,
) -> list[RoundReport]:
    method = cfg.method
    clients = build_clients(cfg) if clients is None else clients
    n = len(clients)
    opts = LocalOptions.from_config(cfg)
    ledger = comm_accounting(cfg)
    shared = SHARED[method]

    global_params = None
    if method in ("fedavg", "fedprox", "fedrep"):
        # clients already hold the broadcast initial model; make sure they agree
        global_params = {k: clients[0].model.params[k].copy() for k in shared}
        for st in clients:
            for k in shared:
                st.model.params[k] = global_params[k].copy()

    reports = []
    sink = open(log_path, "a") if log_path else None
    try:
        for t in range(1, cfg.T + 1):
            start = time.perf_counter()
            selected = list(range(n)) if method == "solo" else select_clients(n, cfg.alpha, t, cfg.seed)
            if method in ("fedavg", "fedprox"):
                for i in selected:
                    for k in shared:
                        clients[i].model.params[k] = global_params[k].copy()
            prox_ref = global_params if method == "fedprox" else None

            def work(i: int):
                parts = None
                for _ in range(cfg.epochs):
                    _, parts = local_epoch(clients[i], opts, cfg.B, prox_ref, round_=t)
                return mean_breakdown(parts)

            results = _map(work, selected, cfg.workers)
            if method in ("fedavg", "fedprox"):
                weights = [len(clients[i].data.train) for i in selected]
                global_params = fedavg_aggregate([clients[i].model.params for i in selected], weights, shared)
                for st in clients:
                    for k in shared:
                        st.model.params[k] = global_params[k].copy()
            elif method == "fedrep":
                global_params = fedrep_round(clients, selected)

            n_up = 0 if method == "solo" else len(selected)
            n_down = 0 if method == "solo" else (n if cfg.downlink == "all" else len(selected))
            up, down = ledger.round_totals(n_up, n_down)
            mse, mae = {}, {}
            if _should_eval(cfg, t):
                for i, st in enumerate(clients):
                    mse[i], mae[i] = evaluate(st.model.params, st.data.test)
            report = RoundReport(
                round=t,
                method=method,
                selected=selected,
                losses=dict(zip(selected, results)),
                mse=mse,
                mae=mae,
                uplink=up,
                downlink=down,
                wall_time=time.perf_counter() - start,
            )
            reports.append(report)
            if sink:
                sink.write(report.to_json() + "\n")
                sink.flush()
            if on_round is not None:
                on_round(report, None)
    finally:
        if sink:
            sink.close()
    return reports
