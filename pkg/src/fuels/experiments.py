"""Ready-made experiment setups: the synthetic benchmark and the ablation grid."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .config import ExperimentConfig
from .federation import RoundReport, Server, build_clients, cluster_agreement, comm_accounting, final_metrics, run_training

# name -> config switches relative to full FUELS
ABLATIONS: dict[str, dict] = {
    "FUELS": {},
    "w/o inter": {"rho": 0.0},
    "w/o intra": {"use_intra": False},
    "w/o W": {"learn_filter": False},
    "w/o p-aware": {"prototype": "concat"},
}


def benchmark_config(seed: int = 0, **overrides) -> ExperimentConfig:
    """Two-cluster synthetic benchmark: 20 clients, 60 days of hourly traffic, 50 rounds."""
    base = dict(n_clients=20, clusters=2, K=1440, p=24, B=24, T=50, h=32, seed=seed, eval_every=50)
    base.update(overrides)
    return ExperimentConfig(**base)


@dataclass
class RunResult:
    cfg: ExperimentConfig
    reports: list[RoundReport]
    clients: list
    server: Server | None = None
    # cluster agreement of the JSD partition per round (FUELS only)
    agreement: list[float] | None = None

    @property
    def metrics(self) -> dict[int, tuple[float, float]]:
        return final_metrics(self.reports)

    @property
    def mean_mse(self) -> float:
        return float(np.mean([m for m, _ in self.metrics.values()]))

    @property
    def mean_mae(self) -> float:
        return float(np.mean([a for _, a in self.metrics.values()]))


def run(cfg: ExperimentConfig, log_path=None) -> RunResult:
    clients = build_clients(cfg)
    clusters = [st.data.cluster for st in clients]
    holder: dict = {"server": None, "agreement": []}

    def hook(report, server):
        holder["server"] = server
        if server is not None and server.beta is not None and min(clusters) >= 0:
            holder["agreement"].append(cluster_agreement(server.cache.values, server.beta, clusters))

    reports = run_training(cfg, clients, log_path=log_path, on_round=hook)
    return RunResult(cfg, reports, clients, holder["server"], holder["agreement"] or None)


def run_ablation(cfg: ExperimentConfig, variants: Sequence[str] | None = None) -> list[dict]:
    """FUELS plus each single-switch variant on the same data and seed."""
    rows = []
    for name in variants or ABLATIONS:
        vcfg = cfg.replace(method="fuels", **ABLATIONS[name])
        res = run(vcfg)
        samples = len(res.clients[0].data.train)
        rows.append(
            {
                "variant": name,
                "mean_mse": res.mean_mse,
                "mean_mae": res.mean_mae,
                "uplink_per_client": comm_accounting(vcfg, samples).uplink_per_client,
            }
        )
    return rows
