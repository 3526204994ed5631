"""Round-synchronous federated training with prototype exchange and JSD-based aggregation.

The server keeps the latest prototype of every client, a symmetric cache of
pairwise prototype divergences, and per client the mean positive and
negative prototypes it will hand out next. Clients train locally on the
combined prediction + contrastive objective and upload only their prototype.
"""
from __future__ import annotations

import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import losses
from .autodiff import Adam, Graph
from .config import ExperimentConfig
from .data import ClientData, TrafficSeries, generate_synthetic, ingest_csv, iter_batches, num_batches, prepare_client
from .errors import ContractError, EmptyDatasetError, FuelsError, NumericError, TrainingError
from .model import DECODER, ENCODER_NAMES, FILTER, ClientModel, bind, decode, encode, init_model, predict
from .prototypes import add_privacy_noise, concat_prototype, periodicity_prototype, prototype_to_distribution, jsd

log = logging.getLogger(__name__)


def client_seed(seed: int, client_id: int, round_: int = 0, stream: int = 0) -> int:
    """Independent, order-free seed for one (client, round, purpose) triple."""
    ss = np.random.SeedSequence([seed, client_id % 2**32, round_, stream])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> 1)


# -- local training --------------------------------------------------------


@dataclass
class LocalOptions:
    tau: float = 0.02
    rho: float = 5.0
    use_intra: bool = True
    learn_filter: bool = True
    prototype: str = "periodicity"
    mu: float = 0.0
    train_decoder: bool = True

    @classmethod
    def from_config(cls, cfg: ExperimentConfig) -> LocalOptions:
        if cfg.method == "fuels":
            return cls(cfg.tau, cfg.rho, cfg.use_intra, cfg.learn_filter, cfg.prototype)
        return cls(cfg.tau, 0.0, False, False, cfg.prototype, cfg.mu if cfg.method == "fedprox" else 0.0)


@dataclass
class ClientState:
    data: ClientData
    model: ClientModel
    optimizer: Adam
    pos_proto: np.ndarray | None = None
    neg_proto: np.ndarray | None = None

    @property
    def client_id(self) -> int:
        return self.data.client_id


def trainable_names(opts: LocalOptions) -> list[str]:
    names = list(ENCODER_NAMES)
    if opts.train_decoder:
        names += list(DECODER)
    if opts.use_intra and opts.learn_filter:
        names.append(FILTER)
    return names


def batch_objective(
    graph: Graph,
    nodes: dict,
    batch,
    batch_aug,
    pos_proto,
    neg_proto,
    opts: LocalOptions,
    global_params: dict | None = None,
):
    """Record the combined loss for one aligned (raw, augmented) batch pair.

    Returns ``(total_node, breakdown, representation_node)``.
    """
    B = len(batch)
    if opts.use_intra:
        rep_all = encode(graph, nodes, np.vstack([batch.cv, batch_aug.cv]), np.vstack([batch.pv, batch_aug.pv]))
        rep = rep_all.slice_rows(0, B)
        rep_aug = rep_all.slice_rows(B, 2 * B)
    else:
        rep = encode(graph, nodes, batch.cv, batch.pv)
    y_hat = decode(graph, nodes, rep)
    pred = losses.pred_loss(graph, batch.y, y_hat)
    if opts.use_intra:
        sm = losses.similarity_matrix(graph, rep, rep_aug, opts.tau)
        z = losses.filter_negatives(graph, sm, nodes[FILTER])
        intra = losses.intra_loss(graph, sm, z)
    else:
        intra = graph.constant(0.0)
    if opts.rho > 0:
        inter = losses.inter_loss(graph, rep, pos_proto, neg_proto, opts.tau)
    else:
        inter = graph.constant(0.0)
    total, parts = losses.total_loss(graph, pred, intra, inter, opts.rho)
    if global_params is not None:
        prox = None
        for name in ENCODER_NAMES + DECODER:
            diff = nodes[name] - graph.constant(global_params[name])
            term = (diff * diff).sum()
            prox = term if prox is None else prox + term
        total = total + prox * (0.5 * opts.mu)
    return total, parts, rep


def _proto_rows(proto, j: int, B: int, opts: LocalOptions):
    if proto is None or opts.prototype == "periodicity":
        return proto
    return proto[j * B : (j + 1) * B]


def local_epoch(
    state: ClientState,
    opts: LocalOptions,
    batch_size: int,
    global_params: dict | None = None,
    round_: int | None = None,
) -> tuple[list[np.ndarray], list[losses.LossBreakdown]]:
    """One pass over the client's aligned raw/augmented batches with one Adam step per batch.

    Returns the representations recorded during the pass (before each
    step's update) and the per-batch loss breakdowns.
    """
    names = trainable_names(opts)
    params = state.model.params
    reps, parts_seen = [], []
    pairs = zip(iter_batches(state.data.train, batch_size), iter_batches(state.data.train_aug, batch_size))
    for j, (batch, batch_aug) in enumerate(pairs):
        graph = Graph()
        nodes = bind(graph, params, trainable=names)
        pos = _proto_rows(state.pos_proto, j, batch_size, opts)
        neg = _proto_rows(state.neg_proto, j, batch_size, opts)
        try:
            total, parts, rep = batch_objective(graph, nodes, batch, batch_aug, pos, neg, opts, global_params)
            grads = graph.backward(total)
            state.optimizer.step(params, grads)
        except (NumericError, FloatingPointError) as exc:
            raise TrainingError(f"numeric divergence: {exc}", round_, state.client_id) from exc
        if not math.isfinite(parts.total):
            raise TrainingError("loss is not finite", round_, state.client_id)
        reps.append(rep.value)
        parts_seen.append(parts)
    if not reps:
        raise EmptyDatasetError(f"client {state.client_id}: fewer than {batch_size} training samples")
    return reps, parts_seen


def mean_breakdown(parts: Sequence[losses.LossBreakdown]) -> dict:
    keys = ("pred", "intra", "inter", "total")
    return {k: float(np.mean([getattr(p, k) for p in parts])) for k in keys}


def client_execute(
    state: ClientState,
    opts: LocalOptions,
    batch_size: int,
    epochs: int = 1,
    round_: int | None = None,
) -> tuple[np.ndarray, dict]:
    """Local training for ``epochs`` epochs; returns the new prototype and mean losses.

    The prototype is built from representations collected during the last
    epoch's pass, not recomputed afterwards.
    """
    for _ in range(epochs):
        reps, parts = local_epoch(state, opts, batch_size, round_=round_)
    if opts.prototype == "periodicity":
        proto = periodicity_prototype(reps)
    else:
        proto = concat_prototype(reps)
    return proto, mean_breakdown(parts)


def evaluate(params: dict, windows) -> tuple[float, float]:
    """Test MSE and MAE of decoder(encoder(x)) on the normalized scale."""
    if len(windows) == 0:
        raise EmptyDatasetError("empty test set")
    y_hat = predict(params, windows.cv, windows.pv)
    return metrics(windows.y, y_hat)


def metrics(y, y_hat) -> tuple[float, float]:
    err = np.asarray(y_hat, dtype=np.float64).ravel() - np.asarray(y, dtype=np.float64).ravel()
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))


# -- server side -----------------------------------------------------------


def compute_beta(values, percentile: float = 50.0) -> float:
    """Nearest-rank percentile of the pairwise divergences."""
    vals = np.sort(np.asarray(list(values), dtype=np.float64).ravel())
    if vals.size == 0:
        raise EmptyDatasetError("no divergence values to take a percentile of")
    if not 0.0 <= percentile <= 100.0:
        raise ContractError("percentile must lie in [0, 100]")
    rank = max(1, math.ceil(percentile / 100.0 * vals.size))
    return float(vals[rank - 1])


def partition(n: int, cache: np.ndarray, beta: float, clients: Sequence[int] | None = None):
    """Split every other client into positives (divergence <= beta) and negatives."""
    clients = range(cache.shape[0]) if clients is None else clients
    pos, neg = [], []
    for m in clients:
        if m == n:
            continue
        (pos if cache[n, m] <= beta else neg).append(m)
    return pos, neg


def aggregate(pos: Sequence[int], neg: Sequence[int], registry: dict, own=None):
    """Mean positive and negative prototypes for one client.

    Empty positive set falls back to the client's own prototype; empty
    negative set yields the all-zero sentinel.
    """
    if pos:
        pr = np.mean([registry[m] for m in pos], axis=0)
    elif own is not None:
        pr = np.array(own, dtype=np.float64)
    else:
        raise ContractError("empty positive set and no own prototype to fall back on")
    if neg:
        nr = np.mean([registry[m] for m in neg], axis=0)
    else:
        nr = np.zeros_like(pr)
    return pr, nr


def select_clients(n_clients: int, alpha: float, round_: int, seed: int) -> list[int]:
    """Everyone in round 1, otherwise a seeded sample of ceil(N*alpha) without replacement."""
    if not 0.0 < alpha <= 1.0:
        raise ContractError("alpha must lie in (0, 1]")
    if round_ == 1 or alpha >= 1.0:
        return list(range(n_clients))
    k = min(n_clients, math.ceil(n_clients * alpha - 1e-12))
    rng = np.random.default_rng(client_seed(seed, -1, round_, stream=7))
    return sorted(rng.choice(n_clients, size=k, replace=False).tolist())


class JSDCache:
    """Symmetric pairwise divergence matrix refreshed only where prototypes changed."""

    def __init__(self, n_clients: int):
        self.n = n_clients
        self.values = np.zeros((n_clients, n_clients))
        self.valid_round = np.full((n_clients, n_clients), -1, dtype=np.int64)
        np.fill_diagonal(self.valid_round, 0)
        self._dists: dict[int, np.ndarray] = {}
        self.last_recomputed = 0

    def update(self, registry: dict, changed: Sequence[int], round_: int = 0) -> int:
        """Recompute every pair touching a changed client; returns the number of pairs recomputed."""
        changed = sorted(set(changed))
        for n in changed:
            self._dists[n] = prototype_to_distribution(registry[n])
        known = sorted(self._dists)
        changed_set = set(changed)
        count = 0
        for n in changed:
            for m in known:
                if m == n or (m in changed_set and m < n):
                    continue
                value = jsd(self._dists[n], self._dists[m])
                self.values[n, m] = self.values[m, n] = value
                self.valid_round[n, m] = self.valid_round[m, n] = round_
                count += 1
        self.last_recomputed = count
        return count

    def pair_values(self, clients: Sequence[int] | None = None) -> np.ndarray:
        clients = sorted(self._dists) if clients is None else sorted(clients)
        idx = np.array(clients)
        if idx.size < 2:
            return np.array([])
        iu = np.triu_indices(idx.size, k=1)
        return self.values[np.ix_(idx, idx)][iu]


def update_jsd_cache(cache: JSDCache, registry: dict, changed: Sequence[int], round_: int = 0) -> JSDCache:
    cache.update(registry, changed, round_)
    return cache


class Server:
    def __init__(self, n_clients: int, beta_percentile: float = 50.0):
        self.n = n_clients
        self.beta_percentile = beta_percentile
        self.registry: dict[int, np.ndarray] = {}
        self.cache = JSDCache(n_clients)
        self.beta: float | None = None
        self.pos_sets: dict[int, list[int]] = {}
        self.neg_sets: dict[int, list[int]] = {}
        self.global_pos: dict[int, np.ndarray] = {}
        self.global_neg: dict[int, np.ndarray] = {}

    def receive(self, uploads: dict[int, np.ndarray], round_: int) -> int:
        shapes = {np.shape(p) for p in uploads.values()} | {np.shape(p) for p in self.registry.values()}
        if len(shapes) > 1:
            raise ContractError(f"prototype shapes differ across clients: {sorted(shapes)}")
        self.registry.update(uploads)
        return self.cache.update(self.registry, list(uploads), round_)

    def aggregate_all(self) -> None:
        clients = sorted(self.registry)
        pairs = self.cache.pair_values(clients)
        self.beta = compute_beta(pairs, self.beta_percentile) if pairs.size else 0.0
        for n in clients:
            pos, neg = partition(n, self.cache.values, self.beta, clients)
            self.pos_sets[n], self.neg_sets[n] = pos, neg
            self.global_pos[n], self.global_neg[n] = aggregate(pos, neg, self.registry, own=self.registry[n])


# -- reports and accounting -------------------------------------------------


@dataclass
class RoundReport:
    round: int
    method: str
    selected: list[int]
    losses: dict[int, dict]
    mse: dict[int, float]
    mae: dict[int, float]
    uplink: int
    downlink: int
    pos_sizes: dict[int, int] = field(default_factory=dict)
    neg_sizes: dict[int, int] = field(default_factory=dict)
    beta: float | None = None
    jsd_recomputed: int = 0
    wall_time: float = 0.0

    @property
    def mean_mse(self) -> float:
        return float(np.mean(list(self.mse.values()))) if self.mse else float("nan")

    @property
    def mean_mae(self) -> float:
        return float(np.mean(list(self.mae.values()))) if self.mae else float("nan")

    def to_json(self) -> str:
        doc = asdict(self)
        for key in ("losses", "mse", "mae", "pos_sizes", "neg_sizes"):
            doc[key] = {str(k): v for k, v in sorted(doc[key].items())}
        doc["mean_mse"] = self.mean_mse
        doc["mean_mae"] = self.mean_mae
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> RoundReport:
        doc = json.loads(line)
        doc.pop("mean_mse", None)
        doc.pop("mean_mae", None)
        for key in ("losses", "mse", "mae", "pos_sizes", "neg_sizes"):
            doc[key] = {int(k): v for k, v in doc[key].items()}
        return cls(**doc)


@dataclass(frozen=True)
class CommLedger:
    uplink_per_client: int
    downlink_per_client: int

    def round_totals(self, n_selected: int, n_receivers: int) -> tuple[int, int]:
        return n_selected * self.uplink_per_client, n_receivers * self.downlink_per_client


def prototype_elements(cfg: ExperimentConfig, samples_per_client: int | None = None) -> int:
    """Elements in one uploaded prototype."""
    if cfg.prototype == "concat":
        if samples_per_client is None:
            raise ContractError("concat prototypes need the number of training samples")
        return (samples_per_client // cfg.B) * cfg.B * cfg.rep_dim
    return cfg.B * cfg.rep_dim


def model_param_counts(h: int) -> dict[str, int]:
    gru = 3 * (h + h * h + h)
    encoder = 2 * gru
    decoder = 2 * h + 1
    return {"encoder": encoder, "decoder": decoder, "model": encoder + decoder}


def comm_accounting(cfg: ExperimentConfig, samples_per_client: int | None = None) -> CommLedger:
    """Per-client element counts sent up to and down from the server each round."""
    counts = model_param_counts(cfg.h)
    if cfg.method == "fuels":
        up = prototype_elements(cfg, samples_per_client)
        return CommLedger(up, 2 * up)
    if cfg.method == "solo":
        return CommLedger(0, 0)
    if cfg.method == "fedrep":
        return CommLedger(counts["encoder"], counts["encoder"])
    return CommLedger(counts["model"], counts["model"])


# -- orchestration ---------------------------------------------------------


def load_series(cfg: ExperimentConfig) -> list[TrafficSeries]:
    if cfg.data_csv:
        series = ingest_csv(cfg.data_csv, period=cfg.p)
        return series[: cfg.n_clients]
    return generate_synthetic(cfg.n_clients, cfg.clusters, cfg.K, cfg.p, seed=cfg.seed, noise=cfg.data_noise)


def build_clients(cfg: ExperimentConfig, series: Sequence[TrafficSeries] | None = None) -> list[ClientState]:
    series = load_series(cfg) if series is None else series
    # every client starts from the same broadcast model so representation spaces line up
    initial = init_model(cfg.h, cfg.B, client_seed(cfg.seed, -1, 0, stream=1))
    states = []
    for s in series:
        data = prepare_client(s, cfg.c, cfg.q, cfg.shift, cfg.train_fraction)
        if num_batches(data.train, cfg.B) == 0:
            raise EmptyDatasetError(f"client {s.client_id}: fewer than B={cfg.B} training samples")
        states.append(ClientState(data, initial.copy(), Adam(lr=cfg.lr)))
    return states


def _map(fn: Callable, items: Sequence, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _should_eval(cfg: ExperimentConfig, round_: int) -> bool:
    return round_ == cfg.T or round_ % cfg.eval_every == 0


def run_training(
    cfg: ExperimentConfig,
    clients: list[ClientState] | None = None,
    log_path=None,
    on_round: Callable[[RoundReport, Server], None] | None = None,
) -> list[RoundReport]:
    """Federated training with prototype exchange for ``cfg.T`` rounds."""
    if cfg.method != "fuels":
        from .baselines import run_baseline

        return run_baseline(cfg, clients, log_path=log_path, on_round=on_round)
    clients = build_clients(cfg) if clients is None else clients
    n = len(clients)
    opts = LocalOptions.from_config(cfg)
    server = Server(n, cfg.beta_percentile)
    ledger = comm_accounting(cfg, len(clients[0].data.train))
    by_id = {i: st for i, st in enumerate(clients)}
    reports = []
    sink = open(log_path, "a") if log_path else None
    try:
        for t in range(1, cfg.T + 1):
            start = time.perf_counter()
            selected = select_clients(n, cfg.alpha, t, cfg.seed)
            for i in selected:
                if i in server.global_pos:
                    by_id[i].pos_proto = server.global_pos[i]
                    by_id[i].neg_proto = server.global_neg[i]

            def work(i: int):
                proto, parts = client_execute(by_id[i], opts, cfg.B, cfg.epochs, round_=t)
                if cfg.noise_kind is not None and cfg.noise_scale > 0:
                    proto = add_privacy_noise(proto, cfg.noise_kind, cfg.noise_scale, client_seed(cfg.seed, i, t, stream=3))
                return proto, parts

            results = _map(work, selected, cfg.workers)
            uploads = {i: proto for i, (proto, _) in zip(selected, results)}
            recomputed = server.receive(uploads, t)
            server.aggregate_all()
            receivers = n if cfg.downlink == "all" else len(selected)
            if cfg.downlink == "all":
                for i, st in by_id.items():
                    st.pos_proto, st.neg_proto = server.global_pos[i], server.global_neg[i]
            up, down = ledger.round_totals(len(selected), receivers)

            mse, mae = {}, {}
            if _should_eval(cfg, t):
                for i, st in by_id.items():
                    mse[i], mae[i] = evaluate(st.model.params, st.data.test)
            report = RoundReport(
                round=t,
                method="fuels",
                selected=selected,
                losses={i: parts for i, (_, parts) in zip(selected, results)},
                mse=mse,
                mae=mae,
                uplink=up,
                downlink=down,
                pos_sizes={i: len(v) for i, v in server.pos_sets.items()},
                neg_sizes={i: len(v) for i, v in server.neg_sets.items()},
                beta=server.beta,
                jsd_recomputed=recomputed,
                wall_time=time.perf_counter() - start,
            )
            reports.append(report)
            if sink:
                sink.write(report.to_json() + "\n")
                sink.flush()
            if on_round is not None:
                on_round(report, server)
            log.info("round %d: mean mse %.4f beta %s", t, report.mean_mse, server.beta)
    except FuelsError:
        raise
    finally:
        if sink:
            sink.close()
    return reports


def final_metrics(reports: Sequence[RoundReport]) -> dict[int, tuple[float, float]]:
    for rep in reversed(reports):
        if rep.mse:
            return {i: (rep.mse[i], rep.mae[i]) for i in sorted(rep.mse)}
    raise ContractError("no evaluated round in reports")


def cluster_agreement(cache: np.ndarray, beta: float, clusters: Sequence[int]) -> float:
    """Fraction of client pairs where "divergence <= beta" matches same-cluster membership."""
    n = len(clusters)
    hits = total = 0
    for a in range(n):
        for b in range(a + 1, n):
            total += 1
            hits += (cache[a, b] <= beta) == (clusters[a] == clusters[b])
    return hits / total if total else 1.0
