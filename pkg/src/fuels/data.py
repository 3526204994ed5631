"""Traffic series, sliding-window samples, augmentation, normalization and batching.

Time indices in this module are 0-based: a 1-based time stamp ``k``
corresponds to array position ``k - 1``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConstantSeriesError, ContractError, EmptyDatasetError, ParseError, SchemaError


@dataclass
class TrafficSeries:
    client_id: int
    values: np.ndarray
    period: int = 24
    # ground-truth cluster for synthetic data, -1 when unknown
    cluster: int = -1

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.period < 1:
            raise ContractError("period must be >= 1")

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class Sample:
    cv: tuple[float, ...]
    pv: tuple[float, ...]
    y: float
    index: int


@dataclass
class Windows:
    """Ordered sliding-window samples stored column-wise.

    ``index[j]`` is the 0-based position of sample ``j``'s target in ``values``.
    """

    cv: np.ndarray  # M x c
    pv: np.ndarray  # M x q
    y: np.ndarray  # M
    index: np.ndarray  # M
    values: np.ndarray = field(repr=False)
    c: int = 3
    q: int = 3
    p: int = 24
    shift: int = 0

    def __len__(self) -> int:
        return self.y.size

    def __iter__(self) -> Iterator[Sample]:
        for j in range(len(self)):
            yield self[j]

    def __getitem__(self, j: int) -> Sample:
        return Sample(tuple(self.cv[j]), tuple(self.pv[j]), float(self.y[j]), int(self.index[j]))

    def subset(self, mask) -> Windows:
        return Windows(
            self.cv[mask], self.pv[mask], self.y[mask], self.index[mask],
            self.values, self.c, self.q, self.p, self.shift,
        )


def _history_needed(c: int, q: int, p: int) -> int:
    return max(c, q * p)


def _build(values: np.ndarray, targets: np.ndarray, c: int, q: int, p: int, shift: int) -> Windows:
    # closeness lags c..1 and periodic lags qp..p, both oldest first
    close_lags = np.arange(c, 0, -1)
    period_lags = np.arange(q, 0, -1) * p
    base = targets - shift
    cv = values[base[:, None] - close_lags[None, :]]
    pv = values[base[:, None] - period_lags[None, :]]
    return Windows(cv, pv, values[targets].copy(), targets.copy(), values, c, q, p, shift)


def make_windows(values, c: int = 3, q: int = 3, p: int = 24, min_index: int = 0) -> Windows:
    """Build one sample per valid target position.

    Position ``j`` is valid when ``j >= max(c, q*p)`` (and ``j >= min_index``).
    """
    if c < 1 or q < 1 or p < 1:
        raise ContractError("c, q and p must all be >= 1")
    values = np.asarray(values, dtype=np.float64).ravel()
    first = max(_history_needed(c, q, p), min_index)
    if values.size <= first:
        raise EmptyDatasetError(
            f"series of length {values.size} too short for c={c}, q={q}, p={p}"
        )
    return _build(values, np.arange(first, values.size), c, q, p, 0)


def augment_temporal_shift(windows: Windows, shift: int = 1) -> tuple[Windows, Windows]:
    """Temporal-shift augmentation paired index-by-index with the raw samples.

    Each augmented sample keeps the raw target but reads its history ``shift``
    steps earlier. Raw samples whose shifted history would start before the
    series are dropped from both outputs, so ``raw[j]`` and ``aug[j]`` always
    describe the same target.
    """
    if shift < 0:
        raise ContractError("shift must be >= 0")
    first = _history_needed(windows.c, windows.q, windows.p) + shift
    keep = windows.index >= first
    if not keep.any():
        raise EmptyDatasetError(f"shift {shift} leaves no samples")
    raw = windows.subset(keep)
    aug = _build(windows.values, raw.index, windows.c, windows.q, windows.p, shift)
    return raw, aug


def generate_synthetic(
    n_clients: int,
    clusters: int,
    K: int,
    p: int = 24,
    seed: int = 0,
    noise: float = 0.1,
    offset_scale: float = 0.1,
    ar_coefs: Sequence[float] | None = None,
) -> list[TrafficSeries]:
    """Synthetic multi-client traffic with cluster-level daily patterns.

    Client ``i`` in cluster ``g`` observes::

        v[k] = a_g*sin(2*pi*k/p + phase_g) + b_g*sin(2*pi*k/(7p)) + c_i + eps[k]

    with phases spread evenly over the circle (0 and pi for two clusters).
    ``eps`` is AR(1) noise whose coefficient is a cluster property
    (``ar_coefs``); differing coefficients make the best one-step predictor
    differ between clusters. Clients are assigned to clusters round-robin.
    """
    if clusters < 1:
        raise ContractError("clusters must be >= 1")
    if n_clients < clusters:
        raise ContractError("need at least one client per cluster")
    if K < 2 or p < 1 or noise < 0:
        raise ContractError("invalid K, p or noise")
    if ar_coefs is None:
        ar_coefs = np.linspace(0.8, -0.4, clusters) if clusters > 1 else [0.8]
    if len(ar_coefs) != clusters:
        raise ContractError("ar_coefs needs one entry per cluster")
    rng = np.random.default_rng(seed)
    amp = 1.0 + 0.5 * np.arange(clusters)
    weekly = 0.3 + 0.2 * np.arange(clusters)[::-1]
    phase = 2.0 * np.pi * np.arange(clusters) / clusters
    k = np.arange(1, K + 1)
    out = []
    for i in range(n_clients):
        g = i % clusters
        offset = rng.uniform(-offset_scale, offset_scale)
        innov = rng.normal(0.0, noise, size=K)
        eps = np.empty(K)
        prev = 0.0
        for t in range(K):
            prev = ar_coefs[g] * prev + innov[t]
            eps[t] = prev
        v = (
            amp[g] * np.sin(2.0 * np.pi * k / p + phase[g])
            + weekly[g] * np.sin(2.0 * np.pi * k / (7 * p))
            + offset
            + eps
        )
        out.append(TrafficSeries(client_id=i, values=v, period=p, cluster=g))
    return out


@dataclass(frozen=True)
class NormStats:
    mean: float
    std: float

    def apply(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def invert(self, values):
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


def train_cutoff(K: int, train_fraction: float = 0.8) -> int:
    """First 0-based position belonging to the test split."""
    if not 0.0 < train_fraction < 1.0:
        raise ContractError("train_fraction must lie in (0, 1)")
    return int(math.floor(K * train_fraction))


def fit_norm(values, train_fraction: float = 0.8) -> NormStats:
    values = np.asarray(values, dtype=np.float64)
    head = values[: train_cutoff(values.size, train_fraction)]
    std = float(head.std())
    if not std > 0.0:
        raise ConstantSeriesError("training split is constant; cannot z-score")
    return NormStats(float(head.mean()), std)


def normalize(
    series: Sequence[TrafficSeries], train_fraction: float = 0.8
) -> tuple[list[TrafficSeries], dict[int, NormStats]]:
    """Per-client z-score using statistics of the chronological training split."""
    out, stats = [], {}
    for s in series:
        st = fit_norm(s.values, train_fraction)
        stats[s.client_id] = st
        out.append(TrafficSeries(s.client_id, st.apply(s.values), s.period, s.cluster))
    return out, stats


def denormalize(series: Sequence[TrafficSeries], stats: dict[int, NormStats]) -> list[TrafficSeries]:
    return [
        TrafficSeries(s.client_id, stats[s.client_id].invert(s.values), s.period, s.cluster)
        for s in series
    ]


@dataclass
class ClientData:
    """Everything a client trains and evaluates on, already normalized."""

    client_id: int
    train: Windows
    train_aug: Windows
    test: Windows
    stats: NormStats
    cluster: int = -1


def split_windows(windows: Windows, cutoff: int) -> tuple[Windows, Windows]:
    train = windows.index < cutoff
    return windows.subset(train), windows.subset(~train)


def prepare_client(
    series: TrafficSeries,
    c: int = 3,
    q: int = 3,
    shift: int = 1,
    train_fraction: float = 0.8,
) -> ClientData:
    stats = fit_norm(series.values, train_fraction)
    values = stats.apply(series.values)
    cutoff = train_cutoff(values.size, train_fraction)
    raw, aug = augment_temporal_shift(make_windows(values, c, q, series.period), shift)
    train, test = split_windows(raw, cutoff)
    train_aug = aug.subset(aug.index < cutoff)
    if len(train) == 0:
        raise EmptyDatasetError(f"client {series.client_id}: no training samples")
    if len(test) == 0:
        raise EmptyDatasetError(f"client {series.client_id}: no test samples")
    return ClientData(series.client_id, train, train_aug, test, stats, series.cluster)


@dataclass
class Batch:
    cv: np.ndarray  # B x c
    pv: np.ndarray  # B x q
    y: np.ndarray  # B

    def __len__(self) -> int:
        return self.y.size


def iter_batches(windows: Windows, batch_size: int) -> Iterator[Batch]:
    """Consecutive batches in time order; a trailing partial batch is dropped.

    Order is never shuffled: with ``batch_size == p`` row ``b`` of every batch
    then sits at the same phase of the cycle.
    """
    if batch_size < 1:
        raise ContractError("batch_size must be >= 1")
    for start in range(0, len(windows) - batch_size + 1, batch_size):
        sl = slice(start, start + batch_size)
        yield Batch(windows.cv[sl], windows.pv[sl], windows.y[sl])


def num_batches(windows: Windows, batch_size: int) -> int:
    return len(windows) // batch_size


# -- CSV ingestion ---------------------------------------------------------

CSV_HEADER = ("client_id", "timestamp", "value")


def _parse_timestamp(raw: str, line: int) -> float:
    raw = raw.strip()
    try:
        return float(int(raw))
    except ValueError:
        pass
    try:
        dt = datetime.fromisoformat(raw.replace("Z", "+00:00"))
    except ValueError:
        raise ParseError(f"bad timestamp {raw!r}", line) from None
    return dt.timestamp() / 3600.0


def ingest_csv(path, period: int = 24) -> list[TrafficSeries]:
    """Read ``client_id,timestamp,value`` rows into one series per client.

    Timestamps are integer epoch-hours or ISO-8601 strings. Every client must
    be sampled on a uniform grid with no gaps or duplicates.
    """
    rows: dict[int, list[tuple[float, float]]] = {}
    with open(Path(path), newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise SchemaError(f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}")
        for line, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != 3 or any(not cell.strip() for cell in row):
                raise ParseError(f"expected 3 non-empty fields, got {row!r}", line)
            try:
                cid = int(row[0])
            except ValueError:
                raise ParseError(f"bad client_id {row[0]!r}", line) from None
            ts = _parse_timestamp(row[1], line)
            try:
                val = float(row[2])
            except ValueError:
                raise ParseError(f"bad value {row[2]!r}", line) from None
            if not math.isfinite(val):
                raise ParseError(f"non-finite value {row[2]!r}", line)
            rows.setdefault(cid, []).append((ts, val))

    if not rows:
        raise EmptyDatasetError(f"{path}: no data rows")
    out = []
    for cid in sorted(rows):
        pts = sorted(rows[cid])
        ts = np.array([t for t, _ in pts])
        if ts.size > 1:
            steps = np.diff(ts)
            if (steps == 0).any():
                raise SchemaError(f"client {cid}: duplicate timestamp")
            if not np.allclose(steps, steps[0], rtol=0, atol=1e-9):
                raise SchemaError(f"client {cid}: non-uniform timestamp spacing")
        out.append(TrafficSeries(cid, np.array([v for _, v in pts]), period))
    return out


def write_csv(series: Sequence[TrafficSeries], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for s in series:
            for t, v in enumerate(s.values):
                w.writerow([s.client_id, t, repr(float(v))])
