"""Client prototypes, Jensen-Shannon divergence between them, and privacy noise.

Wire format (also used for persistence), all little-endian::

    int64 client_id | int64 round | int64 rows | int64 cols | rows*cols float64 (row-major)
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ContractError, DimensionError, EmptyDatasetError, NumericError

LN2 = math.log(2.0)
_HEADER = struct.Struct("<qqqq")
NOISE_KINDS = ("laplace", "gaussian", "exponential")


@dataclass
class Prototype:
    matrix: np.ndarray
    client_id: int = -1
    round: int = 0

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.ndim != 2:
            raise DimensionError(f"prototype must be 2-D, got {self.matrix.shape}")
        if not np.isfinite(self.matrix).all():
            raise NumericError("prototype contains NaN or infinity")

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    @property
    def size(self) -> int:
        return self.matrix.size

    def to_bytes(self) -> bytes:
        rows, cols = self.matrix.shape
        body = np.ascontiguousarray(self.matrix, dtype="<f8").tobytes()
        return _HEADER.pack(self.client_id, self.round, rows, cols) + body

    @classmethod
    def from_bytes(cls, payload: bytes) -> Prototype:
        if len(payload) < _HEADER.size:
            raise ContractError("prototype payload shorter than its header")
        client_id, round_, rows, cols = _HEADER.unpack_from(payload)
        expected = _HEADER.size + 8 * rows * cols
        if rows < 0 or cols < 0 or len(payload) != expected:
            raise ContractError(f"prototype payload is {len(payload)} bytes, header implies {expected}")
        data = np.frombuffer(payload, dtype="<f8", offset=_HEADER.size).astype(np.float64)
        return cls(data.reshape(rows, cols), client_id, round_)


def _stack(reps: Sequence[np.ndarray]) -> np.ndarray:
    if len(reps) == 0:
        raise EmptyDatasetError("no batch representations to build a prototype from")
    shapes = {np.shape(r) for r in reps}
    if len(shapes) != 1:
        raise DimensionError(f"batch representations differ in shape: {sorted(shapes)}")
    return np.stack([np.asarray(r, dtype=np.float64) for r in reps])


def periodicity_prototype(reps: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise average of the per-batch representations (B x d_r)."""
    return _stack(reps).mean(axis=0)


def concat_prototype(reps: Sequence[np.ndarray]) -> np.ndarray:
    """Row-wise concatenation of the per-batch representations, in batch order."""
    return np.concatenate(_stack(reps), axis=0)


def prototype_to_distribution(proto) -> np.ndarray:
    """Softmax over the flattened prototype."""
    flat = np.asarray(proto, dtype=np.float64).ravel()
    if not np.isfinite(flat).all():
        raise NumericError("prototype contains NaN or infinity")
    e = np.exp(flat - flat.max())
    return e / e.sum()


def _kl_to_mixture(p: np.ndarray, m: np.ndarray) -> float:
    nz = p > 0
    return float(np.sum(p[nz] * np.log(p[nz] / m[nz])))


def jsd(p, q, atol: float = 1e-9) -> float:
    """Jensen-Shannon divergence in nats; symmetric and within [0, ln 2]."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise DimensionError(f"distributions differ in length: {p.size} vs {q.size}")
    for name, d in (("P", p), ("Q", q)):
        if (d < 0).any() or abs(d.sum() - 1.0) > atol:
            raise ContractError(f"{name} is not a probability distribution")
    m = 0.5 * (p + q)
    value = 0.5 * _kl_to_mixture(p, m) + 0.5 * _kl_to_mixture(q, m)
    return min(max(value, 0.0), LN2)


def prototype_jsd(a, b) -> float:
    return jsd(prototype_to_distribution(a), prototype_to_distribution(b))


def add_privacy_noise(proto, kind: str, scale: float, seed: int) -> np.ndarray:
    """Add i.i.d. noise with standard deviation ``scale`` to every entry.

    ``laplace`` and ``gaussian`` are zero-mean; ``exponential`` has mean
    (and standard deviation) ``scale``, so ``scale=1`` is Exp(rate=1).
    """
    if kind not in NOISE_KINDS:
        raise ContractError(f"noise kind must be one of {NOISE_KINDS}, got {kind!r}")
    if scale < 0:
        raise ContractError("noise scale must be >= 0")
    proto = np.asarray(proto, dtype=np.float64)
    if scale == 0:
        return proto.copy()
    rng = np.random.default_rng(seed)
    if kind == "gaussian":
        noise = rng.normal(0.0, scale, size=proto.shape)
    elif kind == "laplace":
        noise = rng.laplace(0.0, scale / math.sqrt(2.0), size=proto.shape)
    else:
        noise = rng.exponential(scale, size=proto.shape)
    return proto + noise
