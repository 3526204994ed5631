"""Prediction loss, intra-client and inter-client contrastive losses, and their combination.

Every loss takes graph nodes and returns a ``1x1`` node so the sum can be
differentiated in one sweep. :class:`IntraLossArtifacts` is the array-level entry
point used by tests and the filtering-matrix export.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Graph, Node
from .errors import DimensionError, ParameterError


def _check_tau(tau: float) -> None:
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")


def _diag(graph: Graph, m: Node) -> Node:
    """Diagonal of a square node as a column (mask, then row-sum)."""
    eye = graph.constant(np.eye(m.shape[0]))
    return (m * eye).sum(axis=1)


def similarity_matrix(graph: Graph, rep: Node, rep_aug: Node, tau: float) -> Node:
    """``SM[b, i] = exp(cos(rep[b], rep_aug[i]) / tau)``."""
    _check_tau(tau)
    if rep.shape != rep_aug.shape:
        raise DimensionError(f"representations differ in shape: {rep.shape} vs {rep_aug.shape}")
    return (rep.cosine(rep_aug) * (1.0 / tau)).exp()


def filter_negatives(graph: Graph, sm: Node, filt: Node) -> Node:
    """``Z = relu(SM * W)``; the surviving (true) negatives of row b are ``Z[b] > 0``."""
    if sm.shape != filt.shape or sm.shape[0] != sm.shape[1]:
        raise DimensionError(f"SM {sm.shape} and W {filt.shape} must be equal square shapes")
    return (sm * filt).relu()


def true_negatives(z: np.ndarray) -> list[set[int]]:
    return [set(np.flatnonzero(row > 0).tolist()) for row in np.asarray(z)]


def intra_loss(graph: Graph, sm: Node, z: Node) -> Node:
    """Mean over rows of ``-log(SM[b,b] / (SM[b,b] + sum_i Z[b,i]))``.

    Entries with ``Z == 0`` are exactly the non-members of the true-negative
    set, so summing the full row equals summing over that set. The self pair
    is not masked: if the learned filter lets ``Z[b,b] > 0`` it is counted.
    """
    pos = _diag(graph, sm)
    neg = z.sum(axis=1)
    return ((pos + neg).log() - pos.log()).mean()


def is_sentinel(proto) -> bool:
    """All-zero prototypes stand for "no global prototype received yet"."""
    return proto is None or not np.any(proto)


def inter_loss(graph: Graph, rep: Node, pos_proto, neg_proto, tau: float) -> Node:
    """Pull each row towards the positive prototype row and away from the negative one.

    A sentinel positive prototype skips the term (constant zero, no gradient).
    A sentinel negative prototype is used as is: its cosine is 0, so the
    negative score is the constant ``exp(0)`` and there is no repulsion.
    """
    _check_tau(tau)
    if is_sentinel(pos_proto):
        return graph.constant(0.0)
    pos_proto = np.asarray(pos_proto, dtype=np.float64)
    neg_proto = np.zeros_like(pos_proto) if neg_proto is None else np.asarray(neg_proto, dtype=np.float64)
    if pos_proto.shape != rep.shape or neg_proto.shape != rep.shape:
        raise DimensionError(
            f"prototypes {pos_proto.shape}/{neg_proto.shape} do not match representation {rep.shape}"
        )
    inv_tau = 1.0 / tau
    pos = (_diag(graph, rep.cosine(graph.constant(pos_proto))) * inv_tau).exp()
    neg = (_diag(graph, rep.cosine(graph.constant(neg_proto))) * inv_tau).exp()
    return ((pos + neg).log() - pos.log()).mean()


def pred_loss(graph: Graph, y, y_hat: Node) -> Node:
    """Squared error norm over the batch divided by the batch size."""
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    if y.shape != y_hat.shape:
        raise DimensionError(f"targets {y.shape} vs predictions {y_hat.shape}")
    diff = y_hat - graph.constant(y)
    return (diff * diff).mean()


@dataclass(frozen=True)
class LossBreakdown:
    pred: float
    intra: float
    inter: float
    total: float
    rho: float

    def as_dict(self) -> dict:
        return {"pred": self.pred, "intra": self.intra, "inter": self.inter, "total": self.total}


def total_loss(graph: Graph, pred: Node, intra: Node, inter: Node, rho: float) -> tuple[Node, LossBreakdown]:
    if rho < 0:
        raise ParameterError("rho must be >= 0")
    total = pred + intra + inter * float(rho)
    parts = LossBreakdown(pred.item(), intra.item(), inter.item(), total.item(), float(rho))
    return total, parts


@dataclass
class IntraLossArtifacts:
    sm: np.ndarray
    z: np.ndarray
    tn: list[set[int]]
    loss: float

    @classmethod
    def compute(cls, rep, rep_aug, filt, tau: float) -> IntraLossArtifacts:
        g = Graph()
        sm = similarity_matrix(g, g.constant(rep), g.constant(rep_aug), tau)
        z = filter_negatives(g, sm, g.constant(filt))
        loss = intra_loss(g, sm, z)
        return cls(sm.value, z.value, true_negatives(z.value), loss.item())


def intra_from_matrices(sm, z) -> float:
    """Intra loss from precomputed SM and Z arrays."""
    g = Graph()
    return intra_loss(g, g.constant(sm), g.constant(z)).item()


def inter_from_arrays(rep, pos_proto, neg_proto, tau: float) -> float:
    g = Graph()
    return inter_loss(g, g.constant(rep), pos_proto, neg_proto, tau).item()
