"""Closeness/periodicity GRU encoder, linear decoder and the learnable filtering matrix."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Graph, Node
from .errors import ContractError, DimensionError

GATES = ("z", "r", "h")
ENCODERS = ("gru_c", "gru_p")
DECODER = ("dec.weight", "dec.bias")
FILTER = "filter.W"


def gru_param_names(prefix: str) -> list[str]:
    return [f"{prefix}.{kind}_{g}" for g in GATES for kind in ("W", "U", "b")]


ENCODER_NAMES = tuple(n for enc in ENCODERS for n in gru_param_names(enc))


@dataclass
class ClientModel:
    """Parameters of one client: encoder, decoder and filtering matrix, keyed by name."""

    params: dict[str, np.ndarray]
    hidden: int
    batch_size: int
    extra: dict = field(default_factory=dict)

    @property
    def rep_dim(self) -> int:
        return 2 * self.hidden

    def encoder_params(self) -> dict[str, np.ndarray]:
        return {n: self.params[n] for n in ENCODER_NAMES}

    def decoder_params(self) -> dict[str, np.ndarray]:
        return {n: self.params[n] for n in DECODER}

    def count(self, names=None) -> int:
        names = self.params.keys() if names is None else names
        return int(sum(self.params[n].size for n in names))

    def copy(self) -> ClientModel:
        return ClientModel({k: v.copy() for k, v in self.params.items()}, self.hidden, self.batch_size)

    def to_json(self) -> dict:
        return {
            "format": "fuels-checkpoint/1",
            "hidden": self.hidden,
            "batch_size": self.batch_size,
            "params": [
                {"name": n, "shape": list(v.shape), "data": v.ravel().tolist()}
                for n, v in self.params.items()
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> ClientModel:
        if doc.get("format") != "fuels-checkpoint/1":
            raise ContractError(f"unknown checkpoint format {doc.get('format')!r}")
        params = {}
        for entry in doc["params"]:
            shape = tuple(entry["shape"])
            arr = np.asarray(entry["data"], dtype=np.float64)
            if arr.size != math.prod(shape):
                raise DimensionError(f"{entry['name']}: {arr.size} values for shape {shape}")
            params[entry["name"]] = arr.reshape(shape)
        return cls(params, int(doc["hidden"]), int(doc["batch_size"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json()))

    @classmethod
    def load(cls, path) -> ClientModel:
        return cls.from_json(json.loads(Path(path).read_text()))


def init_filter(batch_size: int) -> np.ndarray:
    # every non-self pair starts as a true negative, self pairs start filtered
    w = np.ones((batch_size, batch_size))
    np.fill_diagonal(w, -1.0)
    return w


def init_model(hidden: int, batch_size: int, seed: int) -> ClientModel:
    if hidden < 1 or batch_size < 1:
        raise ContractError("hidden and batch_size must be >= 1")
    rng = np.random.default_rng(seed)
    bound = 1.0 / math.sqrt(hidden)
    params: dict[str, np.ndarray] = {}
    for enc in ENCODERS:
        for g in GATES:
            params[f"{enc}.W_{g}"] = rng.uniform(-bound, bound, size=(1, hidden))
            params[f"{enc}.U_{g}"] = rng.uniform(-bound, bound, size=(hidden, hidden))
            params[f"{enc}.b_{g}"] = rng.uniform(-bound, bound, size=(1, hidden))
    params["dec.weight"] = rng.uniform(-bound, bound, size=(2 * hidden, 1))
    params["dec.bias"] = rng.uniform(-bound, bound, size=(1, 1))
    params[FILTER] = init_filter(batch_size)
    return ClientModel(params, hidden, batch_size)


def bind(graph: Graph, params: dict[str, np.ndarray], trainable=()) -> dict[str, Node]:
    """Place parameters on ``graph``; only names in ``trainable`` receive gradients."""
    trainable = set(trainable)
    return {n: graph.leaf(v, name=n, requires_grad=n in trainable) for n, v in params.items()}


def gru_forward(graph: Graph, nodes: dict[str, Node], prefix: str, seq: np.ndarray) -> Node:
    """Final hidden state of a single-layer GRU run over the columns of ``seq`` (B x len).

    Uses h_t = (1 - z) * h_{t-1} + z * candidate with a zero initial state.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim != 2 or seq.shape[1] < 1:
        raise DimensionError(f"sequence batch must be B x len with len >= 1, got {seq.shape}")
    W = {g: nodes[f"{prefix}.W_{g}"] for g in GATES}
    U = {g: nodes[f"{prefix}.U_{g}"] for g in GATES}
    b = {g: nodes[f"{prefix}.b_{g}"] for g in GATES}
    if W["z"].shape[0] != 1:
        raise DimensionError("GRU input dimension must be 1")

    # h_0 = 0 makes the recurrent terms vanish on the first step
    x = graph.constant(seq[:, :1])
    z = (x @ W["z"] + b["z"]).sigmoid()
    cand = (x @ W["h"] + b["h"]).tanh()
    h = z * cand
    for t in range(1, seq.shape[1]):
        x = graph.constant(seq[:, t : t + 1])
        z = (x @ W["z"] + h @ U["z"] + b["z"]).sigmoid()
        r = (x @ W["r"] + h @ U["r"] + b["r"]).sigmoid()
        cand = (x @ W["h"] + (r * h) @ U["h"] + b["h"]).tanh()
        h = h + z * (cand - h)
    return h


def encode(graph: Graph, nodes: dict[str, Node], cv: np.ndarray, pv: np.ndarray) -> Node:
    """Representation B x 2h: closeness GRU output first, periodicity GRU output second."""
    if len(cv) != len(pv):
        raise DimensionError(f"cv has {len(cv)} rows but pv has {len(pv)}")
    hc = gru_forward(graph, nodes, "gru_c", cv)
    hp = gru_forward(graph, nodes, "gru_p", pv)
    return graph.apply("concat_cols", hc, hp)


def decode(graph: Graph, nodes: dict[str, Node], rep: Node) -> Node:
    """Predictions as a B x 1 column."""
    weight = nodes["dec.weight"]
    if rep.shape[1] != weight.shape[0]:
        raise DimensionError(f"representation has {rep.shape[1]} columns, decoder expects {weight.shape[0]}")
    return rep @ weight + nodes["dec.bias"]


def represent(params: dict[str, np.ndarray], cv: np.ndarray, pv: np.ndarray) -> np.ndarray:
    """Inference-only encoding (no gradients recorded)."""
    g = Graph()
    nodes = bind(g, {n: params[n] for n in ENCODER_NAMES})
    return encode(g, nodes, cv, pv).value


def predict(params: dict[str, np.ndarray], cv: np.ndarray, pv: np.ndarray) -> np.ndarray:
    g = Graph()
    nodes = bind(g, {n: params[n] for n in (*ENCODER_NAMES, *DECODER)})
    return decode(g, nodes, encode(g, nodes, cv, pv)).value.ravel()
